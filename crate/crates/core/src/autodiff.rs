//! Tape-based reverse-mode differentiation.
//!
//! Every node holds a row-major matrix value (`rows x cols`); a batch of
//! samples is a matrix with one sample per row, so a dense layer over the
//! whole batch is a single GEMM. External differentiable operators (the
//! physics right-hand sides) enter the tape through [`DiffMap`], which
//! supplies its own vector-Jacobian product and is applied row by row.
//!
//! ```
//! use subgrid_core::autodiff::{backward, record, Tensor};
//!
//! let theta = Tensor::row(vec![1.0, 2.0]);
//! let (loss, tape) = record(&[&theta], |tape, p| {
//!     let sq = tape.square(p[0]);
//!     Ok(tape.sum(sq))
//! })
//! .unwrap();
//! assert_eq!(loss, 5.0);
//! assert_eq!(backward(&tape).tensors[0].data, vec![2.0, 4.0]);
//! ```

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Layout};

/// A row-major matrix. Vectors are `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// A differentiable map `R^n -> R^m` applied independently to each row.
pub trait DiffMap: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Accumulates `J(x)^T g` into `gx`.
    fn vjp(&self, x: &[f64], g: &[f64], gx: &mut [f64]);
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Param(usize),
    Input,
    /// `y = x W^T` with `x: b x n`, `W: m x n`.
    MatMul { x: Var, w: Var },
    /// Adds a `1 x n` row to every row of `x`.
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(Var, f64)>),
    Relu(Var),
    Square(Var),
    Sum(Var),
    /// Column-wise concatenation.
    Concat(Vec<Var>),
    /// Column range of every row.
    Slice { x: Var, start: usize },
    Reshape(Var),
    Map { x: Var, f: Arc<dyn DiffMap> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input => "input",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::LinComb(_) => "lincomb",
            Op::Relu(_) => "relu",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Map { .. } => "map",
        }
    }
}

#[derive(Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Vec<f64>>,
    params: Vec<(usize, usize)>,
    loss: Option<Var>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params.len())
            .field("loss", &self.loss)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded primitives in order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn loss(&self) -> Option<Var> {
        self.loss
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> Var {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Input => false,
            other => inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        let value = eval_op(&op, rows, cols, &self.nodes, &self.values);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            needs_grad,
        });
        self.values.push(value);
        Var(self.nodes.len() - 1)
    }

    /// Registers the next parameter slot.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let slot = self.params.len();
        self.params.push((t.rows, t.cols));
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param(slot),
            rows: t.rows,
            cols: t.cols,
            needs_grad: true,
        });
        self.values.push(t.data.clone());
        v
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "input {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Input,
            rows,
            cols,
            needs_grad: false,
        });
        self.values.push(data);
        Ok(v)
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, n) = self.shape(x);
        let (m, wn) = self.shape(w);
        if n != wn {
            return Err(Error::Shape(format!("matmul: input has {n} columns, weight expects {wn}")));
        }
        Ok(self.push(Op::MatMul { x, w }, b, m))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(b) != (1, c) {
            return Err(Error::Shape(format!("add_bias: bias {:?} vs {c} columns", self.shape(b))));
        }
        Ok(self.push(Op::AddBias { x, b }, r, c))
    }

    fn same(&self, what: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(self.shape(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same("add", a, b)?;
        Ok(self.push(Op::Add(a, b), r, c))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), r, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, k) = self.shape(a);
        self.push(Op::Scale(a, c), r, k)
    }

    /// `sum_i c_i x_i` over same-shaped nodes.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Shape("lincomb of zero terms".into()))?;
        for t in &terms[1..] {
            self.same("lincomb", first.0, t.0)?;
        }
        let (r, c) = self.shape(first.0);
        Ok(self.push(Op::LinComb(terms.to_vec()), r, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.push(Op::Relu(a), r, c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.push(Op::Square(a), r, c)
    }

    /// Sum of all entries, a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a), 1, 1)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Shape("concat of zero parts".into()))?;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::Shape(format!("concat: {r} rows vs {rows}")));
            }
            cols += c;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), rows, cols))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(Error::Shape(format!("slice {start}..{} of {c} columns", start + len)));
        }
        Ok(self.push(Op::Slice { x, start }, r, len))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        Ok(self.push(Op::Reshape(x), rows, cols))
    }

    pub fn map(&mut self, x: Var, f: Arc<dyn DiffMap>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if c != f.in_dim() {
            return Err(Error::Shape(format!("map expects {} columns, got {c}", f.in_dim())));
        }
        let out = f.out_dim();
        Ok(self.push(Op::Map { x, f }, r, out))
    }

    /// Recomputes every node from the leaves.
    pub fn replay(&self) -> Vec<Vec<f64>> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Param(_) | Op::Input => self.values[i].clone(),
                ref op => eval_op(op, node.rows, node.cols, &self.nodes, &values),
            };
            values.push(v);
        }
        values
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Param(_) | Op::Input => vec![],
        Op::MatMul { x, w } => vec![*x, *w],
        Op::AddBias { x, b } => vec![*x, *b],
        Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Relu(a) | Op::Square(a) | Op::Sum(a) | Op::Reshape(a) => vec![*a],
        Op::LinComb(t) => t.iter().map(|(v, _)| *v).collect(),
        Op::Concat(p) => p.clone(),
        Op::Slice { x, .. } | Op::Map { x, .. } => vec![*x],
    }
}

fn eval_op(op: &Op, rows: usize, cols: usize, nodes: &[Node], values: &[Vec<f64>]) -> Vec<f64> {
    let val = |v: &Var| values[v.0].as_slice();
    match op {
        Op::Param(_) | Op::Input => unreachable!("leaves carry their own values"),
        Op::MatMul { x, w } => {
            let n = nodes[x.0].cols;
            let mut y = vec![0.0; rows * cols];
            gemm(
                1.0,
                val(x),
                Layout::row_major(rows, n),
                val(w),
                Layout::transposed(cols, n),
                0.0,
                &mut y,
                Layout::row_major(rows, cols),
            );
            y
        }
        Op::AddBias { x, b } => {
            let mut y = val(x).to_vec();
            let b = val(b);
            for row in y.chunks_exact_mut(cols) {
                for (yi, bi) in row.iter_mut().zip(b) {
                    *yi += bi;
                }
            }
            y
        }
        Op::Add(a, b) => val(a).iter().zip(val(b)).map(|(p, q)| p + q).collect(),
        Op::Sub(a, b) => val(a).iter().zip(val(b)).map(|(p, q)| p - q).collect(),
        Op::Scale(a, c) => val(a).iter().map(|p| c * p).collect(),
        Op::LinComb(terms) => {
            let (v0, c0) = terms[0];
            let mut y: Vec<f64> = val(&v0).iter().map(|p| c0 * p).collect();
            for (v, c) in &terms[1..] {
                for (yi, p) in y.iter_mut().zip(val(v)) {
                    *yi += c * p;
                }
            }
            y
        }
        Op::Relu(a) => val(a).iter().map(|&p| if p > 0.0 { p } else { 0.0 }).collect(),
        Op::Square(a) => val(a).iter().map(|p| p * p).collect(),
        Op::Sum(a) => vec![val(a).iter().sum()],
        Op::Concat(parts) => {
            let mut y = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    let c = nodes[p.0].cols;
                    y.extend_from_slice(&val(p)[r * c..(r + 1) * c]);
                }
            }
            y
        }
        Op::Slice { x, start } => {
            let c = nodes[x.0].cols;
            let src = val(x);
            let mut y = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                y.extend_from_slice(&src[r * c + start..r * c + start + cols]);
            }
            y
        }
        Op::Reshape(a) => val(a).to_vec(),
        Op::Map { x, f } => {
            let n = nodes[x.0].cols;
            let src = val(x);
            let mut y = vec![0.0; rows * cols];
            for (xr, yr) in src.chunks_exact(n).zip(y.chunks_exact_mut(cols)) {
                f.apply(xr, yr);
            }
            y
        }
    }
}

/// Gradient of a scalar loss with respect to every parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub tensors: Vec<Tensor>,
}

impl Gradient {
    pub fn zeros_like(shapes: &[(usize, usize)]) -> Self {
        Gradient {
            loss: 0.0,
            tensors: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// Adds `other` entrywise (including the loss).
    pub fn accumulate(&mut self, other: &Gradient) {
        self.loss += other.loss;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.loss *= c;
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= c;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

/// Runs `build` on a fresh tape with one parameter leaf per tensor; the
/// returned node must be `1 x 1`.
pub fn record<F>(params: &[&Tensor], build: F) -> Result<(f64, Tape)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.shape(loss) != (1, 1) {
        return Err(Error::Shape(format!("loss must be a scalar, got {:?}", tape.shape(loss))));
    }
    tape.loss = Some(loss);
    Ok((tape.value(loss)[0], tape))
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Propagates `d loss / d node` backwards through the tape.
///
/// Panics if the tape was not produced by [`record`].
pub fn backward(tape: &Tape) -> Gradient {
    let loss = tape.loss.expect("backward needs a tape produced by record()");
    let mut out = Gradient::zeros_like(&tape.params);
    out.loss = tape.value(loss)[0];
    let n = tape.nodes.len();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
    grads[loss.0] = Some(vec![1.0]);

    for i in (0..=loss.0).rev() {
        let node = &tape.nodes[i];
        if !node.needs_grad {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        let len_of = |v: &Var| tape.nodes[v.0].rows * tape.nodes[v.0].cols;
        let needs = |v: &Var| tape.nodes[v.0].needs_grad;
        match &node.op {
            Op::Param(slot) => {
                for (x, y) in out.tensors[*slot].data.iter_mut().zip(&g) {
                    *x += y;
                }
            }
            Op::Input => {}
            Op::MatMul { x, w } => {
                let (b, m) = (node.rows, node.cols);
                let k = tape.nodes[x.0].cols;
                if needs(x) {
                    let gx = grad_buf(&mut grads, *x, b * k);
                    gemm(
                        1.0,
                        &g,
                        Layout::row_major(b, m),
                        tape.value(*w),
                        Layout::row_major(m, k),
                        1.0,
                        gx,
                        Layout::row_major(b, k),
                    );
                }
                if needs(w) {
                    let gw = grad_buf(&mut grads, *w, m * k);
                    gemm(
                        1.0,
                        &g,
                        Layout::transposed(b, m),
                        tape.value(*x),
                        Layout::row_major(b, k),
                        1.0,
                        gw,
                        Layout::row_major(m, k),
                    );
                }
            }
            Op::AddBias { x, b } => {
                if needs(x) {
                    add_into(grad_buf(&mut grads, *x, g.len()), &g, 1.0);
                }
                if needs(b) {
                    let gb = grad_buf(&mut grads, *b, node.cols);
                    for row in g.chunks_exact(node.cols) {
                        add_into(gb, row, 1.0);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(a) {
                    add_into(grad_buf(&mut grads, *a, g.len()), &g, 1.0);
                }
                if needs(b) {
                    add_into(grad_buf(&mut grads, *b, g.len()), &g, sign);
                }
            }
            Op::Scale(a, c) => {
                if needs(a) {
                    add_into(grad_buf(&mut grads, *a, g.len()), &g, *c);
                }
            }
            Op::LinComb(terms) => {
                for (v, c) in terms {
                    if needs(v) {
                        add_into(grad_buf(&mut grads, *v, g.len()), &g, *c);
                    }
                }
            }
            Op::Relu(a) => {
                if needs(a) {
                    let x = tape.value(*a);
                    let ga = grad_buf(&mut grads, *a, g.len());
                    for ((gi, xi), go) in ga.iter_mut().zip(x).zip(&g) {
                        if *xi > 0.0 {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Square(a) => {
                if needs(a) {
                    let x = tape.value(*a);
                    let ga = grad_buf(&mut grads, *a, g.len());
                    for ((gi, xi), go) in ga.iter_mut().zip(x).zip(&g) {
                        *gi += 2.0 * xi * go;
                    }
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let len = len_of(a);
                    for gi in grad_buf(&mut grads, *a, len).iter_mut() {
                        *gi += g[0];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let c = tape.nodes[p.0].cols;
                    if needs(p) {
                        let len = len_of(p);
                        let gp = grad_buf(&mut grads, *p, len);
                        for r in 0..node.rows {
                            let src = &g[r * node.cols + offset..r * node.cols + offset + c];
                            add_into(&mut gp[r * c..(r + 1) * c], src, 1.0);
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                if needs(x) {
                    let c = tape.nodes[x.0].cols;
                    let len = len_of(x);
                    let gx = grad_buf(&mut grads, *x, len);
                    for r in 0..node.rows {
                        let dst = &mut gx[r * c + start..r * c + start + node.cols];
                        add_into(dst, &g[r * node.cols..(r + 1) * node.cols], 1.0);
                    }
                }
            }
            Op::Reshape(a) => {
                if needs(a) {
                    add_into(grad_buf(&mut grads, *a, g.len()), &g, 1.0);
                }
            }
            Op::Map { x, f } => {
                if needs(x) {
                    let k = tape.nodes[x.0].cols;
                    let xv = tape.value(*x);
                    let len = len_of(x);
                    let gx = grad_buf(&mut grads, *x, len);
                    for ((xr, gr), gxr) in xv
                        .chunks_exact(k)
                        .zip(g.chunks_exact(node.cols))
                        .zip(gx.chunks_exact_mut(k))
                    {
                        f.vjp(xr, gr, gxr);
                    }
                }
            }
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    if c == 1.0 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += c * s;
        }
    }
}

/// Relative discrepancy used by [`grad_check`].
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-12)
}

/// Per-entry comparison of a reverse-mode gradient against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(slot, index, ad, fd)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Maximum over all parameter entries of `|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(params: &[&Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    Ok(grad_check_report(params, h, None, build)?.max_rel_err)
}

/// Like [`grad_check`], optionally restricted to `subset` of `(slot, index)` entries.
pub fn grad_check_report<F>(
    params: &[&Tensor],
    h: f64,
    subset: Option<&[(usize, usize)]>,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("perturbation must be positive, got {h}")));
    }
    let (_, tape) = record(params, &build)?;
    let grad = backward(&tape);
    let entries: Vec<(usize, usize)> = match subset {
        Some(s) => s.to_vec(),
        None => params
            .iter()
            .enumerate()
            .flat_map(|(s, t)| (0..t.len()).map(move |i| (s, i)))
            .collect(),
    };
    let owned: Vec<Tensor> = params.iter().map(|t| (*t).clone()).collect();
    let results: Vec<Result<(usize, usize, f64, f64)>> = entries
        .par_iter()
        .map_init(
            || owned.clone(),
            |work, &(slot, idx)| {
                let base = work[slot].data[idx];
                work[slot].data[idx] = base + h;
                let plus = eval_loss(work, &build);
                work[slot].data[idx] = base - h;
                let minus = eval_loss(work, &build);
                work[slot].data[idx] = base;
                let fd = (plus? - minus?) / (2.0 * h);
                Ok((slot, idx, grad.tensors[slot].data[idx], fd))
            },
        )
        .collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for r in results {
        let (slot, idx, ad, fd) = r?;
        report.checked += 1;
        let e = relative_error(ad, fd);
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            if e >= report.max_rel_err {
                report.worst = Some((slot, idx, ad, fd));
            }
        }
    }
    Ok(report)
}

fn eval_loss<F>(params: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let refs: Vec<&Tensor> = params.iter().collect();
    record(&refs, build).map(|(l, _)| l)
}
