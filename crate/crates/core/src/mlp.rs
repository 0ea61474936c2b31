//! The multilayer perceptron used as the learned source term.
//!
//! Architecture: `d_in -> 128 -> 128 -> 128 -> d_out`, ReLU after every
//! hidden layer, linear output. Parameters are stored as tape tensors in
//! slot order `W1, b1, W2, b2, ...` with `W_l` of shape `out x in` and `b_l`
//! a `1 x out` row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, matvec, Layout};
use crate::trajectory::{read_exact, read_u32, read_u64};

pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 3;
pub const PARAMS_MAGIC: &[u8; 4] = b"SGNP";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub seed: u64,
}

impl MlpParams {
    /// Standard architecture with Glorot-uniform weights and zero biases.
    pub fn init(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(d_in, &[HIDDEN_WIDTH; HIDDEN_LAYERS], d_out, seed)
    }

    pub fn with_hidden(d_in: usize, hidden: &[usize], d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 || hidden.contains(&0) {
            return Err(Error::Invalid("network layer widths must be at least 1".into()));
        }
        let mut dims = vec![d_in];
        dims.extend_from_slice(hidden);
        dims.push(d_out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Tensor {
                rows: fan_out,
                cols: fan_in,
                data,
            });
            biases.push(Tensor::zeros(1, fan_out));
        }
        Ok(MlpParams {
            weights,
            biases,
            seed,
        })
    }

    /// Same shapes with every entry zero, so the network outputs zero.
    pub fn zeroed(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        MlpParams {
            weights: self.weights.iter().map(z).collect(),
            biases: self.biases.iter().map(z).collect(),
            seed: self.seed,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights[0].cols
    }

    pub fn d_out(&self) -> usize {
        self.weights.last().map_or(0, |w| w.rows)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// `(d_in, hidden..., d_out)`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.d_in()];
        dims.extend(self.weights.iter().map(|w| w.rows));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    /// Tensors in tape slot order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Shapes in tape slot order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| (t.rows, t.cols)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.biases.len() || self.weights.is_empty() {
            return Err(Error::Shape("network needs one bias per weight matrix".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.data.len() != w.rows * w.cols || b.rows != 1 || b.cols != w.rows {
                return Err(Error::Shape(format!("layer {l} has inconsistent weight/bias shapes")));
            }
            if l > 0 && w.cols != self.weights[l - 1].rows {
                return Err(Error::Shape(format!(
                    "layer {l} expects {} inputs but layer {} has {} outputs",
                    w.cols,
                    l - 1,
                    self.weights[l - 1].rows
                )));
            }
        }
        if self.tensors().iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::Invalid("network parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Errors unless the network maps `d_in -> d_out`.
    pub fn expect_dims(&self, d_in: usize, d_out: usize) -> Result<()> {
        if self.d_in() != d_in || self.d_out() != d_out {
            return Err(Error::Shape(format!(
                "network maps {} -> {} but the model needs {} -> {}",
                self.d_in(),
                self.d_out(),
                d_in,
                d_out
            )));
        }
        Ok(())
    }

    /// Evaluates the network on one input vector.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.d_in() {
            return Err(Error::Dimension {
                expected: self.d_in(),
                got: u.len(),
            });
        }
        let mut x = u.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = b.data.clone();
            let mut wx = vec![0.0; w.rows];
            matvec(&w.data, w.rows, w.cols, &x, &mut wx);
            for (yi, v) in y.iter_mut().zip(&wx) {
                *yi += v;
            }
            if l + 1 < self.n_layers() {
                relu_in_place(&mut y);
            }
            x = y;
        }
        Ok(x)
    }

    /// Evaluates the network on `rows` inputs stored row-major in `x`.
    pub fn forward_batch(&self, rows: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != rows * self.d_in() {
            return Err(Error::Dimension {
                expected: rows * self.d_in(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = Vec::with_capacity(rows * w.rows);
            for _ in 0..rows {
                y.extend_from_slice(&b.data);
            }
            gemm(
                1.0,
                &cur,
                Layout::row_major(rows, w.cols),
                &w.data,
                Layout::transposed(w.rows, w.cols),
                1.0,
                &mut y,
                Layout::row_major(rows, w.rows),
            );
            if l + 1 < self.n_layers() {
                relu_in_place(&mut y);
            }
            cur = y;
        }
        Ok(cur)
    }

    /// Post-ReLU activations of every hidden layer.
    pub fn hidden_activations(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        if u.len() != self.d_in() {
            return Err(Error::Dimension {
                expected: self.d_in(),
                got: u.len(),
            });
        }
        let mut out = Vec::new();
        let mut x = u.to_vec();
        for (w, b) in self.weights.iter().zip(&self.biases).take(self.n_layers() - 1) {
            let mut y = vec![0.0; w.rows];
            matvec(&w.data, w.rows, w.cols, &x, &mut y);
            for (yi, bi) in y.iter_mut().zip(&b.data) {
                *yi += bi;
            }
            relu_in_place(&mut y);
            out.push(y.clone());
            x = y;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_layers() as u32).to_le_bytes())?;
        for (wt, b) in self.weights.iter().zip(&self.biases) {
            w.write_all(&(wt.rows as u32).to_le_bytes())?;
            w.write_all(&(wt.cols as u32).to_le_bytes())?;
            for x in &wt.data {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&(b.cols as u32).to_le_bytes())?;
            for x in &b.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::Corrupt("not a parameter file (bad magic)".into()));
        }
        let version = read_u32(r, "version")?;
        if version != PARAMS_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PARAMS_VERSION,
            });
        }
        let n_layers = read_u32(r, "layer count")? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Corrupt(format!("implausible layer count {n_layers}")));
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let rows = read_u32(r, "weight rows")? as usize;
            let cols = read_u32(r, "weight cols")? as usize;
            let data = read_f64s(r, rows * cols, "weights")?;
            let blen = read_u32(r, "bias length")? as usize;
            if blen != rows {
                return Err(Error::Shape(format!("layer {l}: bias length {blen} vs {rows} rows")));
            }
            let bias = read_f64s(r, blen, "bias")?;
            weights.push(Tensor { rows, cols, data });
            biases.push(Tensor::row(bias));
        }
        let seed = read_u64(r, "seed")?;
        let p = MlpParams {
            weights,
            biases,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

/// Records the network on `x` (`batch x d_in`), given the parameter leaves
/// in slot order.
pub fn mlp_on_tape(tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
    if params.len() % 2 != 0 || params.is_empty() {
        return Err(Error::Shape(format!("expected weight/bias pairs, got {} leaves", params.len())));
    }
    let n_layers = params.len() / 2;
    let mut h = x;
    for l in 0..n_layers {
        h = tape.matmul(h, params[2 * l])?;
        h = tape.add_bias(h, params[2 * l + 1])?;
        if l + 1 < n_layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
