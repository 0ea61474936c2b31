//! Reference-element ingredients: Legendre polynomials, LGL nodes, Gauss
//! quadrature and the nodal Lagrange basis on `[-1, 1]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        let d2 = d0 + (2.0 * kf - 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// The `p + 1` Legendre–Gauss–Lobatto nodes in ascending order.
pub fn lgl_nodes(p: usize) -> Vec<f64> {
    assert!(p >= 1, "LGL nodes need p >= 1");
    let n = p;
    // Newton on (1 - x^2) P_n'(x) via x P_n - P_{n-1}, Chebyshev-Lobatto start.
    let mut x: Vec<f64> = (0..=n)
        .map(|i| (std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    for _ in 0..100 {
        let mut delta = 0.0f64;
        for xi in x.iter_mut() {
            let (pn, _) = legendre(n, *xi);
            let (pn1, _) = legendre(n - 1, *xi);
            let step = (*xi * pn - pn1) / ((n + 1) as f64 * pn);
            *xi -= step;
            delta = delta.max(step.abs());
        }
        if delta < 1e-16 {
            break;
        }
    }
    x.reverse();
    x[0] = -1.0;
    x[n] = 1.0;
    // exact symmetry
    for i in 0..(n + 1) / 2 {
        let s = 0.5 * (x[n - i] - x[i]);
        x[i] = -s;
        x[n - i] = s;
    }
    if n % 2 == 0 {
        x[n / 2] = 0.0;
    }
    x
}

/// Gauss–Legendre rule with `q` points, ascending.
pub fn gauss_rule(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(q, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(q, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Values of every Lagrange basis polynomial on `nodes` at `x`.
pub fn lagrange_values(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            (0..n)
                .filter(|&m| m != j)
                .map(|m| (x - nodes[m]) / (nodes[j] - nodes[m]))
                .product()
        })
        .collect()
}

/// Derivatives of every Lagrange basis polynomial on `nodes` at `x`.
pub fn lagrange_derivatives(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            (0..n)
                .filter(|&k| k != j)
                .map(|k| {
                    let rest: f64 = (0..n)
                        .filter(|&m| m != j && m != k)
                        .map(|m| (x - nodes[m]) / (nodes[j] - nodes[m]))
                        .product();
                    rest / (nodes[j] - nodes[k])
                })
                .sum()
        })
        .collect()
}

/// Row-major `rows x cols` matrix of basis values at `points`.
fn sample(nodes: &[f64], points: &[f64], f: fn(&[f64], f64) -> Vec<f64>) -> Vec<f64> {
    points.iter().flat_map(|&x| f(nodes, x)).collect()
}

/// Precomputed operators of the order-`p` nodal reference element.
#[derive(Debug, Clone)]
pub struct RefElement {
    pub p: usize,
    pub nodes: Vec<f64>,
    pub qx: Vec<f64>,
    pub qw: Vec<f64>,
    /// `Q x n` basis values at the quadrature points.
    pub b: Vec<f64>,
    /// `Q x n` basis derivatives at the quadrature points.
    pub bd: Vec<f64>,
    /// `n x n` reference mass matrix.
    pub mass: Vec<f64>,
    pub mass_inv: Vec<f64>,
    /// `n x Q`: `M^-1 B^T W`.
    pub minv_bt_w: Vec<f64>,
    /// `n x n`: `M^-1 B^T W Bd`.
    pub minv_s: Vec<f64>,
    /// Columns `M^-1 e_0` and `M^-1 e_p`.
    pub m0: Vec<f64>,
    pub mp: Vec<f64>,
}

impl RefElement {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Invalid("polynomial order must be at least 1".into()));
        }
        let nodes = lgl_nodes(p);
        let (qx, qw) = gauss_rule(2 * (p + 1));
        let n = p + 1;
        let nq = qx.len();
        let b = sample(&nodes, &qx, lagrange_values);
        let mut bd = sample(&nodes, &qx, lagrange_derivatives);
        // Rows of Bd must sum to zero so that constants have zero derivative.
        for r in 0..nq {
            let rest: f64 = bd[r * n + 1..(r + 1) * n].iter().sum();
            bd[r * n] = -rest;
        }
        let mass = weighted_product(&b, &b, &qw, nq, n);
        let m = DMatrix::from_row_slice(n, n, &mass);
        let minv = m
            .try_inverse()
            .ok_or_else(|| Error::Invalid(format!("singular mass matrix at order {p}")))?;
        let mass_inv: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| minv[(i, j)]).collect();
        let mut minv_bt_w = vec![0.0; n * nq];
        for i in 0..n {
            for q in 0..nq {
                minv_bt_w[i * nq + q] = (0..n).map(|k| mass_inv[i * n + k] * b[q * n + k]).sum::<f64>() * qw[q];
            }
        }
        let mut minv_s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                minv_s[i * n + j] = (0..nq).map(|q| minv_bt_w[i * nq + q] * bd[q * n + j]).sum();
            }
        }
        let m0 = (0..n).map(|i| mass_inv[i * n]).collect();
        let mp = (0..n).map(|i| mass_inv[i * n + p]).collect();
        Ok(RefElement {
            p,
            nodes,
            qx,
            qw,
            b,
            bd,
            mass,
            mass_inv,
            minv_bt_w,
            minv_s,
            m0,
            mp,
        })
    }

    pub fn n(&self) -> usize {
        self.p + 1
    }

    pub fn nq(&self) -> usize {
        self.qx.len()
    }

    /// Values of the element polynomial with nodal values `u` at the quadrature points.
    pub fn at_quad(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        self.b.chunks_exact(n).map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    }
}

/// `A^T diag(w) C` for `Q x n` row-major `A`, `C`.
fn weighted_product(a: &[f64], c: &[f64], w: &[f64], nq: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for q in 0..nq {
        for i in 0..n {
            let ai = a[q * n + i] * w[q];
            for j in 0..n {
                out[i * n + j] += ai * c[q * n + j];
            }
        }
    }
    out
}
