//! Elementwise L2 projection between polynomial orders and its companion
//! interpolation back up.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

use super::basis::{gauss_rule, lagrange_values, lgl_nodes};
use super::mesh::{DgField, Mesh};

/// Per-element linear map between nodal spaces of two orders.
#[derive(Debug, Clone)]
pub struct Projection {
    pub from: usize,
    pub to: usize,
    /// Row-major `(to + 1) x (from + 1)`.
    pub matrix: Vec<f64>,
}

impl Projection {
    /// L2 projection from order `high` onto order `low < high`.
    pub fn l2(high: usize, low: usize) -> Result<Self> {
        if low >= high || low == 0 {
            return Err(Error::Invalid(format!(
                "projection target order {low} must be in 1..{high}"
            )));
        }
        let (nh, nl) = (high + 1, low + 1);
        let (xh, xl) = (lgl_nodes(high), lgl_nodes(low));
        let (qx, qw) = gauss_rule(2 * (high + 1));
        let bl: Vec<Vec<f64>> = qx.iter().map(|&x| lagrange_values(&xl, x)).collect();
        let bh: Vec<Vec<f64>> = qx.iter().map(|&x| lagrange_values(&xh, x)).collect();
        let mut ml = DMatrix::zeros(nl, nl);
        let mut rhs = DMatrix::zeros(nl, nh);
        for q in 0..qx.len() {
            for i in 0..nl {
                for j in 0..nl {
                    ml[(i, j)] += qw[q] * bl[q][i] * bl[q][j];
                }
                for j in 0..nh {
                    rhs[(i, j)] += qw[q] * bl[q][i] * bh[q][j];
                }
            }
        }
        let p = ml
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Invalid("singular low-order mass matrix".into()))?;
        Ok(Projection {
            from: high,
            to: low,
            matrix: (0..nl).flat_map(|i| (0..nh).map(move |j| (i, j))).map(|(i, j)| p[(i, j)]).collect(),
        })
    }

    /// Nodal interpolation of order-`low` polynomials at the order-`high` nodes.
    pub fn prolongation(low: usize, high: usize) -> Result<Self> {
        if low == 0 || high < low {
            return Err(Error::Invalid(format!("cannot prolong order {low} to {high}")));
        }
        let xl = lgl_nodes(low);
        let matrix = lgl_nodes(high).iter().flat_map(|&x| lagrange_values(&xl, x)).collect();
        Ok(Projection {
            from: low,
            to: high,
            matrix,
        })
    }

    /// Applies the map element by element to flat nodal values.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let (ni, no) = (self.from + 1, self.to + 1);
        let mut out = Vec::with_capacity(u.len() / ni * no);
        for ue in u.chunks_exact(ni) {
            for row in self.matrix.chunks_exact(ni) {
                out.push(row.iter().zip(ue).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    pub fn apply_trajectory(&self, tr: &Trajectory) -> Result<Trajectory> {
        let (ni, no) = (self.from + 1, self.to + 1);
        if tr.dim() % ni != 0 {
            return Err(Error::Dimension {
                expected: tr.dim() / ni * ni,
                got: tr.dim(),
            });
        }
        let mut out = tr.map_states(tr.dim() / ni * no, |s| self.apply(s))?;
        out.meta.insert("p".into(), self.to.to_string());
        Ok(out)
    }
}

/// `G u`: projection of `high` onto order `low` on the same elements.
pub fn filter_project(high: &DgField, low: usize) -> Result<DgField> {
    let proj = Projection::l2(high.mesh.p(), low)?;
    let mesh: Mesh = high.mesh.with_order(low)?;
    DgField::new(mesh, proj.apply(&high.coeffs))
}

/// Re-embeds a field in the space of order `high`.
pub fn prolong(low: &DgField, high: usize) -> Result<DgField> {
    let proj = Projection::prolongation(low.mesh.p(), high)?;
    let mesh = low.mesh.with_order(high)?;
    DgField::new(mesh, proj.apply(&low.coeffs))
}
