use std::sync::Arc;

use crate::error::{Error, Result};

use super::basis::{lagrange_values, RefElement};

/// Uniform periodic partition of `[x0, x1]` into elements of order `p`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub n_elem: usize,
    pub x0: f64,
    pub x1: f64,
    re: Arc<RefElement>,
}

impl Mesh {
    pub fn new(n_elem: usize, x0: f64, x1: f64, p: usize) -> Result<Self> {
        if n_elem == 0 {
            return Err(Error::Invalid("mesh needs at least one element".into()));
        }
        if !(x1 > x0) {
            return Err(Error::Invalid(format!("empty domain [{x0}, {x1}]")));
        }
        Ok(Mesh {
            n_elem,
            x0,
            x1,
            re: Arc::new(RefElement::new(p)?),
        })
    }

    /// Same partition at another polynomial order.
    pub fn with_order(&self, p: usize) -> Result<Self> {
        Mesh::new(self.n_elem, self.x0, self.x1, p)
    }

    pub fn reference(&self) -> &RefElement {
        &self.re
    }

    pub fn p(&self) -> usize {
        self.re.p
    }

    /// Nodes per element.
    pub fn n(&self) -> usize {
        self.re.p + 1
    }

    pub fn dofs(&self) -> usize {
        self.n_elem * self.n()
    }

    pub fn length(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn h(&self) -> f64 {
        self.length() / self.n_elem as f64
    }

    /// `dx / dxi = h / 2`.
    pub fn jacobian(&self) -> f64 {
        0.5 * self.h()
    }

    pub fn element_left(&self, e: usize) -> f64 {
        self.x0 + e as f64 * self.h()
    }

    pub fn node_x(&self, e: usize, i: usize) -> f64 {
        self.element_left(e) + self.jacobian() * (self.re.nodes[i] + 1.0)
    }

    /// Physical coordinates of all nodes, element-major.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_elem)
            .flat_map(|e| (0..self.n()).map(move |i| (e, i)))
            .map(|(e, i)| self.node_x(e, i))
            .collect()
    }

    /// Smallest physical distance between neighbouring LGL nodes.
    pub fn min_spacing(&self) -> f64 {
        let min_ref = self
            .re
            .nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        self.jacobian() * min_ref
    }

    pub fn same_layout(&self, other: &Mesh) -> bool {
        self.n_elem == other.n_elem && self.p() == other.p() && self.x0 == other.x0 && self.x1 == other.x1
    }

    /// Nodal interpolation of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.coords().into_iter().map(f).collect()
    }

    /// Element index and reference coordinate of `x` (periodically wrapped).
    /// Points on an interface belong to the element on their right.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let l = self.length();
        let s = (x - self.x0).rem_euclid(l) / self.h();
        let e = (s.floor() as usize).min(self.n_elem - 1);
        let xi = 2.0 * (s - e as f64) - 1.0;
        (e, xi.clamp(-1.0, 1.0))
    }

    /// Value of the piecewise polynomial `u` at `x`.
    pub fn eval(&self, u: &[f64], x: f64) -> f64 {
        let (e, xi) = self.locate(x);
        let n = self.n();
        lagrange_values(&self.re.nodes, xi)
            .iter()
            .zip(&u[e * n..(e + 1) * n])
            .map(|(l, v)| l * v)
            .sum()
    }

    /// `int u dx` by quadrature.
    pub fn integral(&self, u: &[f64]) -> f64 {
        let j = self.jacobian();
        u.chunks_exact(self.n())
            .map(|ue| {
                self.re
                    .at_quad(ue)
                    .iter()
                    .zip(&self.re.qw)
                    .map(|(v, w)| v * w)
                    .sum::<f64>()
                    * j
            })
            .sum()
    }

    /// Broken L2 norm `(sum_I ||u||_I^2)^(1/2)`.
    pub fn norm(&self, u: &[f64]) -> f64 {
        let j = self.jacobian();
        u.chunks_exact(self.n())
            .map(|ue| {
                self.re
                    .at_quad(ue)
                    .iter()
                    .zip(&self.re.qw)
                    .map(|(v, w)| w * v * v)
                    .sum::<f64>()
                    * j
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dofs() {
            return Err(Error::Dimension {
                expected: self.dofs(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Metadata describing the discretisation.
    pub fn meta(&self) -> Vec<(&'static str, String)> {
        vec![
            ("p", self.p().to_string()),
            ("n_elem", self.n_elem.to_string()),
            ("domain", format!("{},{}", self.x0, self.x1)),
        ]
    }
}

/// Nodal coefficients of a piecewise polynomial on a mesh.
#[derive(Debug, Clone)]
pub struct DgField {
    pub mesh: Mesh,
    pub coeffs: Vec<f64>,
}

impl DgField {
    pub fn new(mesh: Mesh, coeffs: Vec<f64>) -> Result<Self> {
        mesh.check_len(&coeffs)?;
        Ok(DgField { mesh, coeffs })
    }

    pub fn from_fn(mesh: Mesh, f: impl Fn(f64) -> f64) -> Self {
        let coeffs = mesh.interpolate(f);
        DgField { mesh, coeffs }
    }

    pub fn norm(&self) -> f64 {
        self.mesh.norm(&self.coeffs)
    }
}

/// `||a||_DG`.
pub fn dg_norm(field: &DgField) -> f64 {
    field.norm()
}

/// `||a - b||_DG`; the fields must share a mesh.
pub fn dg_error(a: &DgField, b: &DgField) -> Result<f64> {
    if !a.mesh.same_layout(&b.mesh) {
        return Err(Error::Shape(format!(
            "fields live on different meshes ({} elements at p={} vs {} at p={})",
            a.mesh.n_elem,
            a.mesh.p(),
            b.mesh.n_elem,
            b.mesh.p()
        )));
    }
    let diff: Vec<f64> = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect();
    Ok(a.mesh.norm(&diff))
}
