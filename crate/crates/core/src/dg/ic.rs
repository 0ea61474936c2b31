//! Initial conditions for the two PDE experiments.

use std::f64::consts::PI;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mesh::{DgField, Mesh};

/// Wavenumbers of the four-mode convection-diffusion signal.
pub const CD_MODES: [f64; 4] = [20.0, 4.0, 6.0, 7.0];

/// `u(x) = sum_i sin(2 pi alpha_i (x - phase))`, interpolated at the nodes.
pub fn cd_initial_condition(mesh: &Mesh, phase: f64) -> DgField {
    DgField::from_fn(mesh.clone(), |x| {
        CD_MODES.iter().map(|a| (2.0 * PI * a * (x - phase)).sin()).sum()
    })
}

/// Random-phase field with spectrum `E(k) = A0 k^4 exp(-(k/k0)^2)`,
/// `A0 = 2 k0^-5 / (3 sqrt(pi))`, on `n` uniform points over `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgulenceSpec {
    pub k0: f64,
    pub n: usize,
    pub seed: u64,
}

impl BurgulenceSpec {
    pub fn energy(&self, k: f64) -> f64 {
        let a0 = 2.0 * self.k0.powi(-5) / (3.0 * PI.sqrt());
        a0 * k.powi(4) * (-(k / self.k0).powi(2)).exp()
    }

    fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 16 {
            return Err(Error::Invalid(format!("grid size {} must be a power of two >= 16", self.n)));
        }
        if !(self.k0 > 0.0) {
            return Err(Error::Invalid(format!("peak wavenumber must be positive, got {}", self.k0)));
        }
        Ok(())
    }

    /// Hermitian coefficients `N sqrt(E(k)) exp(2 pi i phi_k)`, so the modes
    /// `+-k` together carry `E(k)` and `(1/2N) sum u^2 = sum_k E(k)`.
    pub fn coefficients(&self) -> Result<Vec<Complex64>> {
        self.validate()?;
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phase = Uniform::new(0.0, 1.0);
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for k in 1..n / 2 {
            let amp = n as f64 * self.energy(k as f64).sqrt();
            let phi: f64 = phase.sample(&mut rng);
            let ck = Complex64::from_polar(amp, 2.0 * PI * phi);
            c[k] = ck;
            c[n - k] = ck.conj();
        }
        Ok(c)
    }

    /// Real signal `u_j = (1/N) sum_k c_k exp(i k x_j)`, `x_j = 2 pi j / N`.
    pub fn signal(&self) -> Result<Vec<f64>> {
        let mut c = self.coefficients()?;
        FftPlanner::new().plan_fft_inverse(self.n).process(&mut c);
        let inv = 1.0 / self.n as f64;
        Ok(c.iter().map(|z| z.re * inv).collect())
    }
}

/// Periodic interpolation of uniform samples with a local 8-point Lagrange stencil.
pub fn interpolate_uniform(samples: &[f64], x0: f64, length: f64, x: f64) -> f64 {
    const LEFT: isize = 3;
    const WIDTH: usize = 8;
    let n = samples.len();
    let s = (x - x0).rem_euclid(length) / length * n as f64;
    let j0 = s.floor() as isize;
    let t = s - j0 as f64;
    let at = |off: isize| samples[(j0 + off).rem_euclid(n as isize) as usize];
    if t == 0.0 {
        return at(0);
    }
    let offsets: Vec<f64> = (0..WIDTH).map(|i| i as f64 - LEFT as f64).collect();
    let mut acc = 0.0;
    for (i, &oi) in offsets.iter().enumerate() {
        let w: f64 = offsets
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != i)
            .map(|(_, &om)| (t - om) / (oi - om))
            .product();
        acc += w * at(i as isize - LEFT);
    }
    acc
}

/// Burgulence field interpolated onto the mesh nodes.
pub fn burgulence_initial_condition(mesh: &Mesh, spec: &BurgulenceSpec) -> Result<DgField> {
    let u = spec.signal()?;
    let (x0, l) = (mesh.x0, mesh.length());
    Ok(DgField::from_fn(mesh.clone(), |x| interpolate_uniform(&u, x0, l, x)))
}
