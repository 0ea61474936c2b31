//! Semi-discrete DG tendency for `u_t + f(u)_x = kappa u_xx` on a periodic mesh.
//!
//! The diffusive flux is handled with an auxiliary variable `q = kappa u_x`
//! and central traces; the convective flux uses Lax–Friedrichs. Each element
//! solves, in strong form,
//!
//! ```text
//! J M q   = kappa [ S u + e_p (u*_R - u_R) - e_0 (u*_L - u_L) ]
//! J M u_t = -B^T W d(f - q)/dxi + e_p (F_R - F*_R) - e_0 (F_L - F*_L),  F = f(u) - q
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::DiffMap;
use crate::error::{Error, Result};
use crate::ode::Rhs;

use super::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    ConvectionDiffusion,
    ViscousBurgers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub kind: PdeKind,
    /// Advection speed; ignored for Burgers.
    #[serde(default = "default_speed")]
    pub a: f64,
    pub kappa: f64,
}

fn default_speed() -> f64 {
    1.0
}

impl PdeConfig {
    pub fn convection_diffusion(a: f64, kappa: f64) -> Self {
        PdeConfig {
            kind: PdeKind::ConvectionDiffusion,
            a,
            kappa,
        }
    }

    pub fn burgers(kappa: f64) -> Self {
        PdeConfig {
            kind: PdeKind::ViscousBurgers,
            a: 0.0,
            kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::Invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !self.a.is_finite() {
            return Err(Error::Invalid("advection speed must be finite".into()));
        }
        Ok(())
    }

    fn flux(&self, u: f64) -> f64 {
        match self.kind {
            PdeKind::ConvectionDiffusion => self.a * u,
            PdeKind::ViscousBurgers => 0.5 * u * u,
        }
    }

    fn flux_prime(&self, u: f64) -> f64 {
        match self.kind {
            PdeKind::ConvectionDiffusion => self.a,
            PdeKind::ViscousBurgers => u,
        }
    }

    /// Lax–Friedrichs flux from the left (`um`) and right (`up`) traces.
    fn flux_star(&self, um: f64, up: f64) -> f64 {
        let avg = 0.5 * (self.flux(um) + self.flux(up));
        avg + 0.5 * self.dissipation(um, up) * (um - up)
    }

    fn dissipation(&self, um: f64, up: f64) -> f64 {
        match self.kind {
            PdeKind::ConvectionDiffusion => self.a.abs(),
            PdeKind::ViscousBurgers => um.abs().max(up.abs()),
        }
    }

    /// Partial derivatives of [`Self::flux_star`] with respect to `(um, up)`.
    fn flux_star_grad(&self, um: f64, up: f64) -> (f64, f64) {
        let tau = self.dissipation(um, up);
        let (mut dm, mut dp) = (
            0.5 * self.flux_prime(um) + 0.5 * tau,
            0.5 * self.flux_prime(up) - 0.5 * tau,
        );
        if self.kind == PdeKind::ViscousBurgers {
            let jump = 0.5 * (um - up);
            if um.abs() >= up.abs() {
                dm += jump * um.signum();
            } else {
                dp += jump * up.signum();
            }
        }
        (dm, dp)
    }
}

/// Tendency `R(u)` of one PDE on one mesh.
#[derive(Debug, Clone)]
pub struct DgOperator {
    pub pde: PdeConfig,
    pub mesh: Mesh,
}

/// Forward intermediates reused by the adjoint.
struct Forward {
    /// Per element: `B u` and `Bd (u - u_0)` at quadrature points (Burgers only).
    uq: Vec<f64>,
    duq: Vec<f64>,
}

impl DgOperator {
    pub fn new(pde: PdeConfig, mesh: Mesh) -> Result<Self> {
        pde.validate()?;
        Ok(DgOperator { pde, mesh })
    }

    pub fn dofs(&self) -> usize {
        self.mesh.dofs()
    }

    /// Evaluates the tendency; `u.len()` must equal [`Self::dofs`].
    pub fn tendency(&self, u: &[f64], du: &mut [f64]) {
        self.forward(u, du);
    }

    fn forward(&self, u: &[f64], du: &mut [f64]) -> Forward {
        let re = self.mesh.reference();
        let (ne, n, nq, p) = (self.mesh.n_elem, re.n(), re.nq(), re.p);
        let jac = self.mesh.jacobian();
        let kj = self.pde.kappa / jac;
        let left = |e: usize| u[e * n];
        let right = |e: usize| u[e * n + p];
        let ustar: Vec<f64> = (0..ne).map(|i| 0.5 * (right(i) + left((i + 1) % ne))).collect();

        let mut q = vec![0.0; ne * n];
        let mut d0 = vec![0.0; n];
        for e in 0..ne {
            let ue = &u[e * n..(e + 1) * n];
            for (d, v) in d0.iter_mut().zip(ue) {
                *d = v - ue[0];
            }
            let jr = ustar[e] - ue[p];
            let jl = ustar[(e + ne - 1) % ne] - ue[0];
            for i in 0..n {
                let s: f64 = re.minv_s[i * n..(i + 1) * n].iter().zip(&d0).map(|(a, b)| a * b).sum();
                q[e * n + i] = kj * (s + re.mp[i] * jr - re.m0[i] * jl);
            }
        }
        let qstar: Vec<f64> = (0..ne)
            .map(|i| 0.5 * (q[i * n + p] + q[((i + 1) % ne) * n]))
            .collect();
        let fstar: Vec<f64> = (0..ne)
            .map(|i| self.pde.flux_star(right(i), left((i + 1) % ne)) - qstar[i])
            .collect();

        let burgers = self.pde.kind == PdeKind::ViscousBurgers;
        let mut uq = Vec::new();
        let mut duq = Vec::new();
        if burgers {
            uq = vec![0.0; ne * nq];
            duq = vec![0.0; ne * nq];
        }
        let mut vq = vec![0.0; nq];
        let mut f0 = vec![0.0; n];
        for e in 0..ne {
            let ue = &u[e * n..(e + 1) * n];
            let qe = &q[e * n..(e + 1) * n];
            match self.pde.kind {
                PdeKind::ConvectionDiffusion => {
                    let a = self.pde.a;
                    for j in 0..n {
                        f0[j] = a * (ue[j] - ue[0]) - (qe[j] - qe[0]);
                    }
                    for (k, v) in vq.iter_mut().enumerate() {
                        *v = re.bd[k * n..(k + 1) * n].iter().zip(&f0).map(|(a, b)| a * b).sum();
                    }
                }
                PdeKind::ViscousBurgers => {
                    for k in 0..nq {
                        let brow = &re.b[k * n..(k + 1) * n];
                        let drow = &re.bd[k * n..(k + 1) * n];
                        let mut uk = 0.0;
                        let mut duk = 0.0;
                        let mut dqk = 0.0;
                        for j in 0..n {
                            uk += brow[j] * ue[j];
                            duk += drow[j] * (ue[j] - ue[0]);
                            dqk += drow[j] * (qe[j] - qe[0]);
                        }
                        uq[e * nq + k] = uk;
                        duq[e * nq + k] = duk;
                        vq[k] = uk * duk - dqk;
                    }
                }
            }
            let fr = self.pde.flux(ue[p]) - qe[p];
            let fl = self.pde.flux(ue[0]) - qe[0];
            let jr = fr - fstar[e];
            let jl = fl - fstar[(e + ne - 1) % ne];
            for i in 0..n {
                let vol: f64 = re.minv_bt_w[i * nq..(i + 1) * nq].iter().zip(&vq).map(|(a, b)| a * b).sum();
                du[e * n + i] = (-vol + re.mp[i] * jr - re.m0[i] * jl) / jac;
            }
        }
        Forward { uq, duq }
    }

    /// Accumulates `(dR/du)^T g` into `gu`.
    pub fn tendency_vjp(&self, u: &[f64], g: &[f64], gu: &mut [f64]) {
        let re = self.mesh.reference();
        let (ne, n, nq, p) = (self.mesh.n_elem, re.n(), re.nq(), re.p);
        let jac = self.mesh.jacobian();
        let kj = self.pde.kappa / jac;
        let burgers = self.pde.kind == PdeKind::ViscousBurgers;
        let mut scratch = vec![0.0; u.len()];
        let fw = self.forward(u, &mut scratch);

        let mut fstar_bar = vec![0.0; ne];
        let mut q_bar = vec![0.0; ne * n];
        let mut vq_bar = vec![0.0; nq];
        // Bd'^T applied to a quadrature vector, with the u_0 correction.
        let bd_t = |w: &[f64], out: &mut [f64]| {
            let mut total = 0.0;
            for j in 0..n {
                let s: f64 = (0..nq).map(|k| re.bd[k * n + j] * w[k]).sum();
                out[j] += s;
                total += s;
            }
            out[0] -= total;
        };
        for e in 0..ne {
            let ge = &g[e * n..(e + 1) * n];
            let s: Vec<f64> = ge.iter().map(|x| x / jac).collect();
            let ms: f64 = re.mp.iter().zip(&s).map(|(a, b)| a * b).sum();
            let m0s: f64 = re.m0.iter().zip(&s).map(|(a, b)| a * b).sum();
            // du = (-vol + mp (fR - f*_e) - m0 (fL - f*_{e-1})) / J
            let fr_bar = ms;
            let fl_bar = -m0s;
            fstar_bar[e] -= ms;
            fstar_bar[(e + ne - 1) % ne] += m0s;
            let ue = &u[e * n..(e + 1) * n];
            gu[e * n + p] += self.pde.flux_prime(ue[p]) * fr_bar;
            q_bar[e * n + p] -= fr_bar;
            gu[e * n] += self.pde.flux_prime(ue[0]) * fl_bar;
            q_bar[e * n] -= fl_bar;
            for (k, vb) in vq_bar.iter_mut().enumerate() {
                *vb = -(0..n).map(|i| re.minv_bt_w[i * nq + k] * s[i]).sum::<f64>();
            }
            // vq = conv - Bd (q - q_0)
            let mut qb = vec![0.0; n];
            let neg: Vec<f64> = vq_bar.iter().map(|x| -x).collect();
            bd_t(&neg, &mut qb);
            for j in 0..n {
                q_bar[e * n + j] += qb[j];
            }
            let gue = &mut gu[e * n..(e + 1) * n];
            if burgers {
                let uq = &fw.uq[e * nq..(e + 1) * nq];
                let duq = &fw.duq[e * nq..(e + 1) * nq];
                let w1: Vec<f64> = vq_bar.iter().zip(duq).map(|(a, b)| a * b).collect();
                for j in 0..n {
                    gue[j] += (0..nq).map(|k| re.b[k * n + j] * w1[k]).sum::<f64>();
                }
                let w2: Vec<f64> = vq_bar.iter().zip(uq).map(|(a, b)| a * b).collect();
                bd_t(&w2, gue);
            } else {
                let w: Vec<f64> = vq_bar.iter().map(|x| self.pde.a * x).collect();
                bd_t(&w, gue);
            }
        }
        // f*_i = flux_star(uR_i, uL_{i+1}) - (qR_i + qL_{i+1}) / 2
        for i in 0..ne {
            let nb = (i + 1) % ne;
            let (dm, dp) = self.pde.flux_star_grad(u[i * n + p], u[nb * n]);
            gu[i * n + p] += dm * fstar_bar[i];
            gu[nb * n] += dp * fstar_bar[i];
            q_bar[i * n + p] -= 0.5 * fstar_bar[i];
            q_bar[nb * n] -= 0.5 * fstar_bar[i];
        }
        // q_e = kj (Ds (u - u_0) + mp (u*_e - uR) - m0 (u*_{e-1} - uL))
        let mut ustar_bar = vec![0.0; ne];
        for e in 0..ne {
            let r: Vec<f64> = q_bar[e * n..(e + 1) * n].iter().map(|x| kj * x).collect();
            let gue = &mut gu[e * n..(e + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                let s: f64 = (0..n).map(|i| re.minv_s[i * n + j] * r[i]).sum();
                gue[j] += s;
                total += s;
            }
            gue[0] -= total;
            let mr: f64 = re.mp.iter().zip(&r).map(|(a, b)| a * b).sum();
            let m0r: f64 = re.m0.iter().zip(&r).map(|(a, b)| a * b).sum();
            ustar_bar[e] += mr;
            gue[p] -= mr;
            ustar_bar[(e + ne - 1) % ne] -= m0r;
            gue[0] += m0r;
        }
        for i in 0..ne {
            let nb = (i + 1) % ne;
            gu[i * n + p] += 0.5 * ustar_bar[i];
            gu[nb * n] += 0.5 * ustar_bar[i];
        }
    }

    /// Time step for a target convective Courant number `a dt / dx_min`.
    pub fn courant(&self, dt: f64, speed: f64) -> f64 {
        speed * dt / self.mesh.min_spacing()
    }
}

impl Rhs for DgOperator {
    fn dim(&self) -> usize {
        self.dofs()
    }

    fn eval(&self, _t: f64, u: &[f64], du: &mut [f64]) {
        self.tendency(u, du);
    }
}

impl DiffMap for DgOperator {
    fn in_dim(&self) -> usize {
        self.dofs()
    }

    fn out_dim(&self) -> usize {
        self.dofs()
    }

    fn apply(&self, u: &[f64], du: &mut [f64]) {
        self.tendency(u, du);
    }

    fn vjp(&self, u: &[f64], g: &[f64], gu: &mut [f64]) {
        self.tendency_vjp(u, g, gu);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, tableau_rk4};
    use std::f64::consts::PI;

    fn op(kind: PdeKind, ne: usize, p: usize) -> DgOperator {
        let pde = PdeConfig {
            kind,
            a: 1.0,
            kappa: 0.01,
        };
        DgOperator::new(pde, Mesh::new(ne, 0.0, 1.0, p).unwrap()).unwrap()
    }

    #[test]
    fn constant_states_are_steady() {
        for kind in [PdeKind::ConvectionDiffusion, PdeKind::ViscousBurgers] {
            for p in [1, 3, 8] {
                let o = op(kind, 7, p);
                let u = vec![0.731; o.dofs()];
                let mut du = vec![1.0; o.dofs()];
                o.tendency(&u, &mut du);
                assert!(du.iter().all(|&d| d.abs() <= 1e-13), "{kind:?} p={p}: {du:?}");
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for kind in [PdeKind::ConvectionDiffusion, PdeKind::ViscousBurgers] {
            for p in [1, 2, 4] {
                let o = op(kind, 5, p);
                let d = o.dofs();
                let u: Vec<f64> = (0..d).map(|i| (1.3 * i as f64).sin() + 0.2).collect();
                let g: Vec<f64> = (0..d).map(|i| (0.7 * i as f64).cos()).collect();
                let mut gu = vec![0.0; d];
                o.tendency_vjp(&u, &g, &mut gu);
                let eps = 1e-6;
                for i in 0..d {
                    let (mut up, mut um) = (u.clone(), u.clone());
                    up[i] += eps;
                    um[i] -= eps;
                    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
                    o.tendency(&up, &mut fp);
                    o.tendency(&um, &mut fm);
                    let fd: f64 = (0..d).map(|r| g[r] * (fp[r] - fm[r]) / (2.0 * eps)).sum();
                    assert!(
                        (fd - gu[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "{kind:?} p={p} i={i}: fd {fd} vs {}",
                        gu[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fourier_mode_decays_and_travels() {
        let (a, kappa, alpha) = (1.0, 1e-4, 1.0);
        let pde = PdeConfig::convection_diffusion(a, kappa);
        let mesh = Mesh::new(50, 0.0, 1.0, 5).unwrap();
        let o = DgOperator::new(pde, mesh.clone()).unwrap();
        let u0 = mesh.interpolate(|x| (2.0 * PI * alpha * x).sin());
        let (dt, n) = (1e-4, 500);
        let tr = integrate(&tableau_rk4(), &o, &u0, 0.0, dt, n).unwrap();
        let t = dt * n as f64;
        let decay = (-kappa * (2.0 * PI * alpha).powi(2) * t).exp();
        let exact = mesh.interpolate(|x| (2.0 * PI * alpha * (x - a * t)).sin() * decay);
        let err: Vec<f64> = tr.last().iter().zip(&exact).map(|(x, y)| x - y).collect();
        assert!(mesh.norm(&err) < 1e-8, "{}", mesh.norm(&err));
    }

    #[test]
    fn integral_is_conserved() {
        for kind in [PdeKind::ConvectionDiffusion, PdeKind::ViscousBurgers] {
            let o = op(kind, 16, 2);
            let u0 = o.mesh.interpolate(|x| (2.0 * PI * x).sin() + 0.3 * (6.0 * PI * x).cos() + 0.1);
            let tr = integrate(&tableau_rk4(), &o, &u0, 0.0, 1e-4, 200).unwrap();
            let drift = (o.mesh.integral(tr.last()) - o.mesh.integral(&u0)).abs();
            assert!(drift < 1e-12, "{kind:?}: {drift}");
        }
    }
}
