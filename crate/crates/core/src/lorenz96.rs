//! Two-scale Lorenz 96 dynamics and the variant whose slow-fast coupling is
//! replaced by a learned source.
//!
//! The full state is `Z = (X, Y)` flattened as `[X_0 .. X_{K-1}, Y_0 .. Y_{JK-1}]`
//! with fast index `g = k J + j`. Fast neighbours wrap around the global ring
//! of length `J K`, so `Y_{J,k}` is followed by `Y_{0,k+1}`.

use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffMap, Tape, Var};
use crate::error::{Error, Result};
use crate::mlp::{mlp_on_tape, MlpParams};
use crate::node::TapeRhs;
use crate::ode::{advance, integrate, tableau_rk4, Rhs};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct L96Config {
    pub K: usize,
    pub J: usize,
    pub c: f64,
    pub h: f64,
    pub F: f64,
}

impl Default for L96Config {
    fn default() -> Self {
        L96Config {
            K: 36,
            J: 10,
            c: 10.0,
            h: 1.0,
            F: 10.0,
        }
    }
}

impl L96Config {
    pub fn validate(&self) -> Result<()> {
        if self.K < 4 {
            return Err(Error::Invalid(format!("K must be at least 4, got {}", self.K)));
        }
        if self.J < 1 {
            return Err(Error::Invalid("J must be at least 1".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Invalid(format!("c must be positive, got {}", self.c)));
        }
        if !self.h.is_finite() || !self.F.is_finite() {
            return Err(Error::Invalid("h and F must be finite".into()));
        }
        Ok(())
    }

    /// `K (1 + J)`.
    pub fn dim(&self) -> usize {
        self.K * (1 + self.J)
    }

    pub fn n_fast(&self) -> usize {
        self.K * self.J
    }
}

/// Whether the source maps each `X_k` alone or the whole slow vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceScope {
    #[default]
    PerComponent,
    Global,
}

impl SourceScope {
    pub fn net_dims(self, k: usize) -> (usize, usize) {
        match self {
            SourceScope::PerComponent => (1, 1),
            SourceScope::Global => (k, k),
        }
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Slow tendency without the coupling term.
pub fn slow_physics(cfg: &L96Config, x: &[f64], dx: &mut [f64]) {
    let k = cfg.K;
    for i in 0..k {
        let ii = i as isize;
        let (xm2, xm1, xp1) = (x[wrap(ii - 2, k)], x[wrap(ii - 1, k)], x[wrap(ii + 1, k)]);
        dx[i] = -xm1 * (xm2 - xp1) - x[i] + cfg.F;
    }
}

fn slow_physics_vjp(cfg: &L96Config, x: &[f64], g: &[f64], gx: &mut [f64]) {
    let k = cfg.K;
    for i in 0..k {
        let ii = i as isize;
        let (im2, im1, ip1) = (wrap(ii - 2, k), wrap(ii - 1, k), wrap(ii + 1, k));
        let gi = g[i];
        gx[im1] -= (x[im2] - x[ip1]) * gi;
        gx[im2] -= x[im1] * gi;
        gx[ip1] += x[im1] * gi;
        gx[i] -= gi;
    }
}

fn fast_physics(cfg: &L96Config, x: &[f64], y: &[f64], dy: &mut [f64]) {
    let n = y.len();
    let jf = cfg.J as f64;
    for g in 0..n {
        let gi = g as isize;
        let (yp1, yp2, ym1) = (y[wrap(gi + 1, n)], y[wrap(gi + 2, n)], y[wrap(gi - 1, n)]);
        dy[g] = cfg.c * (-jf * yp1 * (yp2 - ym1) - y[g] + cfg.h / jf * x[g / cfg.J]);
    }
}

fn fast_physics_vjp(cfg: &L96Config, y: &[f64], g: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let n = y.len();
    let jf = cfg.J as f64;
    for i in 0..n {
        let ii = i as isize;
        let (p1, p2, m1) = (wrap(ii + 1, n), wrap(ii + 2, n), wrap(ii - 1, n));
        let gc = cfg.c * g[i];
        gy[p1] -= jf * (y[p2] - y[m1]) * gc;
        gy[p2] -= jf * y[p1] * gc;
        gy[m1] += jf * y[p1] * gc;
        gy[i] -= gc;
        gx[i / cfg.J] += cfg.h / jf * gc;
    }
}

/// Coupling term `-h Ybar_k` for every `k`.
pub fn coupling(cfg: &L96Config, y: &[f64]) -> Vec<f64> {
    y.chunks_exact(cfg.J)
        .map(|block| -cfg.h * block.iter().sum::<f64>() / cfg.J as f64)
        .collect()
}

/// Tendency of the full two-scale system.
pub fn rhs_coupled(cfg: &L96Config, z: &[f64], dz: &mut [f64]) {
    let (x, y) = z.split_at(cfg.K);
    let (dx, dy) = dz.split_at_mut(cfg.K);
    slow_physics(cfg, x, dx);
    for (d, s) in dx.iter_mut().zip(coupling(cfg, y)) {
        *d += s;
    }
    fast_physics(cfg, x, y, dy);
}

/// Row map for the full state; with `coupled == false` the `-h Ybar` term is
/// left out of the slow tendency (a learned source takes its place).
#[derive(Debug, Clone)]
pub struct L96Physics {
    pub cfg: L96Config,
    pub coupled: bool,
}

impl Rhs for L96Physics {
    fn dim(&self) -> usize {
        self.cfg.dim()
    }

    fn eval(&self, _t: f64, z: &[f64], dz: &mut [f64]) {
        self.apply(z, dz);
    }
}

impl DiffMap for L96Physics {
    fn in_dim(&self) -> usize {
        self.cfg.dim()
    }

    fn out_dim(&self) -> usize {
        self.cfg.dim()
    }

    fn apply(&self, z: &[f64], dz: &mut [f64]) {
        if self.coupled {
            rhs_coupled(&self.cfg, z, dz);
        } else {
            let (x, y) = z.split_at(self.cfg.K);
            let (dx, dy) = dz.split_at_mut(self.cfg.K);
            slow_physics(&self.cfg, x, dx);
            fast_physics(&self.cfg, x, y, dy);
        }
    }

    fn vjp(&self, z: &[f64], g: &[f64], gz: &mut [f64]) {
        let k = self.cfg.K;
        let (x, y) = z.split_at(k);
        let (gxo, gyo) = g.split_at(k);
        let (gx, gy) = gz.split_at_mut(k);
        slow_physics_vjp(&self.cfg, x, gxo, gx);
        fast_physics_vjp(&self.cfg, y, gyo, gx, gy);
        if self.coupled {
            let w = -self.cfg.h / self.cfg.J as f64;
            for (i, gyi) in gy.iter_mut().enumerate() {
                *gyi += w * gxo[i / self.cfg.J];
            }
        }
    }
}

/// Records `S_theta` on the slow rows of `x` (`batch x K`).
fn record_source(tape: &mut Tape, params: &[Var], scope: SourceScope, x: Var) -> Result<Var> {
    match scope {
        SourceScope::Global => mlp_on_tape(tape, params, x),
        SourceScope::PerComponent => {
            let (b, k) = tape.shape(x);
            let col = tape.reshape(x, b * k, 1)?;
            let s = mlp_on_tape(tape, params, col)?;
            tape.reshape(s, b, k)
        }
    }
}

/// Full-state system with the learned source in place of the coupling term;
/// used for training on `Z` windows.
pub struct L96NeuralTape {
    physics: Arc<L96Physics>,
    scope: SourceScope,
}

impl L96NeuralTape {
    pub fn new(cfg: L96Config, scope: SourceScope) -> Self {
        L96NeuralTape {
            physics: Arc::new(L96Physics { cfg, coupled: false }),
            scope,
        }
    }
}

impl TapeRhs for L96NeuralTape {
    fn dim(&self) -> usize {
        self.physics.cfg.dim()
    }

    fn record(&self, tape: &mut Tape, params: &[Var], z: Var) -> Result<Var> {
        let cfg = self.physics.cfg;
        let b = tape.shape(z).0;
        let phys = tape.map(z, self.physics.clone())?;
        let x = tape.slice(z, 0, cfg.K)?;
        let s = record_source(tape, params, self.scope, x)?;
        let pad = tape.input(b, cfg.n_fast(), vec![0.0; b * cfg.n_fast()])?;
        let s_full = tape.concat(&[s, pad])?;
        tape.add(phys, s_full)
    }
}

/// Evaluates `S_theta` on a slow state.
pub fn source(params: &MlpParams, scope: SourceScope, x: &[f64]) -> Result<Vec<f64>> {
    match scope {
        SourceScope::Global => params.forward(x),
        SourceScope::PerComponent => params.forward_batch(x.len(), x),
    }
}

/// Slow-only system `dX/dt = physics(X) + S_theta(X)` used for prediction.
pub struct SlowNeuralRhs<'a> {
    pub cfg: L96Config,
    pub params: &'a MlpParams,
    pub scope: SourceScope,
}

impl<'a> SlowNeuralRhs<'a> {
    pub fn new(cfg: L96Config, params: &'a MlpParams, scope: SourceScope) -> Result<Self> {
        cfg.validate()?;
        let (di, dout) = scope.net_dims(cfg.K);
        params.expect_dims(di, dout)?;
        Ok(SlowNeuralRhs { cfg, params, scope })
    }
}

impl Rhs for SlowNeuralRhs<'_> {
    fn dim(&self) -> usize {
        self.cfg.K
    }

    fn eval(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        slow_physics(&self.cfg, x, dx);
        let s = source(self.params, self.scope, x).expect("dimensions checked at construction");
        for (d, si) in dx.iter_mut().zip(s) {
            *d += si;
        }
    }
}

/// Slow equation with the coupling dropped entirely.
pub struct SlowUncoupledRhs(pub L96Config);

impl Rhs for SlowUncoupledRhs {
    fn dim(&self) -> usize {
        self.0.K
    }

    fn eval(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        slow_physics(&self.0, x, dx);
    }
}

/// Random initial state: `X ~ U(-5, 5)`, `Y ~ U(-0.5, 0.5)`.
pub fn random_state(cfg: &L96Config, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = Uniform::new(-5.0, 5.0);
    let ys = Uniform::new(-0.5, 0.5);
    let mut z: Vec<f64> = (0..cfg.K).map(|_| xs.sample(&mut rng)).collect();
    z.extend((0..cfg.n_fast()).map(|_| ys.sample(&mut rng)));
    z
}

fn steps_for(span: f64, dt: f64, what: &str) -> Result<usize> {
    let n = (span / dt).round();
    if span < 0.0 || ((n * dt) - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Invalid(format!("{what} {span} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

/// Truth trajectories of the coupled system, integrated with RK4 after a
/// discarded spinup. Trajectory `i` uses seed `seed + i`.
pub fn generate_truth(
    cfg: &L96Config,
    n_traj: usize,
    dt: f64,
    spinup: f64,
    t_end: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("timestep must be positive, got {dt}")));
    }
    let n_spin = steps_for(spinup, dt, "spinup")?;
    let n_steps = steps_for(t_end, dt, "horizon")?;
    let tab = tableau_rk4();
    let rhs = L96Physics {
        cfg: *cfg,
        coupled: true,
    };
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let mut z = random_state(cfg, s);
            advance(&tab, &rhs, &mut z, 0.0, dt, n_spin)
                .map_err(|e| Error::SampleBlowup { sample: i, source: Box::new(e) })?;
            let tr = integrate(&tab, &rhs, &z, 0.0, dt, n_steps)
                .map_err(|e| Error::SampleBlowup { sample: i, source: Box::new(e) })?;
            Ok(with_meta(tr, cfg, spinup).with_meta("seed", s))
        })
        .collect()
}

pub fn with_meta(tr: Trajectory, cfg: &L96Config, spinup: f64) -> Trajectory {
    tr.with_meta("model", "l96")
        .with_meta("K", cfg.K)
        .with_meta("J", cfg.J)
        .with_meta("c", cfg.c)
        .with_meta("h", cfg.h)
        .with_meta("F", cfg.F)
        .with_meta("spinup", spinup)
}

/// The exact coupling term `-h Ybar_k` at every stored state.
pub fn coupling_truth(traj: &Trajectory, cfg: &L96Config) -> Result<Vec<Vec<f64>>> {
    if traj.dim() != cfg.dim() {
        return Err(Error::Dimension {
            expected: cfg.dim(),
            got: traj.dim(),
        });
    }
    Ok(traj.states().map(|z| coupling(cfg, &z[cfg.K..])).collect())
}
