//! Drivers shared by the command line and the acceptance suite: data
//! generation, training and prediction for the three experiments.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dg::{
    burgulence_initial_condition, cd_initial_condition, BurgulenceSpec, DgNeuralRhs, DgNeuralTape, DgOperator, Mesh,
    PdeConfig, Projection,
};
use crate::error::{Error, Result};
use crate::lorenz96::{generate_truth, L96Config, L96NeuralTape, SlowNeuralRhs, SlowUncoupledRhs, SourceScope};
use crate::mlp::MlpParams;
use crate::ode::{integrate, tableau_rk4, ButcherTableau, Rhs};
use crate::training::{train_discrete_forcing, train_node, Dataset, TrainConfig, TrainOutcome, TrainState};
use crate::trajectory::Trajectory;

fn default_l96_dt() -> f64 {
    0.005
}
fn default_spinup() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L96Experiment {
    #[serde(default)]
    pub model: L96Config,
    pub n_traj: usize,
    #[serde(default = "default_l96_dt")]
    pub dt: f64,
    #[serde(default = "default_spinup")]
    pub spinup: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scope: SourceScope,
}

impl L96Experiment {
    pub fn generate(&self, seed: u64) -> Result<Vec<Trajectory>> {
        generate_truth(&self.model, self.n_traj, self.dt, self.spinup, self.t_end, seed)
    }

    pub fn init_params(&self, seed: u64) -> Result<MlpParams> {
        let (di, dout) = self.scope.net_dims(self.model.K);
        MlpParams::init(di, dout, seed)
    }

    pub fn train(
        &self,
        data: &Dataset,
        state: TrainState,
        cfg: &TrainConfig,
        checkpoint_dir: Option<&Path>,
    ) -> Result<TrainOutcome> {
        train_node(&L96NeuralTape::new(self.model, self.scope), state, data, cfg, checkpoint_dir)
    }

    /// Slow-only rollout with RK4; without parameters the coupling is dropped.
    pub fn predict(&self, params: Option<&MlpParams>, x0: &[f64], dt: f64, n_steps: usize) -> Result<Trajectory> {
        let k = self.model.K;
        if x0.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: x0.len(),
            });
        }
        let tab = tableau_rk4();
        let tr = match params {
            Some(p) => integrate(&tab, &SlowNeuralRhs::new(self.model, p, self.scope)?, x0, 0.0, dt, n_steps)?,
            None => integrate(&tab, &SlowUncoupledRhs(self.model), x0, 0.0, dt, n_steps)?,
        };
        Ok(tr.with_meta("model", "l96-slow"))
    }

    /// Slow part of every stored state.
    pub fn slow(&self, truth: &Trajectory) -> Result<Trajectory> {
        let k = self.model.K;
        if truth.dim() != self.model.dim() {
            return Err(Error::Dimension {
                expected: self.model.dim(),
                got: truth.dim(),
            });
        }
        truth.map_states(k, |z| z[..k].to_vec())
    }
}

/// Initial condition family of a PDE experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Four sine modes with a random phase in `[0, 1)`.
    FourMode,
    /// Random-phase field with a prescribed spectrum peaking near `k0`.
    Burgulence { k0: f64, n: usize },
}

fn default_rk4() -> String {
    "rk4".into()
}
fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeExperiment {
    pub pde: PdeConfig,
    pub n_elem: usize,
    pub x0: f64,
    pub x1: f64,
    pub p_high: usize,
    pub p_low: usize,
    pub dt_high: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub initial: InitialCondition,
    #[serde(default = "default_rk4")]
    pub reference_tableau: String,
    /// Stored states are every `save_every`-th reference step.
    #[serde(default = "default_one")]
    pub save_every: usize,
}

/// Reference and filtered trajectory pair.
#[derive(Debug, Clone)]
pub struct PdeSample {
    pub high: Trajectory,
    pub filtered: Trajectory,
}

impl PdeExperiment {
    pub fn validate(&self) -> Result<()> {
        self.pde.validate()?;
        if self.p_low == 0 || self.p_low >= self.p_high {
            return Err(Error::Invalid(format!(
                "need 1 <= p_low < p_high, got {} and {}",
                self.p_low, self.p_high
            )));
        }
        if !(self.dt_high > 0.0) || !(self.t_end >= 0.0) || self.save_every == 0 {
            return Err(Error::Invalid("dt_high and save_every must be positive, t_end non-negative".into()));
        }
        ButcherTableau::by_name(&self.reference_tableau)?;
        self.high_mesh().map(|_| ())
    }

    pub fn high_mesh(&self) -> Result<Mesh> {
        Mesh::new(self.n_elem, self.x0, self.x1, self.p_high)
    }

    pub fn low_mesh(&self) -> Result<Mesh> {
        Mesh::new(self.n_elem, self.x0, self.x1, self.p_low)
    }

    pub fn high_operator(&self) -> Result<DgOperator> {
        DgOperator::new(self.pde, self.high_mesh()?)
    }

    pub fn low_operator(&self) -> Result<DgOperator> {
        DgOperator::new(self.pde, self.low_mesh()?)
    }

    pub fn filter(&self) -> Result<Projection> {
        Projection::l2(self.p_high, self.p_low)
    }

    pub fn n_steps(&self) -> Result<usize> {
        let n = (self.t_end / self.dt_high).round();
        if (n * self.dt_high - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(Error::Invalid(format!(
                "horizon {} is not a multiple of dt_high {}",
                self.t_end, self.dt_high
            )));
        }
        Ok(n as usize)
    }

    /// High-order initial state drawn from `seed`.
    pub fn initial_state(&self, seed: u64) -> Result<Vec<f64>> {
        let mesh = self.high_mesh()?;
        Ok(match self.initial {
            InitialCondition::FourMode => {
                let phase = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..1.0);
                cd_initial_condition(&mesh, phase).coeffs
            }
            InitialCondition::Burgulence { k0, n } => {
                burgulence_initial_condition(&mesh, &BurgulenceSpec { k0, n, seed })?.coeffs
            }
        })
    }

    /// Reference solution from `seed` and its projection to `p_low`.
    pub fn generate_one(&self, seed: u64) -> Result<PdeSample> {
        self.validate()?;
        let op = self.high_operator()?;
        let tab = ButcherTableau::by_name(&self.reference_tableau)?;
        let u0 = self.initial_state(seed)?;
        let mut high = crate::ode::integrate_strided(&tab, &op, &u0, 0.0, self.dt_high, self.n_steps()?, self.save_every)?;
        for (k, v) in op.mesh.meta() {
            high.meta.insert(k.into(), v);
        }
        let high = high
            .with_meta("model", format!("{:?}", self.pde.kind))
            .with_meta("a", self.pde.a)
            .with_meta("kappa", self.pde.kappa)
            .with_meta("seed", seed);
        let filtered = self.filter()?.apply_trajectory(&high)?;
        Ok(PdeSample { high, filtered })
    }

    /// `n_traj` samples with seeds `seed + i`.
    pub fn generate(&self, seed: u64) -> Result<Vec<PdeSample>> {
        (0..self.n_traj)
            .into_par_iter()
            .map(|i| {
                self.generate_one(seed.wrapping_add(i as u64)).map_err(|e| {
                    if e.is_blowup() {
                        Error::SampleBlowup {
                            sample: i,
                            source: Box::new(e),
                        }
                    } else {
                        e
                    }
                })
            })
            .collect()
    }

    pub fn init_params(&self, seed: u64) -> Result<MlpParams> {
        let d = self.low_mesh()?.dofs();
        MlpParams::init(d, d, seed)
    }

    pub fn train(
        &self,
        data: &Dataset,
        state: TrainState,
        cfg: &TrainConfig,
        checkpoint_dir: Option<&Path>,
    ) -> Result<TrainOutcome> {
        train_node(&DgNeuralTape::new(self.low_operator()?), state, data, cfg, checkpoint_dir)
    }

    pub fn train_discrete(
        &self,
        data: &Dataset,
        state: TrainState,
        cfg: &TrainConfig,
        checkpoint_dir: Option<&Path>,
    ) -> Result<TrainOutcome> {
        train_discrete_forcing(data, &self.low_operator()?, state, cfg, checkpoint_dir)
    }

    /// Low-order rollout, augmented by the learned source when given.
    pub fn predict(
        &self,
        params: Option<&MlpParams>,
        tableau: &ButcherTableau,
        u0: &[f64],
        dt: f64,
        n_steps: usize,
    ) -> Result<Trajectory> {
        let op = self.low_operator()?;
        op.mesh.check_len(u0)?;
        let tr = match params {
            Some(p) => integrate(tableau, &DgNeuralRhs::new(&op, p)?, u0, 0.0, dt, n_steps)?,
            None => integrate(tableau, &op, u0, 0.0, dt, n_steps)?,
        };
        Ok(tr.with_meta("p", self.p_low))
    }

    pub fn predict_discrete(
        &self,
        params: &MlpParams,
        tableau: &ButcherTableau,
        u0: &[f64],
        dt: f64,
        n_steps: usize,
    ) -> Result<Trajectory> {
        let op = self.low_operator()?;
        op.mesh.check_len(u0)?;
        crate::training::predict_discrete(params, &op, tableau, u0, dt, n_steps)
    }
}

/// Wall-clock seconds of the first call and the median of `repeats` warm calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub first: f64,
    pub median: f64,
}

pub fn time_rollout(rhs: &dyn Rhs, tableau: &ButcherTableau, u0: &[f64], dt: f64, n_steps: usize, repeats: usize) -> Result<Timing> {
    let run = || -> Result<f64> {
        let start = Instant::now();
        let mut u = u0.to_vec();
        crate::ode::advance(tableau, rhs, &mut u, 0.0, dt, n_steps)?;
        std::hint::black_box(&u);
        Ok(start.elapsed().as_secs_f64())
    };
    let first = run()?;
    let mut warm = (0..repeats.max(1)).map(|_| run()).collect::<Result<Vec<_>>>()?;
    warm.sort_by(f64::total_cmp);
    let n = warm.len();
    let median = if n % 2 == 1 { warm[n / 2] } else { 0.5 * (warm[n / 2 - 1] + warm[n / 2]) };
    Ok(Timing { first, median })
}
