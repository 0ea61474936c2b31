//! Trajectory-window losses, first-order optimizers, the training loop and the
//! discrete corrective-forcing baseline.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, record, Gradient, Tape};
use crate::error::{Error, Result};
use crate::mlp::{mlp_on_tape, MlpParams};
use crate::node::{rollout_on_tape, TapeRhs};
use crate::ode::{ButcherTableau, ErkStepper, Rhs};
use crate::trajectory::Trajectory;

/// Trajectories sharing a sampling interval and state dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    trajs: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajs: Vec<Trajectory>) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Invalid("dataset has no trajectories".into()))?;
        for (i, t) in trajs.iter().enumerate() {
            t.validate()?;
            if t.dim() != first.dim() {
                return Err(Error::Shape(format!(
                    "trajectory {i} has dimension {}, expected {}",
                    t.dim(),
                    first.dim()
                )));
            }
            if (t.dt - first.dt).abs() > 1e-12 * first.dt {
                return Err(Error::TimeGrid(format!(
                    "trajectory {i} is sampled every {}, expected {}",
                    t.dt, first.dt
                )));
            }
        }
        Ok(Dataset { trajs })
    }

    pub fn dt(&self) -> f64 {
        self.trajs[0].dt
    }

    pub fn dim(&self) -> usize {
        self.trajs[0].dim()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajs
    }
}

/// Number of stored samples per training step; `dt` must be an integer
/// multiple of `data_dt`.
pub fn stride_for(dt: f64, data_dt: f64) -> Result<usize> {
    let r = dt / data_dt;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 {
        return Err(Error::TimeGrid(format!(
            "training dt {dt} is not an integer multiple of the data dt {data_dt}"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[serde(rename = "adabelief")]
    AdaBelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Defaults to 1e-8 (Adam) or 1e-16 (AdaBelief).
    #[serde(default)]
    pub eps: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: None,
        }
    }

    pub fn adabelief(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdaBelief,
            ..Self::adam(lr)
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(match self.kind {
            OptimizerKind::Adam => 1e-8,
            OptimizerKind::AdaBelief => 1e-16,
        })
    }

    /// Added inside the AdaBelief second-moment recursion.
    pub fn eps_root(&self) -> f64 {
        match self.kind {
            OptimizerKind::Adam => 0.0,
            OptimizerKind::AdaBelief => self.eps(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !ok(self.beta1) || !ok(self.beta2) || !(self.eps() >= 0.0) {
            return Err(Error::Invalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &MlpParams) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Ok(Optimizer {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }

    /// Applies one update with gradient `g`.
    pub fn update(&mut self, params: &mut MlpParams, g: &Gradient) -> Result<()> {
        let shapes = params.shapes();
        if g.tensors.len() != shapes.len()
            || g.tensors.iter().zip(&shapes).any(|(t, &(r, c))| (t.rows, t.cols) != (r, c))
        {
            return Err(Error::Shape("gradient is not congruent with the parameters".into()));
        }
        let c = self.config;
        let (b1, b2, eps, eps_root) = (c.beta1, c.beta2, c.eps(), c.eps_root());
        self.step += 1;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (((p, gt), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(&g.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = gt.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                let r = match c.kind {
                    OptimizerKind::Adam => gi,
                    OptimizerKind::AdaBelief => gi - m[i],
                };
                v[i] = b2 * v[i] + (1.0 - b2) * r * r + eps_root;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= c.lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Which part of each trajectory windows are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub batches_per_epoch: usize,
    /// Steps per window (`m`).
    #[serde(default = "default_window")]
    pub window: usize,
    pub dt: f64,
    pub tableau: String,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of each trajectory's time span used for training.
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_test_every")]
    pub test_every: usize,
    /// Windows per gradient tape.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    /// Checkpoint interval in epochs; 0 keeps only the final state.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_batch() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_window() -> usize {
    5
}
fn default_split() -> f64 {
    0.75
}
fn default_test_every() -> usize {
    10
}
fn default_chunk() -> usize {
    25
}

impl TrainConfig {
    pub fn new(epochs: usize, dt: f64, tableau: &str, optimizer: OptimizerConfig) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            batches_per_epoch: 1,
            window: default_window(),
            dt,
            tableau: tableau.to_string(),
            optimizer,
            seed: 0,
            split: default_split(),
            test_every: default_test_every(),
            chunk: default_chunk(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 || self.chunk == 0 {
            return Err(Error::Invalid("window, batch size, batches per epoch and chunk must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("training dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.split) {
            return Err(Error::Invalid(format!("split must lie in [0, 1], got {}", self.split)));
        }
        ButcherTableau::by_name(&self.tableau)?;
        self.optimizer.validate()
    }
}

/// `n` windows of `m` steps each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    pub dt: f64,
    /// `n x dim`, row per window.
    pub initial: Vec<f64>,
    /// `m` blocks of `n x dim`.
    pub targets: Vec<Vec<f64>>,
    /// `(trajectory, start index)` of every window.
    pub origins: Vec<(usize, usize)>,
}

impl WindowBatch {
    /// Windows `lo..hi` as a smaller batch.
    pub fn slice(&self, lo: usize, hi: usize) -> WindowBatch {
        let d = self.dim;
        WindowBatch {
            n: hi - lo,
            m: self.m,
            dim: d,
            dt: self.dt,
            initial: self.initial[lo * d..hi * d].to_vec(),
            targets: self.targets.iter().map(|t| t[lo * d..hi * d].to_vec()).collect(),
            origins: self.origins[lo..hi].to_vec(),
        }
    }

    pub fn from_origins(data: &Dataset, m: usize, stride: usize, origins: Vec<(usize, usize)>) -> Result<Self> {
        let d = data.dim();
        let n = origins.len();
        let mut initial = Vec::with_capacity(n * d);
        let mut targets = vec![Vec::with_capacity(n * d); m];
        for &(ti, s) in &origins {
            let tr = data
                .trajs
                .get(ti)
                .ok_or_else(|| Error::Invalid(format!("no trajectory {ti}")))?;
            if s + m * stride >= tr.len() {
                return Err(Error::Invalid(format!("window at {s} overruns trajectory {ti}")));
            }
            initial.extend_from_slice(tr.state(s));
            for (l, t) in targets.iter_mut().enumerate() {
                t.extend_from_slice(tr.state(s + (l + 1) * stride));
            }
        }
        Ok(WindowBatch {
            n,
            m,
            dim: d,
            dt: data.dt() * stride as f64,
            initial,
            targets,
            origins,
        })
    }
}

/// Admissible start indices `(trajectory, lo, hi)` inclusive.
fn window_ranges(data: &Dataset, m: usize, stride: usize, split: f64, part: Part) -> Vec<(usize, usize, usize)> {
    let span = m * stride;
    data.trajs
        .iter()
        .enumerate()
        .filter_map(|(i, tr)| {
            let last = tr.len().checked_sub(1)?;
            let cut = (split * last as f64).round() as usize;
            let (lo, end) = match part {
                Part::Train => (0, cut),
                Part::Test => (cut, last),
            };
            let hi = end.checked_sub(span)?;
            (hi >= lo).then_some((i, lo, hi))
        })
        .collect()
}

/// Draws `n` windows uniformly from all admissible `(trajectory, start)` pairs.
pub fn sample_windows(data: &Dataset, cfg: &TrainConfig, part: Part, n: usize, seed: u64) -> Result<WindowBatch> {
    let stride = stride_for(cfg.dt, data.dt())?;
    let ranges = window_ranges(data, cfg.window, stride, cfg.split, part);
    let total: usize = ranges.iter().map(|&(_, lo, hi)| hi - lo + 1).sum();
    if total == 0 {
        return Err(Error::Invalid(format!(
            "no {part:?} window of {} steps at stride {stride} fits in the data",
            cfg.window
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins = (0..n)
        .map(|_| {
            let mut r = rng.gen_range(0..total);
            for &(ti, lo, hi) in &ranges {
                let count = hi - lo + 1;
                if r < count {
                    return (ti, lo + r);
                }
                r -= count;
            }
            unreachable!("index within total")
        })
        .collect();
    WindowBatch::from_origins(data, cfg.window, stride, origins)
}

/// Records `(1 / (n_total m)) sum_i sum_l ||rollout - target||^2` over the
/// windows of `batch`. `n_total` is the size of the full batch when `batch`
/// is one chunk of it.
pub fn record_window_loss(
    tape: &mut Tape,
    params: &[crate::autodiff::Var],
    batch: &WindowBatch,
    rhs: &dyn TapeRhs,
    tableau: &ButcherTableau,
    n_total: usize,
) -> Result<crate::autodiff::Var> {
    if batch.dim != rhs.dim() {
        return Err(Error::Dimension {
            expected: rhs.dim(),
            got: batch.dim,
        });
    }
    let u0 = tape.input(batch.n, batch.dim, batch.initial.clone())?;
    let states = rollout_on_tape(tape, tableau, rhs, params, u0, batch.dt, batch.m)?;
    let mut terms = Vec::with_capacity(batch.m);
    for (s, target) in states.iter().zip(&batch.targets) {
        let t = tape.input(batch.n, batch.dim, target.clone())?;
        let d = tape.sub(*s, t)?;
        let sq = tape.square(d);
        terms.push((tape.sum(sq), 1.0 / (n_total * batch.m) as f64));
    }
    tape.lincomb(&terms)
}

/// Mean squared rollout error over the batch and its tape.
pub fn node_loss(
    params: &MlpParams,
    batch: &WindowBatch,
    rhs: &dyn TapeRhs,
    tableau: &ButcherTableau,
) -> Result<(f64, Tape)> {
    record(&params.tensors(), |tape, p| record_window_loss(tape, p, batch, rhs, tableau, batch.n))
}

/// Loss and gradient, recorded in chunks of `chunk` windows and summed in
/// window order.
pub fn batch_gradient(
    params: &MlpParams,
    batch: &WindowBatch,
    rhs: &dyn TapeRhs,
    tableau: &ButcherTableau,
    chunk: usize,
) -> Result<Gradient> {
    let bounds: Vec<(usize, usize)> = (0..batch.n)
        .step_by(chunk.max(1))
        .map(|lo| (lo, (lo + chunk).min(batch.n)))
        .collect();
    let parts: Vec<Result<Gradient>> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let sub = batch.slice(lo, hi);
            let (_, tape) = record(&params.tensors(), |tape, p| {
                record_window_loss(tape, p, &sub, rhs, tableau, batch.n)
            })
            .map_err(|e| e.offset_sample(lo))?;
            Ok(backward(&tape))
        })
        .collect();
    let mut total = Gradient::zeros_like(&params.shapes());
    for p in parts {
        total.accumulate(&p?);
    }
    Ok(total)
}

/// Loss only, without keeping tapes.
pub fn batch_loss(
    params: &MlpParams,
    batch: &WindowBatch,
    rhs: &dyn TapeRhs,
    tableau: &ButcherTableau,
    chunk: usize,
) -> Result<f64> {
    let bounds: Vec<(usize, usize)> = (0..batch.n)
        .step_by(chunk.max(1))
        .map(|lo| (lo, (lo + chunk).min(batch.n)))
        .collect();
    let parts: Vec<Result<f64>> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let sub = batch.slice(lo, hi);
            record(&params.tensors(), |tape, p| record_window_loss(tape, p, &sub, rhs, tableau, batch.n))
                .map(|(l, _)| l)
                .map_err(|e| e.offset_sample(lo))
        })
        .collect();
    parts.into_iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Parameters and optimizer state after some number of epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: MlpParams,
    pub optimizer: Optimizer,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn fresh(params: MlpParams, cfg: &TrainConfig) -> Result<Self> {
        let optimizer = Optimizer::new(cfg.optimizer, &params)?;
        Ok(TrainState {
            params,
            optimizer,
            epoch: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    epoch: usize,
    config: TrainConfig,
    optimizer: Optimizer,
}

/// Writes `<stem>.sgnp` and its `<stem>.json` sidecar.
pub fn save_checkpoint(dir: &Path, stem: &str, state: &TrainState, cfg: &TrainConfig) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.sgnp"));
    state.params.save(&path)?;
    let sidecar = Sidecar {
        epoch: state.epoch,
        config: cfg.clone(),
        optimizer: state.optimizer.clone(),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(path)
}

/// Restores a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(params_path: &Path) -> Result<(TrainState, TrainConfig)> {
    let params = MlpParams::load(params_path)?;
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(params_path.with_extension("json"))?)?;
    if sidecar.optimizer.m.len() != params.tensors().len() {
        return Err(Error::Shape("optimizer state does not match the checkpoint parameters".into()));
    }
    Ok((
        TrainState {
            params,
            optimizer: sidecar.optimizer,
            epoch: sidecar.epoch,
        },
        sidecar.config,
    ))
}

pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "test_loss"])?;
    for r in history {
        let test = r.test_loss.map(|x| format!("{x:.17e}")).unwrap_or_default();
        w.write_record([r.epoch.to_string(), format!("{:.17e}", r.train_loss), test])?;
    }
    w.flush()?;
    Ok(())
}

fn epoch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 16)
        .wrapping_add(batch as u64)
}

const TEST_SEED_SALT: u64 = 0x7E57;

/// The generic loop: `grad(params, seed)` returns the batch gradient with
/// its loss, `test(params)` the held-out loss.
fn optimize<G, T>(mut state: TrainState, cfg: &TrainConfig, checkpoint_dir: Option<&Path>, grad: G, test: T) -> Result<TrainOutcome>
where
    G: Fn(&MlpParams, u64) -> Result<Gradient>,
    T: Fn(&MlpParams) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let mut history = Vec::new();
    let first = state.epoch + 1;
    let last = state.epoch + cfg.epochs;
    for epoch in first..=last {
        let mut train = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let g = grad(&state.params, epoch_seed(cfg.seed, epoch, b))?;
            train += g.loss;
            state.optimizer.update(&mut state.params, &g)?;
        }
        state.epoch = epoch;
        let test_loss = if epoch % cfg.test_every.max(1) == 0 || epoch == last {
            test(&state.params)?
        } else {
            None
        };
        history.push(LossRecord {
            epoch,
            train_loss: train / cfg.batches_per_epoch as f64,
            test_loss,
        });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(dir, &format!("checkpoint_{epoch:06}"), &state, cfg)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(dir, "final", &state, cfg)?;
    }
    Ok(TrainOutcome { state, history })
}

/// Trains `S_theta` by matching rollouts of `rhs` against windows of `data`.
pub fn train_node(
    rhs: &dyn TapeRhs,
    state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tableau = ButcherTableau::by_name(&cfg.tableau)?;
    let stride = stride_for(cfg.dt, data.dt())?;
    let has_test = !window_ranges(data, cfg.window, stride, cfg.split, Part::Test).is_empty();
    let test_batch = if has_test {
        Some(sample_windows(data, cfg, Part::Test, cfg.batch_size, cfg.seed ^ TEST_SEED_SALT)?)
    } else {
        None
    };
    optimize(
        state,
        cfg,
        checkpoint_dir,
        |p, seed| {
            let batch = sample_windows(data, cfg, Part::Train, cfg.batch_size, seed)?;
            batch_gradient(p, &batch, rhs, &tableau, cfg.chunk)
        },
        |p| {
            test_batch
                .as_ref()
                .map(|b| batch_loss(p, b, rhs, &tableau, cfg.chunk))
                .transpose()
        },
    )
}

/// Input/target pairs `(G u_n, S_n)` of the discrete corrective forcing.
#[derive(Debug, Clone, Default)]
pub struct ForcingPairs {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl ForcingPairs {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.inputs.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> ForcingPairs {
        let d = self.dim;
        let mut out = ForcingPairs {
            dim: d,
            ..Default::default()
        };
        for &i in idx {
            out.inputs.extend_from_slice(&self.inputs[i * d..(i + 1) * d]);
            out.targets.extend_from_slice(&self.targets[i * d..(i + 1) * d]);
        }
        out
    }
}

/// `S_n = (G u_{n+1} - ERK_step(R^L, G u_n)) / dt_L` at stride `dt_L / dt_data`,
/// split into train and test parts by time.
pub fn discrete_targets(
    data: &Dataset,
    low: &dyn Rhs,
    tableau: &ButcherTableau,
    dt_l: f64,
    split: f64,
) -> Result<(ForcingPairs, ForcingPairs)> {
    let stride = stride_for(dt_l, data.dt())?;
    let d = data.dim();
    let mut train = ForcingPairs {
        dim: d,
        ..Default::default()
    };
    let mut test = train.clone();
    let mut stepper = ErkStepper::new(tableau, d);
    for tr in data.trajectories() {
        let last = tr.len() - 1;
        let cut = (split * last as f64).round() as usize;
        let mut n = 0;
        while n + stride <= last {
            let mut u = tr.state(n).to_vec();
            stepper.step(low, tr.time(n), &mut u, dt_l)?;
            let next = tr.state(n + stride);
            let part = if n + stride <= cut { &mut train } else if n >= cut { &mut test } else { n += stride; continue };
            part.inputs.extend_from_slice(tr.state(n));
            part.targets.extend(next.iter().zip(&u).map(|(g, l)| (g - l) / dt_l));
            n += stride;
        }
    }
    Ok((train, test))
}

fn supervised_loss(params: &MlpParams, pairs: &ForcingPairs, n_total: usize) -> Result<(f64, Tape)> {
    let n = pairs.len();
    record(&params.tensors(), |tape, p| {
        let x = tape.input(n, pairs.dim, pairs.inputs.clone())?;
        let y = mlp_on_tape(tape, p, x)?;
        let t = tape.input(n, pairs.dim, pairs.targets.clone())?;
        let d = tape.sub(y, t)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 1.0 / n_total as f64))
    })
}

/// Mean squared error of `S_theta(G u_n)` against `S_n`.
pub fn forcing_loss(params: &MlpParams, pairs: &ForcingPairs) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    supervised_loss(params, pairs, pairs.len()).map(|(l, _)| l)
}

/// Fits the discrete corrective forcing by supervised regression on pairs
/// built with step `cfg.dt`; `cfg.window` is ignored.
pub fn train_discrete_forcing(
    data: &Dataset,
    low: &dyn Rhs,
    state: TrainState,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tableau = ButcherTableau::by_name(&cfg.tableau)?;
    let (train, test) = discrete_targets(data, low, &tableau, cfg.dt, cfg.split)?;
    if train.is_empty() {
        return Err(Error::Invalid("no training pairs for the discrete forcing".into()));
    }
    optimize(
        state,
        cfg,
        checkpoint_dir,
        |p, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..train.len())).collect();
            let batch = train.subset(&idx);
            let (_, tape) = supervised_loss(p, &batch, batch.len())?;
            Ok(backward(&tape))
        },
        |p| if test.is_empty() { Ok(None) } else { forcing_loss(p, &test).map(Some) },
    )
}

/// Low-order step followed by the Euler-type correction
/// `u_{n+1} = ERK_step(u_n) + dt S_theta(u_n)`.
pub fn predict_discrete(
    params: &MlpParams,
    low: &dyn Rhs,
    tableau: &ButcherTableau,
    u0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    params.expect_dims(low.dim(), low.dim())?;
    let mut traj = Trajectory::new(0.0, dt, u0.len());
    traj.push(u0)?;
    let mut stepper = ErkStepper::new(tableau, u0.len());
    let mut u = u0.to_vec();
    for n in 0..n_steps {
        let s = params.forward(&u)?;
        stepper.step(low, n as f64 * dt, &mut u, dt).map_err(|e| e.at_step(n))?;
        for (x, si) in u.iter_mut().zip(&s) {
            *x += dt * si;
        }
        if u.iter().any(|x| !x.is_finite() || x.abs() > crate::ode::BLOWUP_THRESHOLD) {
            return Err(Error::Blowup {
                step: Some(n),
                stage: tableau.stages(),
            });
        }
        traj.push(&u)?;
    }
    Ok(traj)
}
