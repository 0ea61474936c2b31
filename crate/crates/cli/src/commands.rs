//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use subgrid_core::autodiff::{grad_check_report, relative_error, Tape, Tensor, Var};
use subgrid_core::dg::{DgNeuralRhs, DgNeuralTape, DgOperator, Mesh, Projection};
use subgrid_core::diagnostics::{compare_fields, energy_spectrum, fmt17, timestep_sweep, SweepMethod};
use subgrid_core::experiments::{time_rollout, PdeExperiment};
use subgrid_core::lorenz96::L96NeuralTape;
use subgrid_core::mlp::MlpParams;
use subgrid_core::node::TapeRhs;
use subgrid_core::ode::ButcherTableau;
use subgrid_core::training::{
    load_checkpoint, record_window_loss, sample_windows, write_loss_history, Dataset, Part, TrainState,
};
use subgrid_core::trajectory::Trajectory;

use crate::config::{Experiment, Method, RunConfig};
use crate::error::CliError;
use crate::manifest::{sha256_file, write_json, DataManifest, FileEntry, OutputEntry, Role, RunManifest, DATA_MANIFEST};

/// Resolved inputs shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
}

impl Context {
    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn manifest(&self) -> Result<DataManifest, CliError> {
        let m = DataManifest::load(&self.data)?;
        if m.experiment != self.cfg.experiment {
            return Err(CliError::Config(format!(
                "dataset in {} was generated for {} but the config describes {}",
                self.data.display(),
                describe(&m.experiment),
                describe(&self.cfg.experiment)
            )));
        }
        Ok(m)
    }

    /// Training data role of the experiment.
    fn role(&self) -> Role {
        match self.cfg.experiment {
            Experiment::L96(_) => Role::Truth,
            Experiment::Pde(_) => Role::Filtered,
        }
    }

    fn record_run(&self, command: &str, outputs: &[PathBuf]) -> Result<(), CliError> {
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(OutputEntry {
                    path: p.strip_prefix(&self.out).unwrap_or(p).display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let m = RunManifest {
            command: command.into(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            outputs,
        };
        write_json(&self.out.join(format!("{command}_manifest.json")), &m)
    }

    fn checkpoint(&self, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.cfg.paths.checkpoint.clone())
    }
}

fn describe(e: &Experiment) -> String {
    match e {
        Experiment::L96(l) => format!(
            "l96 (K={}, J={}, n_traj={}, dt={}, t_end={})",
            l.model.K, l.model.J, l.n_traj, l.dt, l.t_end
        ),
        Experiment::Pde(p) => format!(
            "{:?} (n_elem={}, p_high={}, p_low={}, dt_high={}, t_end={}, n_traj={})",
            p.pde.kind, p.n_elem, p.p_high, p.p_low, p.dt_high, p.t_end, p.n_traj
        ),
    }
}

/// Network input and output widths the experiment needs.
fn net_dims(cfg: &RunConfig) -> Result<(usize, usize), CliError> {
    Ok(match &cfg.experiment {
        Experiment::L96(e) => e.scope.net_dims(e.model.K),
        Experiment::Pde(e) => {
            let d = e.low_mesh()?.dofs();
            (d, d)
        }
    })
}

fn load_params(cfg: &RunConfig, path: &Path) -> Result<MlpParams, CliError> {
    let p = MlpParams::load(path)?;
    let (di, dout) = net_dims(cfg)?;
    if p.d_in() != di || p.d_out() != dout {
        return Err(CliError::Config(format!(
            "checkpoint {} maps {} -> {} values but {} needs {di} -> {dout}",
            path.display(),
            p.d_in(),
            p.d_out(),
            describe(&cfg.experiment)
        )));
    }
    Ok(p)
}

fn init_params(cfg: &RunConfig, seed: u64) -> Result<MlpParams, CliError> {
    Ok(match &cfg.experiment {
        Experiment::L96(e) => e.init_params(seed)?,
        Experiment::Pde(e) => e.init_params(seed)?,
    })
}

fn tape_rhs(cfg: &RunConfig) -> Result<Box<dyn TapeRhs>, CliError> {
    Ok(match &cfg.experiment {
        Experiment::L96(e) => Box::new(L96NeuralTape::new(e.model, e.scope)),
        Experiment::Pde(e) => Box::new(DgNeuralTape::new(e.low_operator()?)),
    })
}

// ---------------------------------------------------------------- generate

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.data).map_err(|e| CliError::io(&ctx.data, e))?;
    let seed = ctx.seed;
    let mut files = Vec::new();
    let mut save = |tr: &Trajectory, name: String, role: Role, i: usize| -> Result<(), CliError> {
        let path = ctx.data.join(&name);
        tr.save(&path)?;
        files.push(FileEntry {
            path: name,
            role,
            trajectory: i,
            seed: seed.wrapping_add(i as u64),
            sha256: sha256_file(&path)?,
        });
        Ok(())
    };
    match &ctx.cfg.experiment {
        Experiment::L96(e) => {
            for (i, tr) in e.generate(seed)?.iter().enumerate() {
                save(tr, format!("truth_{i:04}.sgnt"), Role::Truth, i)?;
            }
        }
        Experiment::Pde(e) => {
            for (i, s) in e.generate(seed)?.iter().enumerate() {
                save(&s.high, format!("high_{i:04}.sgnt"), Role::High, i)?;
                save(&s.filtered, format!("filtered_{i:04}.sgnt"), Role::Filtered, i)?;
            }
        }
    }
    let n = files.len();
    let manifest = DataManifest {
        experiment: ctx.cfg.experiment.clone(),
        seed,
        files,
    };
    write_json(&ctx.data.join(DATA_MANIFEST), &manifest)?;
    println!("wrote {n} trajectory files and {DATA_MANIFEST} to {}", ctx.data.display());
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train(ctx: &Context, resume: Option<PathBuf>) -> Result<(), CliError> {
    let mut tcfg = ctx.cfg.train_config()?.clone();
    tcfg.seed = ctx.seed;
    let manifest = ctx.manifest()?;
    let data = Dataset::new(manifest.load_role(&ctx.data, ctx.role())?)?;
    let state = match resume {
        Some(path) => {
            load_params(&ctx.cfg, &path)?;
            let (state, _) = load_checkpoint(&path)?;
            println!("resuming from {} at epoch {}", path.display(), state.epoch);
            state
        }
        None => TrainState::fresh(init_params(&ctx.cfg, ctx.seed)?, &tcfg)?,
    };
    ctx.ensure_out()?;
    let ckpt = ctx.out.join("checkpoints");
    let outcome = match (&ctx.cfg.experiment, ctx.cfg.method) {
        (Experiment::L96(e), Method::Continuous) => e.train(&data, state, &tcfg, Some(&ckpt))?,
        (Experiment::Pde(e), Method::Continuous) => e.train(&data, state, &tcfg, Some(&ckpt))?,
        (Experiment::Pde(e), Method::Discrete) => e.train_discrete(&data, state, &tcfg, Some(&ckpt))?,
        (Experiment::L96(_), Method::Discrete) => {
            return Err(CliError::Config("the discrete method applies to pde experiments only".into()))
        }
    };
    let loss = ctx.out.join("loss.csv");
    write_loss_history(&loss, &outcome.history)?;
    let last = outcome.history.last();
    println!(
        "trained to epoch {}: train loss {}, test loss {}",
        outcome.state.epoch,
        last.map(|r| fmt17(r.train_loss)).unwrap_or_else(|| "-".into()),
        last.and_then(|r| r.test_loss).map(fmt17).unwrap_or_else(|| "-".into())
    );
    let mut outputs = vec![loss, ckpt.join("final.sgnp"), ckpt.join("final.json")];
    if tcfg.checkpoint_every > 0 {
        for r in &outcome.history {
            if r.epoch % tcfg.checkpoint_every == 0 {
                outputs.push(ckpt.join(format!("checkpoint_{:06}.sgnp", r.epoch)));
            }
        }
    }
    ctx.record_run("train", &outputs)
}

// ---------------------------------------------------------------- predict

/// The timestep of a prediction: flag, then config, then training, then data.
fn predict_dt(ctx: &Context, flag: Option<f64>, data_dt: f64) -> f64 {
    flag.or(ctx.cfg.predict.dt)
        .or(ctx.cfg.train.as_ref().map(|t| t.dt))
        .unwrap_or(data_dt)
}

fn steps_for(span: f64, dt: f64) -> Result<usize, CliError> {
    let n = (span / dt).round();
    if !(dt > 0.0) || (n * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(CliError::Config(format!("horizon {span} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

/// Slow part of a full Lorenz 96 state trajectory; other trajectories pass
/// through.
fn comparable(cfg: &RunConfig, tr: Trajectory) -> Result<Trajectory, CliError> {
    match &cfg.experiment {
        Experiment::L96(e) if tr.dim() == e.model.dim() => Ok(e.slow(&tr)?),
        _ => Ok(tr),
    }
}

pub fn predict(ctx: &Context, checkpoint: Option<PathBuf>, dt: Option<f64>, output: Option<PathBuf>) -> Result<(), CliError> {
    let manifest = ctx.manifest()?;
    let reference = comparable(&ctx.cfg, manifest.load_one(&ctx.data, ctx.role(), ctx.cfg.predict.trajectory)?)?;
    let dt = predict_dt(ctx, dt, reference.dt);
    let span = ctx.cfg.predict.t_end.unwrap_or(reference.t_final() - reference.time(0));
    let n = steps_for(span, dt)?;
    let params = ctx.checkpoint(checkpoint).map(|p| load_params(&ctx.cfg, &p)).transpose()?;
    let u0 = reference.state(0);
    let tr = match &ctx.cfg.experiment {
        Experiment::L96(e) => e.predict(params.as_ref(), u0, dt, n)?,
        Experiment::Pde(e) => {
            let tab = ButcherTableau::by_name(&ctx.cfg.predict.tableau)?;
            match (ctx.cfg.method, &params) {
                (Method::Discrete, Some(p)) => e.predict_discrete(p, &tab, u0, dt, n)?,
                _ => e.predict(params.as_ref(), &tab, u0, dt, n)?,
            }
        }
    };
    let tr = tr.with_meta("augmented", params.is_some());
    ctx.ensure_out()?;
    let path = output.unwrap_or_else(|| ctx.out.join("prediction.sgnt"));
    tr.save(&path)?;
    println!("wrote {} states at dt {} to {}", tr.len(), fmt17(dt), path.display());
    ctx.record_run("predict", &[path])
}

// ---------------------------------------------------------------- evaluate

#[derive(Serialize)]
struct EvaluationSummary {
    max_l2_error: f64,
    max_relative_error: f64,
    final_l2_error: f64,
}

/// The low- or high-order mesh whose layout matches `dim`.
fn mesh_for(e: &PdeExperiment, dim: usize) -> Result<Mesh, CliError> {
    for m in [e.low_mesh()?, e.high_mesh()?] {
        if m.dofs() == dim {
            return Ok(m);
        }
    }
    Err(CliError::Config(format!(
        "trajectory of dimension {dim} matches neither the order {} nor the order {} mesh",
        e.p_low, e.p_high
    )))
}

pub fn evaluate(ctx: &Context, pred: &Path, reference: Option<PathBuf>) -> Result<(), CliError> {
    let pred_tr = comparable(&ctx.cfg, Trajectory::load(pred)?)?;
    let ref_tr = match reference {
        Some(p) => Trajectory::load(&p)?,
        None => ctx.manifest()?.load_one(&ctx.data, ctx.role(), ctx.cfg.predict.trajectory)?,
    };
    let ref_tr = comparable(&ctx.cfg, ref_tr)?;
    let mesh = match &ctx.cfg.experiment {
        Experiment::Pde(e) => Some(mesh_for(e, pred_tr.dim())?),
        Experiment::L96(_) => None,
    };
    let report = compare_fields(&pred_tr, &ref_tr, mesh.as_ref())?;
    ctx.ensure_out()?;
    let errors = ctx.out.join("errors.csv");
    report.write_csv(&errors)?;
    let mut outputs = vec![errors];
    if let Some(mesh) = &mesh {
        let n = ctx.cfg.evaluate.spectrum_samples;
        let times = if ctx.cfg.evaluate.spectrum_times.is_empty() {
            vec![*report.times.last().expect("aligned grids share t0")]
        } else {
            ctx.cfg.evaluate.spectrum_times.clone()
        };
        for t in times {
            let i = report
                .index_at(t)
                .ok_or_else(|| CliError::Config(format!("spectrum time {t} is outside the compared range")))?;
            let t_i = report.times[i];
            let idx = |tr: &Trajectory| ((t_i - tr.time(0)) / tr.dt).round() as usize;
            for (label, tr) in [("pred", &pred_tr), ("ref", &ref_tr)] {
                let s = energy_spectrum(mesh, tr.state(idx(tr)), n)?;
                let path = ctx.out.join(format!("spectrum_{label}_t{t_i}.csv"));
                s.write_csv(&path)?;
                outputs.push(path);
            }
        }
    }
    let summary = EvaluationSummary {
        max_l2_error: report.max_l2(),
        max_relative_error: report.max_relative(),
        final_l2_error: *report.l2.last().unwrap_or(&0.0),
    };
    let path = ctx.out.join("evaluation.json");
    write_json(&path, &summary)?;
    outputs.push(path);
    println!(
        "max L2 error {}, max relative error {}",
        fmt17(summary.max_l2_error),
        fmt17(summary.max_relative_error)
    );
    ctx.record_run("evaluate", &outputs)
}

// ---------------------------------------------------------------- sweep

pub fn sweep(ctx: &Context, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let e = ctx.cfg.pde()?;
    let sc = ctx
        .cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a \"sweep\" section".into()))?;
    let manifest = ctx.manifest()?;
    let reference = manifest.load_one(&ctx.data, Role::Filtered, ctx.cfg.predict.trajectory)?;
    let tab = ButcherTableau::by_name(&sc.tableau)?;
    let u0 = reference.state(0).to_vec();
    let continuous = ctx.checkpoint(checkpoint).map(|p| load_params(&ctx.cfg, &p)).transpose()?;
    let discrete = sc.discrete_checkpoint.as_ref().map(|p| load_params(&ctx.cfg, p)).transpose()?;

    let plain = |dt: f64, n: usize| e.predict(None, &tab, &u0, dt, n);
    let cont = |dt: f64, n: usize| e.predict(continuous.as_ref(), &tab, &u0, dt, n);
    let disc = |dt: f64, n: usize| e.predict_discrete(discrete.as_ref().expect("present when listed"), &tab, &u0, dt, n);
    let mut methods: Vec<SweepMethod<'_>> = vec![("plain", &plain)];
    if continuous.is_some() {
        methods.push(("continuous", &cont));
    }
    if discrete.is_some() {
        methods.push(("discrete", &disc));
    }
    let mesh = e.low_mesh()?;
    let table = timestep_sweep(&methods, &sc.dts, &reference, Some(&mesh), &sc.times)?;
    ctx.ensure_out()?;
    let path = ctx.out.join("sweep.csv");
    table.write_csv(&path)?;
    println!("wrote {} sweep rows to {}", table.rows.len(), path.display());
    ctx.record_run("sweep", &[path])
}

// ---------------------------------------------------------------- time

pub fn time(ctx: &Context, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let e = ctx.cfg.pde()?;
    let tc = ctx
        .cfg
        .timing
        .as_ref()
        .ok_or_else(|| CliError::Config("time needs a \"timing\" section".into()))?;
    let tab = ButcherTableau::by_name(&tc.tableau)?;
    let trained = ctx.checkpoint(checkpoint).map(|p| load_params(&ctx.cfg, &p)).transpose()?;
    let u_high = e.initial_state(ctx.seed)?;
    let mut rows = vec!["variant,p,dt,steps,first_seconds,median_seconds,stable".to_string()];
    for v in &tc.variants {
        if v.p > e.p_high {
            return Err(CliError::Config(format!("variant {} has order {} above p_high {}", v.name, v.p, e.p_high)));
        }
        let mesh = Mesh::new(e.n_elem, e.x0, e.x1, v.p)?;
        let op = DgOperator::new(e.pde, mesh)?;
        let u0 = if v.p == e.p_high {
            u_high.clone()
        } else {
            Projection::l2(e.p_high, v.p)?.apply(&u_high)
        };
        let steps = steps_for(tc.t_end, v.dt)?;
        let timing = if v.net {
            let params = match &trained {
                Some(p) if v.p == e.p_low => p.clone(),
                _ => zero_output(MlpParams::init(op.dofs(), op.dofs(), ctx.seed)?),
            };
            time_rollout(&DgNeuralRhs::new(&op, &params)?, &tab, &u0, v.dt, steps, tc.repeats)
        } else {
            time_rollout(&op, &tab, &u0, v.dt, steps, tc.repeats)
        };
        let row = match timing {
            Ok(t) => format!("{},{},{},{steps},{},{},true", v.name, v.p, fmt17(v.dt), fmt17(t.first), fmt17(t.median)),
            Err(err) if err.is_blowup() => format!("{},{},{},{steps},,,false", v.name, v.p, fmt17(v.dt)),
            Err(err) => return Err(err.into()),
        };
        println!("{row}");
        rows.push(row);
    }
    ctx.ensure_out()?;
    let path = ctx.out.join("timing.csv");
    fs::write(&path, rows.join("\n") + "\n").map_err(|err| CliError::io(&path, err))?;
    ctx.record_run("time", &[path])
}

/// Same architecture with the output layer zeroed: full evaluation cost,
/// no contribution.
fn zero_output(mut p: MlpParams) -> MlpParams {
    let last = p.weights.len() - 1;
    p.weights[last] = Tensor::zeros(p.weights[last].rows, p.weights[last].cols);
    p.biases[last] = Tensor::zeros(p.biases[last].rows, p.biases[last].cols);
    p
}

// ---------------------------------------------------------------- gradcheck

#[derive(Serialize)]
struct GradcheckSummary {
    h: f64,
    windows: usize,
    checked: usize,
    max_entrywise_relative_error: f64,
    normwise_relative_error: f64,
}

/// Up to `per_slot` evenly spread entries of every tensor.
fn spread_entries(params: &[&Tensor], per_slot: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, t) in params.iter().enumerate() {
        let n = t.len();
        let k = per_slot.min(n);
        out.extend((0..k).map(|j| (s, j * n / k)));
    }
    out
}

pub fn gradcheck(
    ctx: &Context,
    checkpoint: Option<PathBuf>,
    windows: usize,
    entries: usize,
    h: f64,
) -> Result<(), CliError> {
    if ctx.cfg.method == Method::Discrete {
        return Err(CliError::Config("gradcheck applies to the continuous method".into()));
    }
    if windows == 0 || entries == 0 {
        return Err(CliError::Config("gradcheck needs at least one window and one entry".into()));
    }
    let tcfg = ctx.cfg.train_config()?;
    let manifest = ctx.manifest()?;
    let data = Dataset::new(manifest.load_role(&ctx.data, ctx.role())?)?;
    let batch = sample_windows(&data, tcfg, Part::Train, windows, ctx.seed)?;
    let params = match ctx.checkpoint(checkpoint) {
        Some(p) => load_params(&ctx.cfg, &p)?,
        None => init_params(&ctx.cfg, ctx.seed)?,
    };
    let rhs = tape_rhs(&ctx.cfg)?;
    let tab = ButcherTableau::by_name(&tcfg.tableau)?;
    let tensors = params.tensors();
    let build = |tape: &mut Tape, p: &[Var]| record_window_loss(tape, p, &batch, rhs.as_ref(), &tab, batch.n);
    let mut pairs = Vec::new();
    for e in spread_entries(&tensors, entries) {
        let rep = grad_check_report(&tensors, h, Some(&[e]), build)?;
        let w = rep.worst.expect("one entry checked");
        pairs.push((w.2, w.3));
    }
    let entrywise = pairs.iter().map(|&(a, f)| relative_error(a, f)).fold(0.0, f64::max);
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(1e-300);
    let normwise = pairs.iter().map(|p| (p.0 - p.1).abs()).fold(0.0, f64::max) / scale;
    let summary = GradcheckSummary {
        h,
        windows,
        checked: pairs.len(),
        max_entrywise_relative_error: entrywise,
        normwise_relative_error: normwise,
    };
    println!(
        "checked {} entries: max entrywise relative error {}, normwise {}",
        summary.checked,
        fmt17(entrywise),
        fmt17(normwise)
    );
    ctx.ensure_out()?;
    let path = ctx.out.join("gradcheck.json");
    write_json(&path, &summary)?;
    ctx.record_run("gradcheck", &[path])
}
