//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subgrid_core::experiments::{L96Experiment, PdeExperiment};
use subgrid_core::training::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    L96(L96Experiment),
    Pde(PdeExperiment),
}

/// How the learned source enters the low-order system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Inside the right-hand side, trained through the integrator.
    #[default]
    Continuous,
    /// Added after each step, trained on one-step forcing targets.
    Discrete,
}

fn default_tsit5() -> String {
    "tsit5".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Ignored for Lorenz 96, whose slow model always uses RK4.
    #[serde(default = "default_tsit5")]
    pub tableau: String,
    /// Defaults to the training timestep, then to the data timestep.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Defaults to the span of the reference trajectory.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Manifest index of the trajectory supplying the initial state.
    #[serde(default)]
    pub trajectory: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            tableau: default_tsit5(),
            dt: None,
            t_end: None,
            trajectory: 0,
        }
    }
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Uniform samples per spectrum; a power of two.
    #[serde(default = "default_samples")]
    pub spectrum_samples: usize,
    /// Times at which spectra are written; the last common time if empty.
    #[serde(default)]
    pub spectrum_times: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            spectrum_samples: default_samples(),
            spectrum_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dts: Vec<f64>,
    pub times: Vec<f64>,
    #[serde(default = "default_tsit5")]
    pub tableau: String,
    /// Discrete-forcing parameters to include as a third method.
    #[serde(default)]
    pub discrete_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub p: usize,
    pub dt: f64,
    /// Evaluate the network source as well (zero output unless a checkpoint
    /// is given).
    #[serde(default)]
    pub net: bool,
}

fn default_t_end() -> f64 {
    1.0
}
fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub variants: Vec<VariantConfig>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_tsit5")]
    pub tableau: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    /// Parses and validates `path`; relative paths inside the file are
    /// resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = absolute(&base)?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.paths.data_dir);
        fix(&mut cfg.paths.out_dir);
        fix(&mut cfg.paths.checkpoint);
        if let Some(s) = &mut cfg.sweep {
            fix(&mut s.discrete_checkpoint);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match &self.experiment {
            Experiment::L96(e) => {
                e.model.validate()?;
                if e.n_traj == 0 || !(e.t_end > 0.0) || !(e.dt > 0.0) {
                    return Err(CliError::Config(
                        "l96 experiment needs n_traj >= 1 and positive t_end and dt".into(),
                    ));
                }
            }
            Experiment::Pde(e) => e.validate()?,
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(dt) = self.predict.dt {
            if !(dt > 0.0) {
                return Err(CliError::Config(format!("predict.dt must be positive, got {dt}")));
            }
        }
        let n = self.evaluate.spectrum_samples;
        if !n.is_power_of_two() || n < 4 {
            return Err(CliError::Config(format!(
                "evaluate.spectrum_samples must be a power of two >= 4, got {n}"
            )));
        }
        if let Some(s) = &self.sweep {
            if s.dts.is_empty() || s.times.is_empty() || s.dts.iter().any(|d| !(*d > 0.0)) {
                return Err(CliError::Config("sweep needs positive dts and at least one time".into()));
            }
        }
        if let Some(t) = &self.timing {
            if t.variants.is_empty() || t.variants.iter().any(|v| !(v.dt > 0.0) || v.p == 0) {
                return Err(CliError::Config("timing variants need p >= 1 and positive dt".into()));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<&TrainConfig, CliError> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a \"train\" section".into()))
    }

    pub fn pde(&self) -> Result<&PdeExperiment, CliError> {
        match &self.experiment {
            Experiment::Pde(e) => Ok(e),
            Experiment::L96(_) => Err(CliError::Config("this command needs a pde experiment".into())),
        }
    }
}

pub fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
        Ok(cwd.join(p))
    }
}
