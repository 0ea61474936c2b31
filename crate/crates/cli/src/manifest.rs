//! Data and run manifests with content checksums.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subgrid_core::trajectory::Trajectory;

use crate::config::Experiment;
use crate::error::CliError;

pub const DATA_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Full Lorenz 96 state.
    Truth,
    /// High-order PDE solution.
    High,
    /// High-order solution projected to the low order.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub role: Role,
    pub trajectory: usize,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub experiment: Experiment,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation and the files it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(subgrid_core::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

impl DataManifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(DATA_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| {
            CliError::Io(format!(
                "{}: {e} (run `subgrid generate` first or point paths.data_dir / SGN_DATA_DIR at a dataset)",
                path.display()
            ))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn entries(&self, role: Role) -> Vec<&FileEntry> {
        self.files.iter().filter(|f| f.role == role).collect()
    }

    /// Loads every file of `role`, verifying checksums.
    pub fn load_role(&self, dir: &Path, role: Role) -> Result<Vec<Trajectory>, CliError> {
        self.entries(role).into_iter().map(|f| load_verified(dir, f)).collect()
    }

    /// The `index`-th file of `role`.
    pub fn load_one(&self, dir: &Path, role: Role, index: usize) -> Result<Trajectory, CliError> {
        let entries = self.entries(role.clone());
        let f = entries.get(index).ok_or_else(|| {
            CliError::Config(format!("dataset holds {} {role:?} trajectories, index {index} requested", entries.len()))
        })?;
        load_verified(dir, f)
    }
}

fn load_verified(dir: &Path, f: &FileEntry) -> Result<Trajectory, CliError> {
    let path: PathBuf = dir.join(&f.path);
    let sum = sha256_file(&path)?;
    if sum != f.sha256 {
        return Err(CliError::Io(format!(
            "{}: checksum {sum} does not match the manifest ({})",
            path.display(),
            f.sha256
        )));
    }
    Ok(Trajectory::load(&path)?)
}
