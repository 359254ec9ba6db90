//! Run manifests and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub loss: String,
    pub regularizer: String,
    pub intercept: bool,
    pub constraint: Option<String>,
    pub error_fn: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub log: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to re-run a command and reproduce its numeric outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub model: Option<ModelRecord>,
    pub grid: Option<GridRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub tolerances: Option<Tolerances>,
    pub engine_override: Option<String>,
    pub jobs: Option<usize>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<StageTime>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            model: None,
            grid: None,
            seeds: BTreeMap::new(),
            tolerances: None,
            engine_override: None,
            jobs: None,
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn stage(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageTime {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(path, &json)
    }
}

/// `out.csv` pairs with `out.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(path, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_vec_pretty(value).map_err(|e| CliError::Usage(format!("cannot serialize output: {e}")))?;
    write_atomic(path, &json)
}
