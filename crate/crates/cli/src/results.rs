//! The results document and the helpers that write artifacts.

use std::fs;
use std::path::Path;

use eegbench::evaluation::Predictions;
use eegbench::model::ModelKind;
use eegbench::training::History;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Train,
    Segcurve,
    Loso,
    Crossfreq,
    Crosstask,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Segcurve => "segcurve",
            Self::Loso => "loso",
            Self::Crossfreq => "crossfreq",
            Self::Crosstask => "crosstask",
        }
    }
}

/// Stored predictions of one model on one evaluation set, with the
/// coordinates needed to place it in a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub seed: u64,
    pub window_s: f64,
    /// Sampling rate of the evaluated windows.
    pub rate: f64,
    /// Held-out LOSO unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Task name of a cross-task row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default)]
    pub control: bool,
    pub predictions: Predictions,
}

/// Training curve of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub seed: u64,
    pub window_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub model: ModelKind,
    pub seed: u64,
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: String,
    pub n_segments: usize,
    pub window_len: usize,
    /// Segments per task label, in order of first appearance.
    pub per_task: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    /// Hashes of the result documents merged by `report`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged: Vec<String>,
    #[serde(default)]
    pub evaluations: Vec<Evaluation>,
    #[serde(default)]
    pub runs: Vec<RunLog>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SplitCount>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Results {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> CliResult<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_hash: config_hash(cfg)?,
            input_hash: None,
            config: Some(cfg.clone()),
            merged: Vec::new(),
            evaluations: Vec::new(),
            runs: Vec::new(),
            skipped: Vec::new(),
            segments: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> CliResult<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

/// Content id of a file in the manner of a git blob, with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Tree id over `(name, blob id)` entries, sorted by name.
pub fn tree_hash(entries: &[(String, String)]) -> String {
    let mut sorted: Vec<&(String, String)> = entries.iter().collect();
    sorted.sort();
    let listing: String = sorted
        .iter()
        .map(|(name, id)| format!("{id} {name}\n"))
        .collect();
    sha256_hex(listing.as_bytes())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_results(path: &Path) -> CliResult<Results> {
    let file = if path.is_dir() {
        path.join(RESULTS_FILE)
    } else {
        path.to_path_buf()
    };
    let bytes = fs::read(&file).map_err(|e| {
        crate::error::CliError::Data(format!("cannot read {}: {e}", file.display()))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}
