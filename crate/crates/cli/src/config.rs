//! Experiment configuration: one JSON document whose every key has a default.

use std::fs;
use std::path::{Path, PathBuf};

use eegbench::datagen::SynthConfig;
use eegbench::model::{ModelKind, ModelSpec};
use eegbench::preprocess::PrepConfig;
use eegbench::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegcurveConfig {
    /// Window lengths in seconds, one curve point each.
    pub windows_s: Vec<f64>,
}

impl Default for SegcurveConfig {
    fn default() -> Self {
        Self {
            windows_s: vec![8.0, 16.0, 32.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossfreqConfig {
    /// Evaluation rates in Hz; none may exceed the training rate.
    pub rates: Vec<f64>,
}

impl Default for CrossfreqConfig {
    fn default() -> Self {
        Self {
            rates: vec![250.0, 128.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrosstaskConfig {
    /// In-distribution task whose test windows form the control row.
    pub control_task: String,
}

impl Default for CrosstaskConfig {
    fn default() -> Self {
        Self {
            control_task: "resting".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed: the dataset seed for `synth`, and the offset added to each
    /// entry of `train.seeds` for training runs.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub synth: SynthConfig,
    pub prep: PrepConfig,
    /// Hyperparameters of every architecture. `in_channels` is taken from
    /// the dataset.
    pub model: ModelSpec,
    /// Architectures to run; empty means `model.kind` alone.
    pub models: Vec<ModelKind>,
    pub train: TrainConfig,
    pub segcurve: SegcurveConfig,
    pub crossfreq: CrossfreqConfig,
    pub crosstask: CrosstaskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            synth: SynthConfig::default(),
            prep: PrepConfig::default(),
            model: ModelSpec::default(),
            models: Vec::new(),
            train: TrainConfig::default(),
            segcurve: SegcurveConfig::default(),
            crossfreq: CrossfreqConfig::default(),
            crosstask: CrosstaskConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        // serde names the valid keys of the offending section in its message
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model_kinds(&self) -> Vec<ModelKind> {
        if self.models.is_empty() {
            vec![self.model.kind]
        } else {
            self.models.clone()
        }
    }

    /// The architecture section for `kind`, sized to the data.
    pub fn spec_for(&self, kind: ModelKind, in_channels: usize) -> ModelSpec {
        ModelSpec {
            kind,
            in_channels,
            ..self.model.clone()
        }
    }

    /// Training seeds after applying the base seed.
    pub fn run_seeds(&self) -> Vec<u64> {
        self.train.seeds.iter().map(|s| self.seed + s).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.prep.validate()?;
        self.train.validate()?;
        for kind in self.model_kinds() {
            self.spec_for(kind, self.model.in_channels).validate()?;
        }
        let mut kinds = self.model_kinds();
        kinds.sort_by_key(|k| k.as_str());
        kinds.dedup();
        if kinds.len() != self.model_kinds().len() {
            return Err(CliError::Config(
                "models must not repeat an architecture".into(),
            ));
        }
        if self.segcurve.windows_s.iter().any(|w| !(*w > 0.0)) {
            return Err(CliError::Config(
                "segcurve.windows_s must be positive".into(),
            ));
        }
        if self.crossfreq.rates.iter().any(|r| !(*r > 0.0)) {
            return Err(CliError::Config("crossfreq.rates must be positive".into()));
        }
        Ok(())
    }
}
