//! Serializable architecture descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::recording::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    S5,
    S4,
    Cnn,
    Lstm,
    Eegxf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::S5, Self::S4, Self::Cnn, Self::Lstm, Self::Eegxf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::S5 => "s5",
            Self::S4 => "s4",
            Self::Cnn => "cnn",
            Self::Lstm => "lstm",
            Self::Eegxf => "eegxf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                BenchError::Config(format!(
                    "unknown model kind {s:?}; expected one of s5, s4, cnn, lstm, eegxf"
                ))
            })
    }
}

/// Bidirectional diagonal SSM stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S5Config {
    pub hidden: usize,
    /// Complex states per block, split evenly between the two directions
    /// when bidirectional.
    pub state: usize,
    pub blocks: usize,
    pub bidirectional: bool,
    pub dropout: f64,
}

impl Default for S5Config {
    fn default() -> Self {
        Self {
            hidden: 192,
            state: 64,
            blocks: 3,
            bidirectional: true,
            dropout: 0.1,
        }
    }
}

/// Unidirectional stack whose layers apply the SSM as an FFT convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S4Config {
    pub hidden: usize,
    pub state: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for S4Config {
    fn default() -> Self {
        Self {
            hidden: 64,
            state: 64,
            layers: 3,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Output channels of each conv stage.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![256, 512, 512],
            kernel: 11,
            pool: 2,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 2,
            bidirectional: true,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegxfConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub dropout: f64,
    /// Time steps merged into one token.
    pub patch: usize,
    /// Weight variance of the tokenizer relative to `1/fan_in`.
    pub input_gain: f64,
}

impl Default for EegxfConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            layers: 2,
            ff: 256,
            dropout: 0.1,
            patch: 8,
            input_gain: 2.0,
        }
    }
}

/// Architecture choice, every family's hyperparameters and the
/// initialization seed. Only the section named by `kind` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seed: u64,
    pub in_channels: usize,
    pub n_classes: usize,
    pub s5: S5Config,
    pub s4: S4Config,
    pub cnn: CnnConfig,
    pub lstm: LstmConfig,
    pub eegxf: EegxfConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::S5,
            seed: 0,
            in_channels: 64,
            n_classes: NUM_CLASSES,
            s5: S5Config::default(),
            s4: S4Config::default(),
            cnn: CnnConfig::default(),
            lstm: LstmConfig::default(),
            eegxf: EegxfConfig::default(),
        }
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(BenchError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(BenchError::Config(format!(
            "{name} must lie in [0, 1), got {v}"
        )));
    }
    Ok(())
}

impl ModelSpec {
    pub fn of(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("in_channels", self.in_channels)?;
        if self.n_classes < 2 {
            return Err(BenchError::Config("n_classes must be at least 2".into()));
        }
        match self.kind {
            ModelKind::S5 => {
                let c = &self.s5;
                positive("s5.hidden", c.hidden)?;
                positive("s5.state", c.state)?;
                positive("s5.blocks", c.blocks)?;
                probability("s5.dropout", c.dropout)?;
                if c.bidirectional && !c.state.is_multiple_of(2) {
                    return Err(BenchError::Config(format!(
                        "s5.state must be even when bidirectional (got {})",
                        c.state
                    )));
                }
            }
            ModelKind::S4 => {
                let c = &self.s4;
                positive("s4.hidden", c.hidden)?;
                positive("s4.state", c.state)?;
                positive("s4.layers", c.layers)?;
                probability("s4.dropout", c.dropout)?;
            }
            ModelKind::Cnn => {
                let c = &self.cnn;
                if c.channels.is_empty() || c.channels.contains(&0) {
                    return Err(BenchError::Config(
                        "cnn.channels must be a non-empty list of positive widths".into(),
                    ));
                }
                positive("cnn.kernel", c.kernel)?;
                positive("cnn.pool", c.pool)?;
                probability("cnn.dropout", c.dropout)?;
            }
            ModelKind::Lstm => {
                let c = &self.lstm;
                positive("lstm.hidden", c.hidden)?;
                positive("lstm.layers", c.layers)?;
                probability("lstm.dropout", c.dropout)?;
            }
            ModelKind::Eegxf => {
                let c = &self.eegxf;
                positive("eegxf.d_model", c.d_model)?;
                positive("eegxf.heads", c.heads)?;
                positive("eegxf.layers", c.layers)?;
                positive("eegxf.ff", c.ff)?;
                positive("eegxf.patch", c.patch)?;
                probability("eegxf.dropout", c.dropout)?;
                if !c.d_model.is_multiple_of(c.heads) {
                    return Err(BenchError::Config(format!(
                        "eegxf.d_model {} is not divisible by {} heads",
                        c.d_model, c.heads
                    )));
                }
                if !(c.input_gain > 0.0) {
                    return Err(BenchError::Config(
                        "eegxf.input_gain must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
