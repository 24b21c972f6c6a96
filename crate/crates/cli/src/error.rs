use eegbench::BenchError;
use numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Bench(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Bench(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Bench(BenchError::Config(_)) => EXIT_CONFIG,
            Self::Bench(
                BenchError::NanLoss(_)
                | BenchError::Degenerate(_)
                | BenchError::Num(NumError::NonFinite(_)),
            ) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}
