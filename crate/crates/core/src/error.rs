use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("corrupt file {path}: {detail} (expected {expected} bytes, found {actual} bytes after header offset {header_len})")]
    Corrupt {
        path: PathBuf,
        detail: String,
        header_len: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite loss at epoch {}, batch {}; largest parameter norms: {}", .0.epoch, .0.batch, .0.summary())]
    NanLoss(Box<NanDiagnostic>),
    #[error("degenerate: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Where a training run blew up, recorded for the abort report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NanDiagnostic {
    pub epoch: usize,
    pub batch: usize,
    pub param_norms: Vec<(String, f64)>,
}

impl NanDiagnostic {
    fn summary(&self) -> String {
        let mut norms = self.param_norms.clone();
        norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Less));
        norms
            .iter()
            .take(5)
            .map(|(n, v)| format!("{n}={v:.3e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
