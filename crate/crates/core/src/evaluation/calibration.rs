//! Probabilistic scores: negative log-likelihood, Brier score and expected
//! calibration error.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::training::argmax;

pub const ECE_BINS: usize = 15;
/// Probability floor inside the logarithm of the NLL.
pub const NLL_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub nll: f64,
    /// Mean over samples of the squared error summed over classes.
    pub brier: f64,
    /// Expected calibration error in percent.
    pub ece: f64,
}

/// Confidence bin of a max-probability in `(i/B, (i+1)/B]`; zero goes to
/// the first bin.
fn bin_of(confidence: f64) -> usize {
    ((confidence * ECE_BINS as f64).ceil() as usize).clamp(1, ECE_BINS) - 1
}

/// Scores `probs` (one row per sample) against integer labels.
pub fn calibration(probs: &[Vec<f64>], labels: &[usize]) -> Result<Calibration> {
    if probs.len() != labels.len() {
        return Err(BenchError::Data(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(BenchError::Data(
            "calibration of an empty prediction list".into(),
        ));
    }
    let mut nll = 0.0;
    let mut brier = 0.0;
    let mut bins = [(0usize, 0usize, 0.0f64); ECE_BINS];
    for (row, &y) in probs.iter().zip(labels) {
        if y >= row.len() {
            return Err(BenchError::Data(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        let total: f64 = row.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
            return Err(BenchError::Data(format!(
                "probability row sums to {total}, not 1"
            )));
        }
        nll -= row[y].max(NLL_FLOOR).ln();
        brier += row
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let target = if k == y { 1.0 } else { 0.0 };
                (p - target) * (p - target)
            })
            .sum::<f64>();
        let pred = argmax(row);
        let conf = row[pred];
        let bin = &mut bins[bin_of(conf)];
        bin.0 += 1;
        bin.1 += usize::from(pred == y);
        bin.2 += conf;
    }
    let n = probs.len() as f64;
    let ece: f64 = bins
        .iter()
        .filter(|b| b.0 > 0)
        .map(|&(count, correct, conf_sum)| {
            let m = count as f64;
            (m / n) * (correct as f64 / m - conf_sum / m).abs()
        })
        .sum();
    Ok(Calibration {
        nll: nll / n,
        brier: brier / n,
        ece: 100.0 * ece,
    })
}
