//! Stored predictions and the full metric bundle derived from them.

use numcore::{softmax, NdArray};
use serde::{Deserialize, Serialize};

use super::calibration::calibration;
use super::metrics::{movie_confusion_rate, Confusion};
use crate::error::{BenchError, Result};
use crate::model::Model;
use crate::preprocess::SegmentSet;
use crate::training::{argmax, predict_logits};

/// Per-segment class probabilities with their labels; every reported
/// metric can be recomputed from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn from_logits(logits: &NdArray, labels: &[usize]) -> Result<Self> {
        let &[n, k] = logits.shape() else {
            return Err(BenchError::Data(format!(
                "logits must be [n, classes], got {:?}",
                logits.shape()
            )));
        };
        if n != labels.len() {
            return Err(BenchError::Data(format!(
                "{n} logit rows for {} labels",
                labels.len()
            )));
        }
        let probs = logits
            .data()
            .chunks(k.max(1))
            .map(|row| Ok(softmax(&NdArray::vector(row))?.into_data()))
            .collect::<Result<_>>()?;
        Ok(Self {
            labels: labels.to_vec(),
            probs,
        })
    }

    /// Inference-mode predictions of `model` on every segment of `set`.
    pub fn from_model(model: &Model, set: &SegmentSet, batch_size: usize) -> Result<Self> {
        Self::from_logits(&predict_logits(model, set, batch_size)?, &set.labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Arg-max class per segment (ties to the lowest index).
    pub fn hard(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }

    /// Fraction of correct arg-max predictions, counted in one pass.
    pub fn accuracy(&self) -> f64 {
        let correct = self
            .hard()
            .iter()
            .zip(&self.labels)
            .filter(|(p, y)| p == y)
            .count();
        correct as f64 / self.len() as f64
    }

    pub fn report(&self, n_classes: usize) -> Result<EvalReport> {
        let confusion = Confusion::new(&self.hard(), &self.labels, n_classes)?;
        let cal = calibration(&self.probs, &self.labels)?;
        Ok(EvalReport {
            n_samples: self.len(),
            accuracy: confusion.accuracy(),
            macro_f1: confusion.macro_f1(),
            movie_confusion_rate: movie_confusion_rate(&confusion).ok(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            nll: cal.nll,
            brier: cal.brier,
            ece: cal.ece,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
    /// Percent; absent when the evaluated set holds no movie segments.
    pub movie_confusion_rate: Option<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub nll: f64,
    pub brier: f64,
    /// Percent.
    pub ece: f64,
}
