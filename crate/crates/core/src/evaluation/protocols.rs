//! Robustness protocols: leave-one-subject-out, zero-shot sampling-rate
//! transfer and out-of-distribution task probing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::Predictions;
use crate::error::{BenchError, Result};
use crate::model::{Model, ModelSpec};
use crate::preprocess::{
    resample, segment, segment_whole, split_then_segment, zscore, PrepConfig, SegmentSet, Split,
    SplitRatios,
};
use crate::recording::{Recording, CLASS_NAMES};
use crate::training::{fit, mean_std, History, TrainConfig};

/// Held-out unit of a LOSO fold: one subject's session.
fn unit_key(rec: &Recording) -> String {
    format!(
        "{}/{}",
        rec.subject_id,
        rec.session.as_deref().unwrap_or("-")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub unit: String,
    pub held_out_subject: String,
    pub accuracy: f64,
    pub f1: f64,
    pub n_test_segments: usize,
    /// Subjects whose data trained this fold.
    pub train_subjects: Vec<String>,
    pub best_epoch: usize,
    pub history: History,
    pub predictions: Predictions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldResult>,
    pub skipped: Vec<SkippedFold>,
    pub summary: Option<FoldSummary>,
}

pub fn fold_summary(accuracies: &[f64]) -> Result<FoldSummary> {
    let ms = mean_std(accuracies)?;
    Ok(FoldSummary {
        mean: ms.mean,
        std: ms.std,
        min: accuracies.iter().copied().fold(f64::INFINITY, f64::min),
        max: accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n_folds: accuracies.len(),
    })
}

fn merge(
    parts: impl IntoIterator<Item = SegmentSet>,
    split: Split,
    rate: f64,
    window_s: f64,
) -> Result<SegmentSet> {
    let mut out = SegmentSet::empty(split, rate, window_s);
    for p in parts {
        out.extend(p)?;
    }
    Ok(out)
}

/// Leave-one-subject-out evaluation over conditioned recordings.
///
/// Each recording-session unit is held out once; the fold trains on every
/// other subject, with each training recording split in time into train and
/// validation parts in the proportion of `prep.ratios`' first two entries.
pub fn loso(
    recordings: &[Recording],
    prep: &PrepConfig,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<LosoReport> {
    prep.validate()?;
    let mut subjects: Vec<&str> = recordings.iter().map(|r| r.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(BenchError::Data(format!(
            "leave-one-subject-out needs at least two subjects, found {}",
            subjects.len()
        )));
    }
    let [r_train, r_val, _] = prep.ratios.0;
    if !(r_train > 0.0 && r_val > 0.0) {
        return Err(BenchError::Config(
            "LOSO needs positive train and validation ratios".into(),
        ));
    }
    let inner = SplitRatios([r_train / (r_train + r_val), r_val / (r_train + r_val), 0.0]);
    let win = prep.windowing()?;
    let rate = recordings[0].sample_rate;

    let mut units: Vec<String> = Vec::new();
    for r in recordings {
        let key = unit_key(r);
        if !units.contains(&key) {
            units.push(key);
        }
    }

    let outcomes: Vec<Result<std::result::Result<FoldResult, SkippedFold>>> = units
        .par_iter()
        .map(|unit| {
            let held: Vec<&Recording> =
                recordings.iter().filter(|r| &unit_key(r) == unit).collect();
            let subject = held[0].subject_id.clone();
            let test = merge(
                held.iter()
                    .map(|r| segment_whole(r, Split::Test, &win).map_segments(zscore)),
                Split::Test,
                rate,
                prep.window_s,
            )?;
            if test.is_empty() {
                return Ok(Err(SkippedFold {
                    unit: unit.clone(),
                    reason: "held-out unit yields no segments at this window length".into(),
                }));
            }
            let pool: Vec<&Recording> = recordings
                .iter()
                .filter(|r| r.subject_id != subject)
                .collect();
            let mut train = SegmentSet::empty(Split::Train, rate, prep.window_s);
            let mut val = SegmentSet::empty(Split::Val, rate, prep.window_s);
            for r in &pool {
                let sets = split_then_segment(r, inner, &win)?;
                train.extend(sets.train.map_segments(zscore))?;
                val.extend(sets.val.map_segments(zscore))?;
            }
            let mut train_subjects: Vec<String> =
                pool.iter().map(|r| r.subject_id.clone()).collect();
            train_subjects.sort();
            train_subjects.dedup();
            let fitted = fit(spec, &train, &val, train_cfg, seed)?;
            let predictions = Predictions::from_model(&fitted.model, &test, train_cfg.batch_size)?;
            let report = predictions.report(spec.n_classes)?;
            Ok(Ok(FoldResult {
                unit: unit.clone(),
                held_out_subject: subject,
                accuracy: report.accuracy,
                f1: report.macro_f1,
                n_test_segments: test.len(),
                train_subjects,
                best_epoch: fitted.history.best_epoch,
                history: fitted.history,
                predictions,
            }))
        })
        .collect();

    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            Ok(f) => folds.push(f),
            Err(s) => skipped.push(s),
        }
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let summary = if accs.is_empty() {
        None
    } else {
        Some(fold_summary(&accs)?)
    };
    Ok(LosoReport {
        folds,
        skipped,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rate: f64,
    /// Samples per window at this rate.
    pub window_len: usize,
    pub n_segments: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub predictions: Predictions,
}

/// Test split of conditioned recordings after resampling to `rate`.
pub fn test_set_at_rate(
    recordings: &[Recording],
    prep: &PrepConfig,
    rate: f64,
) -> Result<SegmentSet> {
    let parts = recordings
        .par_iter()
        .map(|r| {
            let moved = if rate == r.sample_rate {
                r.clone()
            } else {
                resample(r, rate)?
            };
            Ok(segment(&moved, prep)?.test)
        })
        .collect::<Result<Vec<_>>>()?;
    merge(parts, Split::Test, rate, prep.window_s)
}

/// Zero-shot evaluation of a trained model on test windows of the same
/// duration at lower sampling rates. No timescale rescaling is applied.
pub fn cross_frequency(
    model: &Model,
    recordings: &[Recording],
    prep: &PrepConfig,
    rates: &[f64],
    batch_size: usize,
) -> Result<Vec<RateResult>> {
    prep.validate()?;
    if recordings.is_empty() {
        return Err(BenchError::Data(
            "cross-frequency evaluation needs recordings".into(),
        ));
    }
    rates
        .iter()
        .map(|&rate| {
            if recordings.iter().any(|r| rate > r.sample_rate) {
                return Err(BenchError::Config(format!(
                    "cannot evaluate at {rate} Hz above the recording rate"
                )));
            }
            let test = test_set_at_rate(recordings, prep, rate)?;
            if test.is_empty() {
                return Err(BenchError::Data(format!("no test windows at {rate} Hz")));
            }
            let predictions = Predictions::from_model(model, &test, batch_size)?;
            let report = predictions.report(model.spec().n_classes)?;
            Ok(RateResult {
                rate,
                window_len: test.segment_shape().map_or(0, |s| s[1]),
                n_segments: test.len(),
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                predictions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub control: bool,
    pub n_segments: usize,
    pub dominant_class: usize,
    pub dominant_name: String,
    pub mean_confidence: f64,
    /// How often each class was predicted.
    pub class_counts: Vec<usize>,
}

/// Modal arg-max class (ties to the lowest index), mean max-probability and
/// prediction counts per class.
pub fn dominant_prediction(probs: &[Vec<f64>]) -> Result<(usize, f64, Vec<usize>)> {
    let k = probs.first().map_or(0, Vec::len);
    if probs.is_empty() || k == 0 {
        return Err(BenchError::Data("no predictions to summarize".into()));
    }
    let mut counts = vec![0usize; k];
    let mut conf = 0.0;
    for row in probs {
        let c = crate::training::argmax(row);
        counts[c] += 1;
        conf += row[c];
    }
    let dominant = crate::training::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    Ok((dominant, conf / probs.len() as f64, counts))
}

fn task_row(
    model: &Model,
    task: &str,
    set: &SegmentSet,
    control: bool,
    batch_size: usize,
) -> Result<TaskRow> {
    if set.is_empty() {
        return Err(BenchError::Data(format!("task {task} has no segments")));
    }
    let probs = Predictions::from_model(model, set, batch_size)?.probs;
    let (dominant, mean_confidence, class_counts) = dominant_prediction(&probs)?;
    Ok(TaskRow {
        task: task.to_string(),
        control,
        n_segments: set.len(),
        dominant_class: dominant,
        dominant_name: CLASS_NAMES
            .get(dominant)
            .map_or_else(|| dominant.to_string(), |s| s.to_string()),
        mean_confidence,
        class_counts,
    })
}

/// Splits a set into one set per task label, in order of first appearance.
pub fn split_by_task(set: &SegmentSet) -> Vec<(String, SegmentSet)> {
    let mut out: Vec<(String, SegmentSet)> = Vec::new();
    for i in 0..set.len() {
        let name = set.tasks[i].to_string();
        let pos = match out.iter().position(|(n, _)| *n == name) {
            Some(p) => p,
            None => {
                out.push((
                    name,
                    SegmentSet::empty(set.split, set.sample_rate, set.window_seconds),
                ));
                out.len() - 1
            }
        };
        let part = &mut out[pos].1;
        part.segments.push(set.segments[i].clone());
        part.labels.push(set.labels[i]);
        part.tasks.push(set.tasks[i].clone());
        part.subject_ids.push(set.subject_ids[i].clone());
        part.sources.push(set.sources[i].clone());
    }
    out
}

/// One row per unseen task plus a final in-distribution control row.
pub fn cross_task(
    model: &Model,
    ood: &[(String, SegmentSet)],
    control: (&str, &SegmentSet),
    batch_size: usize,
) -> Result<Vec<TaskRow>> {
    if ood.is_empty() {
        return Err(BenchError::Data(
            "cross-task evaluation needs at least one unseen task".into(),
        ));
    }
    let mut rows = ood
        .iter()
        .map(|(name, set)| task_row(model, name, set, false, batch_size))
        .collect::<Result<Vec<_>>>()?;
    rows.push(task_row(model, control.0, control.1, true, batch_size)?);
    Ok(rows)
}
