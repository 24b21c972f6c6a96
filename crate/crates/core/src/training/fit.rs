//! The epoch loop: shuffled mini-batches, AdamW with clipping, EMA shadow
//! weights evaluated on the validation set, plateau scheduling and early
//! stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use numcore::{NdArray, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{
    adamw_step, clip_grad_norm, cross_entropy, ema_update, warmed_decay, AdamW, Moments,
};
use super::schedule::{EarlyStopping, PlateauConfig, PlateauScheduler};
use crate::error::{BenchError, NanDiagnostic, Result};
use crate::model::{Bound, Model, ModelSpec, Pass, BN_MOMENTUM};
use crate::preprocess::SegmentSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub ema_decay: f64,
    /// Ramp the EMA decay up from 0.1 over the first updates.
    pub ema_warmup: bool,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            ema_decay: 0.999,
            ema_warmup: true,
            plateau: PlateauConfig::default(),
            early_stop_patience: 10,
            seeds: vec![0, 1, 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.max_epochs == 0
            || self.batch_size == 0
            || self.early_stop_patience == 0
            || self.plateau.patience == 0
        {
            return bad("max_epochs, batch_size and both patience values must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!(
                "ema_decay must lie in [0, 1], got {}",
                self.ema_decay
            ));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || !(p.min_lr >= 0.0) {
            return bad("plateau factor must lie in (0, 1) and min_lr must be non-negative".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's training batches.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose EMA weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
            )
            .unwrap();
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug)]
pub struct FitResult {
    pub seed: u64,
    /// Best-validation EMA weights with the running statistics of that epoch.
    pub model: Model,
    pub history: History,
    pub warnings: Vec<String>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Inference-mode logits `[N, K]` for a whole set, in batches.
pub fn predict_logits(model: &Model, set: &SegmentSet, batch_size: usize) -> Result<NdArray> {
    let k = model.spec().n_classes;
    let mut out = Vec::with_capacity(set.len() * k);
    let indices: Vec<usize> = (0..set.len()).collect();
    for idx in indices.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let params = Bound::frozen(&mut tape, &model.store);
        let mut pass = Pass::eval(&model.store);
        let logits = model.logits(&mut tape, &params, &mut pass, &set.batch(idx))?;
        out.extend_from_slice(tape.value(logits).data());
    }
    Ok(NdArray::from_vec(vec![set.len(), k], out)?)
}

/// Mean cross-entropy and accuracy of a model over a set.
pub fn evaluate_loss_acc(model: &Model, set: &SegmentSet, batch_size: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(BenchError::Data(
            "cannot evaluate on an empty segment set".into(),
        ));
    }
    let logits = predict_logits(model, set, batch_size)?;
    let k = model.spec().n_classes;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (row, &y) in logits.data().chunks(k).zip(&set.labels) {
        loss += cross_entropy(row, y)?;
        correct += usize::from(argmax(row) == y);
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Errors if any training window overlaps a validation window of the same
/// source recording.
pub fn check_disjoint(train: &SegmentSet, val: &SegmentSet) -> Result<()> {
    let mut by_source: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (key, span) in &val.sources {
        by_source.entry(key.as_str()).or_default().push(*span);
    }
    for spans in by_source.values_mut() {
        spans.sort_unstable();
    }
    for (key, (start, end)) in &train.sources {
        let (start, end) = (*start, *end);
        let Some(spans) = by_source.get(key.as_str()) else {
            continue;
        };
        // spans starting before `end` are the only candidates
        let upto = spans.partition_point(|s| s.0 < end);
        if spans[..upto].iter().any(|s| s.1 > start) {
            return Err(BenchError::Data(format!(
                "training window {key}[{start}, {end}) overlaps the validation set"
            )));
        }
    }
    Ok(())
}

fn nan_error(model: &Model, epoch: usize, batch: usize) -> BenchError {
    let param_norms = model
        .store
        .params
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
            )
        })
        .collect();
    BenchError::NanLoss(Box::new(NanDiagnostic {
        epoch,
        batch,
        param_norms,
    }))
}

/// Shuffle and dropout randomness lives on its own ChaCha stream so it never
/// aliases the initialization draws of the same seed.
const TRAIN_STREAM: u64 = 1;

/// Trains one model from `spec` initialized with `seed`.
///
/// A non-finite loss or gradient aborts with [`BenchError::NanLoss`]; when
/// the validation pass is the culprit the reported batch index equals the
/// number of training batches.
pub fn fit(
    spec: &ModelSpec,
    train: &SegmentSet,
    val: &SegmentSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(BenchError::Data(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if train.segment_shape() != val.segment_shape() {
        return Err(BenchError::Data(format!(
            "training segments {:?} and validation segments {:?} differ in shape",
            train.segment_shape(),
            val.segment_shape()
        )));
    }
    check_disjoint(train, val)?;
    let k = spec.n_classes;
    if let Some(&y) = train.labels.iter().chain(&val.labels).find(|&&y| y >= k) {
        return Err(BenchError::Data(format!(
            "label {y} out of range for {k} classes"
        )));
    }

    let mut model = Model::new(spec.clone().with_seed(seed))?;
    let warnings: Vec<String> = train
        .segment_shape()
        .and_then(|s| model.input_warning(s[1]))
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);

    let mut shadow: Vec<NdArray> = model.store.values().cloned().collect();
    let mut moments: Vec<Moments> = model.store.values().map(Moments::zeros_like).collect();
    let mut step = 0u64;
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.plateau);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<(usize, Vec<NdArray>, ParamBuffers)> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let hp = AdamW::new(sched.lr, cfg.weight_decay);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let labels = train.labels_of(idx);
            let mut tape = Tape::new();
            let params = Bound::trainable(&mut tape, &model.store);
            let mut pass = Pass::train(&model.store, rng.random());
            let logits = model.logits(&mut tape, &params, &mut pass, &train.batch(idx))?;
            let updates = std::mem::take(&mut pass.updates);
            drop(pass);
            let z = tape.value(logits);
            if !z.all_finite() {
                return Err(nan_error(&model, epoch, bi));
            }
            correct += z
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let loss = tape.cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).data()[0];
            let mut grads_all = tape.backward(loss)?;
            let mut grads: Vec<NdArray> = params
                .vars()
                .iter()
                .zip(model.store.values())
                .map(|(&v, p)| {
                    grads_all
                        .take(v)
                        .unwrap_or_else(|| NdArray::zeros(p.shape().to_vec()))
                })
                .collect();
            if !loss_value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(nan_error(&model, epoch, bi));
            }
            if cfg.clip_norm.is_finite() {
                clip_grad_norm(&mut grads, cfg.clip_norm);
            }
            step += 1;
            for ((p, g), m) in model.store.params.iter_mut().zip(&grads).zip(&mut moments) {
                adamw_step(&mut p.value, g, m, step, &hp);
            }
            for u in &updates {
                u.apply(&mut model.store, BN_MOMENTUM);
            }
            let decay = warmed_decay(cfg.ema_decay, step - 1, cfg.ema_warmup);
            for (s, p) in shadow.iter_mut().zip(model.store.values()) {
                ema_update(s, p, decay);
            }
            loss_sum += loss_value * idx.len() as f64;
        }

        swap_params(&mut model, &mut shadow);
        let evaluated = evaluate_loss_acc(&model, val, cfg.batch_size);
        swap_params(&mut model, &mut shadow);
        let (val_loss, val_acc) = match evaluated {
            Ok(v) if v.0.is_finite() => v,
            Ok(_) | Err(BenchError::Data(_)) | Err(BenchError::Num(_)) => {
                return Err(nan_error(&model, epoch, n_batches))
            }
            Err(e) => return Err(e),
        };
        let n = train.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            lr: sched.lr,
        });

        let (improved, stop) = stopper.step(val_loss);
        if improved {
            best = Some((
                epoch,
                shadow.clone(),
                model
                    .store
                    .buffers
                    .iter()
                    .map(|b| b.value.clone())
                    .collect(),
            ));
        }
        sched.step(val_loss);
        if stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_params, best_buffers) =
        best.expect("the first finite validation loss is always an improvement");
    for (p, v) in model.store.params.iter_mut().zip(best_params) {
        p.value = v;
    }
    for (b, v) in model.store.buffers.iter_mut().zip(best_buffers) {
        b.value = v;
    }
    Ok(FitResult {
        seed,
        model,
        history: History {
            epochs,
            best_epoch,
            stopped_early,
        },
        warnings,
    })
}

type ParamBuffers = Vec<NdArray>;

fn swap_params(model: &mut Model, other: &mut [NdArray]) {
    for (p, o) in model.store.params.iter_mut().zip(other.iter_mut()) {
        std::mem::swap(&mut p.value, o);
    }
}

/// One [`fit`] per configured seed; runs may proceed in parallel, results
/// come back in seed order.
pub fn fit_seeds(
    spec: &ModelSpec,
    train: &SegmentSet,
    val: &SegmentSet,
    cfg: &TrainConfig,
) -> Result<Vec<FitResult>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| fit(spec, train, val, cfg, seed))
        .collect()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(BenchError::Data("mean of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}
