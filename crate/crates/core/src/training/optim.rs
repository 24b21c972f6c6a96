//! AdamW, global-norm gradient clipping and EMA shadow weights.

use numcore::signal::log_sum_exp;
use numcore::NdArray;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// `−log softmax(logits)[label]`, evaluated through a stable log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(BenchError::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(BenchError::Data(
            "cross-entropy of non-finite logits".into(),
        ));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First and second moment estimates of one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: NdArray,
    pub v: NdArray,
}

impl Moments {
    pub fn zeros_like(param: &NdArray) -> Self {
        Self {
            m: NdArray::zeros(param.shape().to_vec()),
            v: NdArray::zeros(param.shape().to_vec()),
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
/// `step` counts updates starting at 1.
pub fn adamw_step(param: &mut NdArray, grad: &NdArray, state: &mut Moments, step: u64, hp: &AdamW) {
    assert_eq!(
        param.shape(),
        grad.shape(),
        "parameter and gradient shapes differ"
    );
    assert!(step >= 1, "AdamW steps are counted from 1");
    let bc1 = 1.0 - hp.beta1.powf(step as f64);
    let bc2 = 1.0 - hp.beta2.powf(step as f64);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps) + hp.lr * hp.weight_decay * *p;
    }
}

/// Global L2 norm over every gradient array.
pub fn global_norm(grads: &[NdArray]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [NdArray], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// `shadow ← decay·shadow + (1 − decay)·param`.
pub fn ema_update(shadow: &mut NdArray, param: &NdArray, decay: f64) {
    assert!(
        (0.0..=1.0).contains(&decay),
        "EMA decay {decay} outside [0, 1]"
    );
    assert_eq!(shadow.shape(), param.shape());
    for (s, &p) in shadow.data_mut().iter_mut().zip(param.data()) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}

/// Decay actually applied after `updates` previous EMA updates when warmup
/// is on: `min(decay, (1 + n) / (10 + n))`, so early shadows follow the
/// parameters instead of staying pinned to the initialization.
pub fn warmed_decay(decay: f64, updates: u64, warmup: bool) -> f64 {
    if warmup {
        let n = updates as f64;
        decay.min((1.0 + n) / (10.0 + n))
    } else {
        decay
    }
}
