//! Multi-head scaled dot-product attention and attention pooling.

use crate::array::NdArray;
use crate::error::{NumError, Result};
use crate::linalg::{gemm, Layout};
use crate::signal::{log_sum_exp, softmax_into};
use crate::tape::{Tape, Var};

fn btd(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [b, t, d] => (b, t, d),
        _ => panic!("expected [batch, time, dim], got {shape:?}"),
    }
}

/// Row-softmaxed score matrix `softmax(Q_h K_hᵀ · scale)` for one (batch, head).
fn head_probs(
    q: &[f64],
    k: &[f64],
    off: usize,
    t: usize,
    d: usize,
    dh: usize,
    scale: f64,
) -> Vec<f64> {
    let mut s = vec![0.0; t * t];
    gemm(
        t,
        dh,
        t,
        scale,
        q,
        Layout::strided(off, d, 1),
        k,
        Layout::strided(off, 1, d),
        0.0,
        &mut s,
        Layout::rows(t),
    );
    let mut p = vec![0.0; t * t];
    for (srow, prow) in s.chunks(t).zip(p.chunks_mut(t)) {
        softmax_into(srow, prow);
    }
    p
}

/// Attention weights `[B, heads, T, T]` for inspection; each row sums to one.
pub fn attention_weights(q: &NdArray, k: &NdArray, heads: usize) -> NdArray {
    let (bsz, t, d) = btd(q.shape());
    assert_eq!(q.shape(), k.shape());
    assert_eq!(d % heads, 0);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Vec::with_capacity(bsz * heads * t * t);
    for b in 0..bsz {
        for h in 0..heads {
            out.extend(head_probs(
                q.data(),
                k.data(),
                b * t * d + h * dh,
                t,
                d,
                dh,
                scale,
            ));
        }
    }
    NdArray::from_vec(vec![bsz, heads, t, t], out).unwrap()
}

fn pool_weights(x: &[f64], w: &[f64], bsz: usize, t: usize, d: usize) -> Vec<f64> {
    let mut weights = vec![0.0; bsz * t];
    for (xb, a) in x.chunks(t * d).zip(weights.chunks_mut(t)).take(bsz) {
        let scores: Vec<f64> = xb
            .chunks(d)
            .map(|row| row.iter().zip(w).map(|(p, q)| p * q).sum())
            .collect();
        softmax_into(&scores, a);
    }
    weights
}

/// Attention-pooling weights `[B, T]` for features `[B, T, D]` and scoring
/// vector `[D]`; each row sums to one.
pub fn attention_pool_weights(x: &NdArray, w: &NdArray) -> NdArray {
    let (bsz, t, d) = btd(x.shape());
    assert_eq!(w.shape(), &[d]);
    NdArray::from_vec(vec![bsz, t], pool_weights(x.data(), w.data(), bsz, t, d)).unwrap()
}

impl Tape {
    /// `softmax(Q Kᵀ / √d_h) V` per head; inputs and output are `[B, T, D]`
    /// with heads occupying contiguous slices of `D`. Probabilities are
    /// recomputed in the backward pass instead of being stored.
    pub fn self_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (bsz, t, d) = btd(self.shape(q));
        assert_eq!(self.shape(k), self.shape(q));
        assert_eq!(self.shape(v), self.shape(q));
        assert_eq!(d % heads, 0, "model dim {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.shared(q), self.shared(k), self.shared(v));
        let mut out = vec![0.0; bsz * t * d];
        for b in 0..bsz {
            for h in 0..heads {
                let off = b * t * d + h * dh;
                let p = head_probs(qv.data(), kv.data(), off, t, d, dh, scale);
                gemm(
                    t,
                    t,
                    dh,
                    1.0,
                    &p,
                    Layout::rows(t),
                    vv.data(),
                    Layout::strided(off, d, 1),
                    0.0,
                    &mut out,
                    Layout::strided(off, d, 1),
                );
            }
        }
        self.op(
            NdArray::from_vec(vec![bsz, t, d], out).unwrap(),
            &[q, k, v],
            Box::new(move |g, _| {
                let n = bsz * t * d;
                let (mut gq, mut gk, mut gv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                let mut dp = vec![0.0; t * t];
                for b in 0..bsz {
                    for h in 0..heads {
                        let off = b * t * d + h * dh;
                        let p = head_probs(qv.data(), kv.data(), off, t, d, dh, scale);
                        let lo = Layout::strided(off, d, 1);
                        gemm(
                            t,
                            t,
                            dh,
                            1.0,
                            &p,
                            Layout::transposed(t),
                            g.data(),
                            lo,
                            0.0,
                            &mut gv,
                            lo,
                        );
                        gemm(
                            t,
                            dh,
                            t,
                            1.0,
                            g.data(),
                            lo,
                            vv.data(),
                            Layout::strided(off, 1, d),
                            0.0,
                            &mut dp,
                            Layout::rows(t),
                        );
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), then the 1/√d_h factor.
                        for (prow, drow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                            for (dv, pv) in drow.iter_mut().zip(prow) {
                                *dv = pv * (*dv - dot) * scale;
                            }
                        }
                        gemm(
                            t,
                            t,
                            dh,
                            1.0,
                            &dp,
                            Layout::rows(t),
                            kv.data(),
                            lo,
                            0.0,
                            &mut gq,
                            lo,
                        );
                        gemm(
                            t,
                            t,
                            dh,
                            1.0,
                            &dp,
                            Layout::transposed(t),
                            qv.data(),
                            lo,
                            0.0,
                            &mut gk,
                            lo,
                        );
                    }
                }
                let shape = vec![bsz, t, d];
                vec![
                    Some(NdArray::from_vec(shape.clone(), gq).unwrap()),
                    Some(NdArray::from_vec(shape.clone(), gk).unwrap()),
                    Some(NdArray::from_vec(shape, gv).unwrap()),
                ]
            }),
        )
    }

    /// Learned attention pooling over time: `a = softmax_t(x_t · w)`,
    /// output `Σ_t a_t x_t`. `[B, T, D] → [B, D]`.
    pub fn attention_pool(&mut self, x: Var, w: Var) -> Var {
        let (bsz, t, d) = btd(self.shape(x));
        assert_eq!(self.shape(w), &[d]);
        let (xv, wv) = (self.shared(x), self.shared(w));
        let weights = pool_weights(xv.data(), wv.data(), bsz, t, d);
        let mut out = vec![0.0; bsz * d];
        for b in 0..bsz {
            let xb = &xv.data()[b * t * d..(b + 1) * t * d];
            let a = &weights[b * t..(b + 1) * t];
            let o = &mut out[b * d..(b + 1) * d];
            for (row, &at) in xb.chunks(d).zip(a.iter()) {
                for (ov, xv) in o.iter_mut().zip(row) {
                    *ov += at * xv;
                }
            }
        }
        self.op(
            NdArray::from_vec(vec![bsz, d], out).unwrap(),
            &[x, w],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; bsz * t * d];
                let mut gw = vec![0.0; d];
                for b in 0..bsz {
                    let xb = &xv.data()[b * t * d..(b + 1) * t * d];
                    let gb = &g.data()[b * d..(b + 1) * d];
                    let a = &weights[b * t..(b + 1) * t];
                    let da: Vec<f64> = xb
                        .chunks(d)
                        .map(|row| row.iter().zip(gb).map(|(p, q)| p * q).sum())
                        .collect();
                    let mean_da: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
                    for (ti, row) in xb.chunks(d).enumerate() {
                        let ds = a[ti] * (da[ti] - mean_da);
                        let gxr = &mut gx[(b * t + ti) * d..(b * t + ti + 1) * d];
                        for j in 0..d {
                            gxr[j] = a[ti] * gb[j] + ds * wv.data()[j];
                            gw[j] += ds * row[j];
                        }
                    }
                }
                vec![
                    Some(NdArray::from_vec(vec![bsz, t, d], gx).unwrap()),
                    Some(NdArray::vector(&gw)),
                ]
            }),
        )
    }

    /// Mean cross-entropy of `[B, K]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let &[bsz, k] = self.shape(logits) else {
            return Err(NumError::Invalid(
                "cross_entropy expects [batch, classes] logits".into(),
            ));
        };
        if labels.len() != bsz {
            return Err(NumError::Invalid(format!(
                "{} labels for a batch of {bsz}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NumError::Invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let z = self.value(logits).data();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite("cross_entropy logits"));
        }
        let mut probs = vec![0.0; bsz * k];
        let mut loss = 0.0;
        for b in 0..bsz {
            let row = &z[b * k..(b + 1) * k];
            loss += log_sum_exp(row) - row[labels[b]];
            softmax_into(row, &mut probs[b * k..(b + 1) * k]);
        }
        loss /= bsz as f64;
        let labels = labels.to_vec();
        Ok(self.op(
            NdArray::scalar(loss),
            &[logits],
            Box::new(move |g, _| {
                let s = g.data()[0] / bsz as f64;
                let mut gz = probs.clone();
                for (b, &y) in labels.iter().enumerate() {
                    gz[b * k + y] -= 1.0;
                }
                gz.iter_mut().for_each(|v| *v *= s);
                vec![Some(NdArray::from_vec(vec![bsz, k], gz).unwrap())]
            }),
        ))
    }
}
