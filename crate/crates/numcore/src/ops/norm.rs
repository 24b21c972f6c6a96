use rand::Rng;
use std::rc::Rc;

use crate::array::NdArray;
use crate::tape::{Tape, Var};

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Forward state kept for the backward pass of layer and batch normalization.
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    shape: Vec<usize>,
}

impl Tape {
    /// Layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data().to_vec(), self.value(beta).data());
        let rows = xd.len() / c;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let cache = Rc::new(NormCache {
            xhat,
            inv_std,
            gamma: g,
            shape: shape.clone(),
        });
        self.op(
            NdArray::from_vec(shape, out).unwrap(),
            &[x, gamma, beta],
            Box::new(move |gy, needs| {
                let gd = gy.data();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = vec![0.0; gd.len()];
                for r in 0..rows {
                    let (xh, gr) = (&cache.xhat[r * c..(r + 1) * c], &gd[r * c..(r + 1) * c]);
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        gg[j] += gr[j] * xh[j];
                        gb[j] += gr[j];
                        let gh = gr[j] * cache.gamma[j];
                        m1 += gh;
                        m2 += gh * xh[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        let gh = gr[j] * cache.gamma[j];
                        gx[r * c + j] = cache.inv_std[r] * (gh - m1 - xh[j] * m2);
                    }
                }
                vec![
                    needs[0].then(|| NdArray::from_vec(cache.shape.clone(), gx).unwrap()),
                    Some(NdArray::vector(&gg)),
                    Some(NdArray::vector(&gb)),
                ]
            }),
        )
    }

    /// Training-mode batch normalization: statistics are taken per channel
    /// (last dimension) over every other position, and returned so the caller
    /// can maintain running estimates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats) {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        let xd = self.value(x).data();
        let rows = xd.len() / c;
        assert!(rows >= 1);
        let mut mean = vec![0.0; c];
        for row in xd.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in xd.chunks(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data().to_vec(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (r, row) in xd.chunks(c).enumerate() {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let cache = Rc::new(NormCache {
            xhat,
            inv_std,
            gamma: g,
            shape: shape.clone(),
        });
        let y = self.op(
            NdArray::from_vec(shape, out).unwrap(),
            &[x, gamma, beta],
            Box::new(move |gy, needs| {
                let gd = gy.data();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut m1 = vec![0.0; c];
                let mut m2 = vec![0.0; c];
                for (r, gr) in gd.chunks(c).enumerate() {
                    let xh = &cache.xhat[r * c..(r + 1) * c];
                    for j in 0..c {
                        gg[j] += gr[j] * xh[j];
                        gb[j] += gr[j];
                    }
                }
                for j in 0..c {
                    m1[j] = gb[j] * cache.gamma[j] / rows as f64;
                    m2[j] = gg[j] * cache.gamma[j] / rows as f64;
                }
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; gd.len()];
                    for (r, gr) in gd.chunks(c).enumerate() {
                        for j in 0..c {
                            let gh = gr[j] * cache.gamma[j];
                            let xh = cache.xhat[r * c + j];
                            gx[r * c + j] = cache.inv_std[j] * (gh - m1[j] - xh * m2[j]);
                        }
                    }
                    NdArray::from_vec(cache.shape.clone(), gx).unwrap()
                });
                vec![gx, Some(NdArray::vector(&gg)), Some(NdArray::vector(&gb))]
            }),
        );
        (
            y,
            BatchStats {
                mean,
                var,
                count: rows,
            },
        )
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var {
        let c = *self.shape(x).last().unwrap();
        assert_eq!(mean.len(), c);
        assert_eq!(var.len(), c);
        let mean = mean.to_vec();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let normalized = {
            let mut xh = self.value(x).clone();
            for row in xh.data_mut().chunks_mut(c) {
                for j in 0..c {
                    row[j] = (row[j] - mean[j]) * inv_std[j];
                }
            }
            xh
        };
        // y = xhat·γ + β, with xhat affine in x.
        let xhat = self.op(
            normalized,
            &[x],
            Box::new(move |g, _| {
                let mut gx = g.clone();
                for row in gx.data_mut().chunks_mut(c) {
                    for j in 0..c {
                        row[j] *= inv_std[j];
                    }
                }
                vec![Some(gx)]
            }),
        );
        let scaled = self.mul_last(xhat, gamma);
        self.add_last(scaled, beta)
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        assert!(
            (0.0..1.0).contains(&p),
            "dropout probability must be in [0, 1)"
        );
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = NdArray::from_vec(self.shape(x).to_vec(), mask).unwrap();
        let m = self.constant(mask);
        self.mul(x, m)
    }
}
