//! Stacked (bi)directional LSTM with a fused, hand-differentiated layer op.

use numcore::linalg::{gemm, Layout};
use numcore::ops::sigmoid;
use numcore::{NdArray, Tape, Var};
use rand::Rng;

use crate::error::Result;
use crate::model::{Architecture, Bound, Linear, LstmConfig, ParamId, ParamStore, Pass};

/// One LSTM layer over `x: [B, T, In]` returning hidden states `[B, T, H]`.
///
/// Weights are `w_ih: [4H, In]`, `w_hh: [4H, H]`, `bias: [4H]` with gate
/// blocks ordered input, forget, cell, output. With `reverse` the sequence is
/// processed from the last step to the first.
pub fn lstm_layer(tape: &mut Tape, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
    let &[bsz, t, n_in] = tape.shape(x) else {
        panic!("lstm input must be [batch, time, features]");
    };
    let &[g4, hid] = tape.shape(w_hh) else {
        panic!("w_hh must be [4H, H]");
    };
    assert_eq!(g4, 4 * hid);
    assert_eq!(tape.shape(w_ih), [g4, n_in]);
    assert_eq!(tape.shape(bias), [g4]);
    let (xv, wih, whh, bv) = (
        tape.shared(x),
        tape.shared(w_ih),
        tape.shared(w_hh),
        tape.shared(bias),
    );
    let rows = bsz * t;

    // input contributions for every step at once
    let mut pre = vec![0.0; rows * g4];
    for r in pre.chunks_mut(g4) {
        r.copy_from_slice(bv.data());
    }
    gemm(
        rows,
        n_in,
        g4,
        1.0,
        xv.data(),
        Layout::rows(n_in),
        wih.data(),
        Layout::transposed(n_in),
        1.0,
        &mut pre,
        Layout::rows(g4),
    );

    let order: Vec<usize> = if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    // post-activation gates, cell and hidden states, all [B, T, ·]
    let mut gates = vec![0.0; rows * g4];
    let mut cell = vec![0.0; rows * hid];
    let mut hidden = vec![0.0; rows * hid];
    let mut step = vec![0.0; bsz * g4];
    let mut h_prev = vec![0.0; bsz * hid];
    let mut c_prev = vec![0.0; bsz * hid];
    for &s in &order {
        for b in 0..bsz {
            step[b * g4..(b + 1) * g4]
                .copy_from_slice(&pre[(b * t + s) * g4..(b * t + s + 1) * g4]);
        }
        gemm(
            bsz,
            hid,
            g4,
            1.0,
            &h_prev,
            Layout::rows(hid),
            whh.data(),
            Layout::transposed(hid),
            1.0,
            &mut step,
            Layout::rows(g4),
        );
        for b in 0..bsz {
            let a = &step[b * g4..(b + 1) * g4];
            let gate = &mut gates[(b * t + s) * g4..(b * t + s + 1) * g4];
            for j in 0..hid {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[hid + j]);
                let g = a[2 * hid + j].tanh();
                let o = sigmoid(a[3 * hid + j]);
                let c = f * c_prev[b * hid + j] + i * g;
                let h = o * c.tanh();
                gate[j] = i;
                gate[hid + j] = f;
                gate[2 * hid + j] = g;
                gate[3 * hid + j] = o;
                cell[(b * t + s) * hid + j] = c;
                hidden[(b * t + s) * hid + j] = h;
                c_prev[b * hid + j] = c;
                h_prev[b * hid + j] = h;
            }
        }
    }

    let out = NdArray::from_vec(vec![bsz, t, hid], hidden.clone()).unwrap();
    tape.op(
        out,
        &[x, w_ih, w_hh, bias],
        Box::new(move |gy, needs| {
            let gy = gy.data();
            let mut d_pre = vec![0.0; rows * g4];
            let mut g_whh = vec![0.0; g4 * hid];
            let mut dh_next = vec![0.0; bsz * hid];
            let mut dc_next = vec![0.0; bsz * hid];
            let mut da = vec![0.0; bsz * g4];
            let mut h_before = vec![0.0; bsz * hid];
            for (k, &s) in order.iter().enumerate().rev() {
                let prev = (k > 0).then(|| order[k - 1]);
                for b in 0..bsz {
                    let gate = &gates[(b * t + s) * g4..(b * t + s + 1) * g4];
                    for j in 0..hid {
                        let (i, f, g, o) =
                            (gate[j], gate[hid + j], gate[2 * hid + j], gate[3 * hid + j]);
                        let c = cell[(b * t + s) * hid + j];
                        let c_before = prev.map_or(0.0, |ps| cell[(b * t + ps) * hid + j]);
                        let tc = c.tanh();
                        let dh = gy[(b * t + s) * hid + j] + dh_next[b * hid + j];
                        let d_o = dh * tc;
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[b * hid + j];
                        dc_next[b * hid + j] = dc * f;
                        let a = &mut da[b * g4..(b + 1) * g4];
                        a[j] = dc * g * i * (1.0 - i);
                        a[hid + j] = dc * c_before * f * (1.0 - f);
                        a[2 * hid + j] = dc * i * (1.0 - g * g);
                        a[3 * hid + j] = d_o * o * (1.0 - o);
                        h_before[b * hid + j] =
                            prev.map_or(0.0, |ps| hidden[(b * t + ps) * hid + j]);
                    }
                    d_pre[(b * t + s) * g4..(b * t + s + 1) * g4]
                        .copy_from_slice(&da[b * g4..(b + 1) * g4]);
                }
                gemm(
                    bsz,
                    g4,
                    hid,
                    1.0,
                    &da,
                    Layout::rows(g4),
                    whh.data(),
                    Layout::rows(hid),
                    0.0,
                    &mut dh_next,
                    Layout::rows(hid),
                );
                if needs[2] {
                    gemm(
                        g4,
                        bsz,
                        hid,
                        1.0,
                        &da,
                        Layout::transposed(g4),
                        &h_before,
                        Layout::rows(hid),
                        1.0,
                        &mut g_whh,
                        Layout::rows(hid),
                    );
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; rows * n_in];
                gemm(
                    rows,
                    g4,
                    n_in,
                    1.0,
                    &d_pre,
                    Layout::rows(g4),
                    wih.data(),
                    Layout::rows(n_in),
                    0.0,
                    &mut gx,
                    Layout::rows(n_in),
                );
                NdArray::from_vec(vec![bsz, t, n_in], gx).unwrap()
            });
            let g_wih = needs[1].then(|| {
                let mut g = vec![0.0; g4 * n_in];
                gemm(
                    g4,
                    rows,
                    n_in,
                    1.0,
                    &d_pre,
                    Layout::transposed(g4),
                    xv.data(),
                    Layout::rows(n_in),
                    0.0,
                    &mut g,
                    Layout::rows(n_in),
                );
                NdArray::from_vec(vec![g4, n_in], g).unwrap()
            });
            let g_bias = needs[3].then(|| {
                let mut g = vec![0.0; g4];
                for r in d_pre.chunks(g4) {
                    g.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                }
                NdArray::vector(&g)
            });
            vec![
                gx,
                g_wih,
                needs[2].then(|| NdArray::from_vec(vec![g4, hid], g_whh).unwrap()),
                g_bias,
            ]
        }),
    )
}

#[derive(Debug, Clone)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmDirection {
    /// Uniform `±1/√H` initialization for every weight and bias.
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        n_in: usize,
        hid: usize,
    ) -> Self {
        let bound = 1.0 / (hid as f64).sqrt();
        let mut uniform = |shape: Vec<usize>| {
            let n = shape.iter().product();
            NdArray::from_vec(
                shape,
                (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            )
            .unwrap()
        };
        let (w_ih, w_hh, bias) = (
            uniform(vec![4 * hid, n_in]),
            uniform(vec![4 * hid, hid]),
            uniform(vec![4 * hid]),
        );
        Self {
            w_ih: store.add(format!("{name}.w_ih"), w_ih),
            w_hh: store.add(format!("{name}.w_hh"), w_hh),
            bias: store.add(format!("{name}.bias"), bias),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, reverse: bool) -> Var {
        lstm_layer(tape, x, p[self.w_ih], p[self.w_hh], p[self.bias], reverse)
    }
}

/// Stacked LSTM layers (outputs of both directions concatenated), mean over
/// time, linear head.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<(LstmDirection, Option<LstmDirection>)>,
    pub head: Linear,
    dropout: f64,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        n_classes: usize,
        cfg: &LstmConfig,
    ) -> Self {
        let dirs = if cfg.bidirectional { 2 } else { 1 };
        let layers = (0..cfg.layers)
            .map(|l| {
                let n_in = if l == 0 {
                    in_channels
                } else {
                    cfg.hidden * dirs
                };
                let fwd =
                    LstmDirection::new(store, rng, &format!("layers.{l}.fwd"), n_in, cfg.hidden);
                let bwd = cfg.bidirectional.then(|| {
                    LstmDirection::new(store, rng, &format!("layers.{l}.bwd"), n_in, cfg.hidden)
                });
                (fwd, bwd)
            })
            .collect();
        let head = Linear::new(store, rng, "head", cfg.hidden * dirs, n_classes);
        Self {
            layers,
            head,
            dropout: cfg.dropout,
        }
    }
}

impl Architecture for Lstm {
    fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                h = pass.dropout(tape, h, self.dropout);
            }
            let yf = fwd.forward(tape, p, h, false);
            h = match bwd {
                Some(bwd) => {
                    let yb = bwd.forward(tape, p, h, true);
                    tape.concat_last(yf, yb)
                }
                None => yf,
            };
        }
        let pooled = tape.mean_time(h);
        let pooled = pass.dropout(tape, pooled, self.dropout);
        Ok(self.head.forward(tape, p, pooled))
    }
}
