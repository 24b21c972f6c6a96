//! Dense layers over sequence tensors laid out `[batch, time, channels]`.

use crate::array::NdArray;
use crate::linalg::{gemm, Layout};
use crate::tape::{Tape, Var};

fn btc(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [b, t, c] => (b, t, c),
        _ => panic!("expected a [batch, time, channels] tensor, got {shape:?}"),
    }
}

impl Tape {
    /// `y = x · wᵀ (+ b)` applied over the last dimension; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let cin = *xs.last().expect("linear input needs a feature dimension");
        let &[cout, wcin] = self.shape(w) else {
            panic!("linear weight must be 2-D");
        };
        assert_eq!(
            cin, wcin,
            "linear: input has {cin} features, weight expects {wcin}"
        );
        let rows = self.value(x).len() / cin;
        let (xv, wv) = (self.shared(x), self.shared(w));
        let mut out = vec![0.0; rows * cout];
        gemm(
            rows,
            cin,
            cout,
            1.0,
            xv.data(),
            Layout::rows(cin),
            wv.data(),
            Layout::transposed(cin),
            0.0,
            &mut out,
            Layout::rows(cout),
        );
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = cout;
        let y = self.op(
            NdArray::from_vec(oshape, out).unwrap(),
            &[x, w],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; rows * cin];
                    gemm(
                        rows,
                        cout,
                        cin,
                        1.0,
                        g.data(),
                        Layout::rows(cout),
                        wv.data(),
                        Layout::rows(cin),
                        0.0,
                        &mut gx,
                        Layout::rows(cin),
                    );
                    NdArray::from_vec(xs.clone(), gx).unwrap()
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![0.0; cout * cin];
                    gemm(
                        cout,
                        rows,
                        cin,
                        1.0,
                        g.data(),
                        Layout::transposed(cout),
                        xv.data(),
                        Layout::rows(cin),
                        0.0,
                        &mut gw,
                        Layout::rows(cin),
                    );
                    NdArray::from_vec(vec![cout, cin], gw).unwrap()
                });
                vec![gx, gw]
            }),
        );
        match b {
            Some(b) => self.add_last(y, b),
            None => y,
        }
    }

    /// Valid multichannel convolution over time (correlation convention).
    ///
    /// `x: [B, T, Cin]`, `w: [Cout, K, Cin]`, output `[B, (T-K)/stride + 1, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize) -> Var {
        let (bsz, t, cin) = btc(self.shape(x));
        let &[cout, k, wcin] = self.shape(w) else {
            panic!("conv1d weight must be [out, kernel, in]");
        };
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        assert!(stride >= 1);
        assert!(k <= t, "conv1d: kernel {k} longer than sequence {t}");
        let tout = (t - k) / stride + 1;
        let kc = k * cin;
        let (xv, wv) = (self.shared(x), self.shared(w));
        let mut out = vec![0.0; bsz * tout * cout];
        for b in 0..bsz {
            gemm(
                tout,
                kc,
                cout,
                1.0,
                xv.data(),
                Layout::strided(b * t * cin, stride * cin, 1),
                wv.data(),
                Layout::transposed(kc),
                0.0,
                &mut out,
                Layout::rows(cout).at(b * tout * cout),
            );
        }
        self.op(
            NdArray::from_vec(vec![bsz, tout, cout], out).unwrap(),
            &[x, w],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; bsz * t * cin];
                    for b in 0..bsz {
                        for j in 0..k {
                            gemm(
                                tout,
                                cout,
                                cin,
                                1.0,
                                g.data(),
                                Layout::rows(cout).at(b * tout * cout),
                                wv.data(),
                                Layout::strided(j * cin, kc, 1),
                                1.0,
                                &mut gx,
                                Layout::strided(b * t * cin + j * cin, stride * cin, 1),
                            );
                        }
                    }
                    NdArray::from_vec(vec![bsz, t, cin], gx).unwrap()
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![0.0; cout * kc];
                    for b in 0..bsz {
                        gemm(
                            cout,
                            tout,
                            kc,
                            1.0,
                            g.data(),
                            Layout::transposed(cout).at(b * tout * cout),
                            xv.data(),
                            Layout::strided(b * t * cin, stride * cin, 1),
                            1.0,
                            &mut gw,
                            Layout::rows(kc),
                        );
                    }
                    NdArray::from_vec(vec![cout, k, cin], gw).unwrap()
                });
                vec![gx, gw]
            }),
        )
    }

    /// Zero padding along time.
    pub fn pad_time(&mut self, x: Var, left: usize, right: usize) -> Var {
        let (bsz, t, c) = btc(self.shape(x));
        let tp = t + left + right;
        let mut out = vec![0.0; bsz * tp * c];
        let xd = self.value(x).data();
        for b in 0..bsz {
            out[(b * tp + left) * c..(b * tp + left + t) * c]
                .copy_from_slice(&xd[b * t * c..(b + 1) * t * c]);
        }
        self.op(
            NdArray::from_vec(vec![bsz, tp, c], out).unwrap(),
            &[x],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(bsz * t * c);
                for b in 0..bsz {
                    gx.extend_from_slice(&g.data()[(b * tp + left) * c..(b * tp + left + t) * c]);
                }
                vec![Some(NdArray::from_vec(vec![bsz, t, c], gx).unwrap())]
            }),
        )
    }

    /// Keeps time steps `start..start + len`.
    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (bsz, t, c) = btc(self.shape(x));
        assert!(start + len <= t);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * len * c);
        for b in 0..bsz {
            out.extend_from_slice(&xd[(b * t + start) * c..(b * t + start + len) * c]);
        }
        self.op(
            NdArray::from_vec(vec![bsz, len, c], out).unwrap(),
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; bsz * t * c];
                for b in 0..bsz {
                    gx[(b * t + start) * c..(b * t + start + len) * c]
                        .copy_from_slice(&g.data()[b * len * c..(b + 1) * len * c]);
                }
                vec![Some(NdArray::from_vec(vec![bsz, t, c], gx).unwrap())]
            }),
        )
    }

    /// Non-overlapping average pooling over time; a trailing remainder is dropped.
    pub fn avg_pool_time(&mut self, x: Var, k: usize) -> Var {
        let (bsz, t, c) = btc(self.shape(x));
        let tout = t / k;
        assert!(
            tout >= 1,
            "avg_pool_time: sequence of {t} shorter than window {k}"
        );
        let xd = self.value(x).data();
        let inv = 1.0 / k as f64;
        let mut out = vec![0.0; bsz * tout * c];
        for b in 0..bsz {
            for to in 0..tout {
                let o = &mut out[(b * tout + to) * c..(b * tout + to + 1) * c];
                for j in 0..k {
                    let src = &xd[(b * t + to * k + j) * c..(b * t + to * k + j + 1) * c];
                    for (ov, sv) in o.iter_mut().zip(src) {
                        *ov += sv * inv;
                    }
                }
            }
        }
        self.op(
            NdArray::from_vec(vec![bsz, tout, c], out).unwrap(),
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; bsz * t * c];
                for b in 0..bsz {
                    for to in 0..tout {
                        let gs = &g.data()[(b * tout + to) * c..(b * tout + to + 1) * c];
                        for j in 0..k {
                            let dst =
                                &mut gx[(b * t + to * k + j) * c..(b * t + to * k + j + 1) * c];
                            for (d, gv) in dst.iter_mut().zip(gs) {
                                *d = gv * inv;
                            }
                        }
                    }
                }
                vec![Some(NdArray::from_vec(vec![bsz, t, c], gx).unwrap())]
            }),
        )
    }

    /// Mean over time: `[B, T, C] → [B, C]`.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let (bsz, t, c) = btc(self.shape(x));
        let xd = self.value(x).data();
        let inv = 1.0 / t as f64;
        let mut out = vec![0.0; bsz * c];
        for b in 0..bsz {
            let o = &mut out[b * c..(b + 1) * c];
            for row in xd[b * t * c..(b + 1) * t * c].chunks(c) {
                for (ov, v) in o.iter_mut().zip(row) {
                    *ov += v;
                }
            }
            o.iter_mut().for_each(|v| *v *= inv);
        }
        self.op(
            NdArray::from_vec(vec![bsz, c], out).unwrap(),
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; bsz * t * c];
                for b in 0..bsz {
                    let gs = &g.data()[b * c..(b + 1) * c];
                    for row in gx[b * t * c..(b + 1) * t * c].chunks_mut(c) {
                        for (d, gv) in row.iter_mut().zip(gs) {
                            *d = gv * inv;
                        }
                    }
                }
                vec![Some(NdArray::from_vec(vec![bsz, t, c], gx).unwrap())]
            }),
        )
    }

    pub fn reverse_time(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = reverse_time_array(self.value(x));
        self.op(
            out,
            &[x],
            Box::new(move |g, _| {
                debug_assert_eq!(g.shape(), &shape[..]);
                vec![Some(reverse_time_array(g))]
            }),
        )
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(
            sa[..sa.len() - 1],
            sb[..sb.len() - 1],
            "concat_last: leading dims differ"
        );
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = self.value(a).len() / ca;
        let mut out = Vec::with_capacity(rows * (ca + cb));
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for r in 0..rows {
            out.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut oshape = sa.clone();
        *oshape.last_mut().unwrap() = ca + cb;
        self.op(
            NdArray::from_vec(oshape, out).unwrap(),
            &[a, b],
            Box::new(move |g, _| {
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    Some(NdArray::from_vec(sa.clone(), ga).unwrap()),
                    Some(NdArray::from_vec(sb.clone(), gb).unwrap()),
                ]
            }),
        )
    }
}

/// Reverses the time axis of a `[B, T, C]` array.
pub fn reverse_time_array(x: &NdArray) -> NdArray {
    let (bsz, t, c) = btc(x.shape());
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for b in 0..bsz {
        for ti in (0..t).rev() {
            out.extend_from_slice(&xd[(b * t + ti) * c..(b * t + ti + 1) * c]);
        }
    }
    NdArray::from_vec(x.shape().to_vec(), out).unwrap()
}
