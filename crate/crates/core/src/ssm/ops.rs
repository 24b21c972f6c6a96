//! Differentiable SSM operations on the tape.
//!
//! Complex cotangents follow the convention `g = ∂L/∂Re + i·∂L/∂Im`, so for
//! `w = a·z` the cotangent of `z` is `conj(a)·g_w`.

use numcore::linalg::{gemm, Layout};
use numcore::signal::{fft_in_place, ifft_in_place};
use numcore::{Complex64, NdArray, Tape, Var};
use rayon::prelude::*;

use super::params::ZohTerms;
use super::scan::scan_constant;

/// Tape handles of one SSM layer's continuous parameters. `B` is `[P, H]`
/// and `C` is `[H, P]`, each split into real and imaginary parts.
#[derive(Debug, Clone, Copy)]
pub struct SsmVars {
    pub log_neg_real: Var,
    pub imag: Var,
    pub log_dt: Var,
    pub b_re: Var,
    pub b_im: Var,
    pub c_re: Var,
    pub c_im: Var,
}

impl SsmVars {
    fn all(&self) -> [Var; 7] {
        [
            self.log_neg_real,
            self.imag,
            self.log_dt,
            self.b_re,
            self.b_im,
            self.c_re,
            self.c_im,
        ]
    }

    /// `(states, features)` implied by the `B` shape.
    pub fn dims(&self, tape: &Tape) -> (usize, usize) {
        match *tape.shape(self.b_re) {
            [p, h] => (p, h),
            ref s => panic!("B must be [states, features], got {s:?}"),
        }
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Discretized parameters plus what the backward pass needs.
struct Discretized {
    terms: Vec<ZohTerms>,
    b: Vec<Complex64>,
    bb_re: Vec<f64>,
    bb_im: Vec<f64>,
    h: usize,
}

impl Discretized {
    fn new(tape: &Tape, v: &SsmVars) -> Self {
        let (p, h) = v.dims(tape);
        let get = |var: Var| tape.value(var).data();
        let (rho, imag, log_dt) = (get(v.log_neg_real), get(v.imag), get(v.log_dt));
        assert!(
            rho.len() == p && imag.len() == p && log_dt.len() == p,
            "state vectors must have {p} entries"
        );
        assert_eq!(tape.shape(v.b_im), [p, h]);
        assert_eq!(tape.shape(v.c_re), [h, p]);
        assert_eq!(tape.shape(v.c_im), [h, p]);
        let terms: Vec<ZohTerms> = (0..p)
            .map(|s| ZohTerms::new(Complex64::new(-rho[s].exp(), imag[s]), log_dt[s].exp()))
            .collect();
        let b: Vec<Complex64> = get(v.b_re)
            .iter()
            .zip(get(v.b_im))
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        let (bb_re, bb_im) = b
            .iter()
            .enumerate()
            .map(|(k, bk)| {
                let z = terms[k / h].q * bk;
                (z.re, z.im)
            })
            .unzip();
        Self {
            terms,
            b,
            bb_re,
            bb_im,
            h,
        }
    }

    fn p(&self) -> usize {
        self.terms.len()
    }

    fn lambda_bar(&self) -> Vec<Complex64> {
        self.terms.iter().map(|t| t.lambda_bar).collect()
    }

    /// Pulls cotangents of `Λ̄` and `B̄` back to
    /// `[log_neg_real, imag, log_dt, b_re, b_im]`.
    fn backprop(&self, g_lambda_bar: &[Complex64], gbb_re: &[f64], gbb_im: &[f64]) -> [NdArray; 5] {
        let (p, h) = (self.p(), self.h);
        let (mut g_rho, mut g_imag, mut g_log_dt) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        let (mut gb_re, mut gb_im) = (vec![0.0; p * h], vec![0.0; p * h]);
        for (s, t) in self.terms.iter().enumerate() {
            let mut g_q = zero();
            for j in s * h..(s + 1) * h {
                let gbb = Complex64::new(gbb_re[j], gbb_im[j]);
                g_q += self.b[j].conj() * gbb;
                let gb = t.q.conj() * gbb;
                gb_re[j] = gb.re;
                gb_im[j] = gb.im;
            }
            let (g_lambda, g_dt) = t.backprop(g_lambda_bar[s], g_q);
            // Re(Λ) = −exp(ρ), so ∂Re(Λ)/∂ρ = Re(Λ)
            g_rho[s] = g_lambda.re * t.lambda.re;
            g_imag[s] = g_lambda.im;
            g_log_dt[s] = g_dt * t.dt;
        }
        [
            NdArray::vector(&g_rho),
            NdArray::vector(&g_imag),
            NdArray::vector(&g_log_dt),
            NdArray::from_vec(vec![p, h], gb_re).unwrap(),
            NdArray::from_vec(vec![p, h], gb_im).unwrap(),
        ]
    }
}

/// Runs `x_t = a_s·x_{t−1} + v_t` over every `(batch, state)` series of a
/// `[B, T, P]` pair of planes. With `adjoint` the recurrence runs backwards
/// in time with `conj(a_s)`.
fn scan_planes(
    a: &[Complex64],
    re: &[f64],
    im: &[f64],
    bsz: usize,
    t: usize,
    adjoint: bool,
) -> (Vec<f64>, Vec<f64>) {
    let p = a.len();
    let series: Vec<Vec<Complex64>> = (0..bsz * p)
        .into_par_iter()
        .map_init(Vec::new, |scratch, k| {
            let (b, s) = (k / p, k % p);
            let at = |step: usize| {
                let idx = (b * t + step) * p + s;
                Complex64::new(re[idx], im[idx])
            };
            let mut v: Vec<Complex64> = if adjoint {
                (0..t).rev().map(at).collect()
            } else {
                (0..t).map(at).collect()
            };
            let coef = if adjoint { a[s].conj() } else { a[s] };
            scan_constant(coef, &mut v, scratch);
            if adjoint {
                v.reverse();
            }
            v
        })
        .collect();
    let (mut out_re, mut out_im) = (vec![0.0; bsz * t * p], vec![0.0; bsz * t * p]);
    for (k, v) in series.iter().enumerate() {
        let (b, s) = (k / p, k % p);
        for (step, z) in v.iter().enumerate() {
            let idx = (b * t + step) * p + s;
            out_re[idx] = z.re;
            out_im[idx] = z.im;
        }
    }
    (out_re, out_im)
}

fn btc(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [b, t, c] => (b, t, c),
        _ => panic!("expected a [batch, time, features] tensor, got {shape:?}"),
    }
}

/// Diagonal SSM over `u: [B, T, H]` via the associative scan, returning
/// `Re(C x_t)` (the feedthrough term is left to the caller).
pub fn s5_scan(tape: &mut Tape, u: Var, v: &SsmVars) -> Var {
    let (bsz, t, h) = btc(tape.shape(u));
    let disc = Discretized::new(tape, v);
    let p = disc.p();
    assert_eq!(disc.h, h, "input has {h} features, SSM expects {}", disc.h);
    let rows = bsz * t;
    let uv = tape.shared(u);
    let (c_re, c_im) = (tape.shared(v.c_re), tape.shared(v.c_im));

    let project = |bb: &[f64]| {
        let mut out = vec![0.0; rows * p];
        gemm(
            rows,
            h,
            p,
            1.0,
            uv.data(),
            Layout::rows(h),
            bb,
            Layout::transposed(h),
            0.0,
            &mut out,
            Layout::rows(p),
        );
        out
    };
    let (v_re, v_im) = (project(&disc.bb_re), project(&disc.bb_im));
    let lambda_bar = disc.lambda_bar();
    let (x_re, x_im) = scan_planes(&lambda_bar, &v_re, &v_im, bsz, t, false);

    let mut y = vec![0.0; rows * h];
    gemm(
        rows,
        p,
        h,
        1.0,
        &x_re,
        Layout::rows(p),
        c_re.data(),
        Layout::transposed(p),
        0.0,
        &mut y,
        Layout::rows(h),
    );
    gemm(
        rows,
        p,
        h,
        -1.0,
        &x_im,
        Layout::rows(p),
        c_im.data(),
        Layout::transposed(p),
        1.0,
        &mut y,
        Layout::rows(h),
    );

    let mut parents = vec![u];
    parents.extend(v.all());
    tape.op(
        NdArray::from_vec(vec![bsz, t, h], y).unwrap(),
        &parents,
        Box::new(move |g, needs| {
            let g = g.data();
            let mut gc_re = vec![0.0; h * p];
            let mut gc_im = vec![0.0; h * p];
            if needs[6] || needs[7] {
                gemm(
                    h,
                    rows,
                    p,
                    1.0,
                    g,
                    Layout::transposed(h),
                    &x_re,
                    Layout::rows(p),
                    0.0,
                    &mut gc_re,
                    Layout::rows(p),
                );
                gemm(
                    h,
                    rows,
                    p,
                    -1.0,
                    g,
                    Layout::transposed(h),
                    &x_im,
                    Layout::rows(p),
                    0.0,
                    &mut gc_im,
                    Layout::rows(p),
                );
            }
            let mut gx_re = vec![0.0; rows * p];
            let mut gx_im = vec![0.0; rows * p];
            gemm(
                rows,
                h,
                p,
                1.0,
                g,
                Layout::rows(h),
                c_re.data(),
                Layout::rows(p),
                0.0,
                &mut gx_re,
                Layout::rows(p),
            );
            gemm(
                rows,
                h,
                p,
                -1.0,
                g,
                Layout::rows(h),
                c_im.data(),
                Layout::rows(p),
                0.0,
                &mut gx_im,
                Layout::rows(p),
            );
            // cotangent of every state, accumulated backwards through time
            let (ga_re, ga_im) = scan_planes(&lambda_bar, &gx_re, &gx_im, bsz, t, true);

            let gu = needs[0].then(|| {
                let mut gu = vec![0.0; rows * h];
                gemm(
                    rows,
                    p,
                    h,
                    1.0,
                    &ga_re,
                    Layout::rows(p),
                    &disc.bb_re,
                    Layout::rows(h),
                    0.0,
                    &mut gu,
                    Layout::rows(h),
                );
                gemm(
                    rows,
                    p,
                    h,
                    1.0,
                    &ga_im,
                    Layout::rows(p),
                    &disc.bb_im,
                    Layout::rows(h),
                    1.0,
                    &mut gu,
                    Layout::rows(h),
                );
                NdArray::from_vec(vec![bsz, t, h], gu).unwrap()
            });

            let mut param_grads: [Option<NdArray>; 5] = Default::default();
            if needs[1..6].iter().any(|&n| n) {
                let mut g_lambda_bar = vec![zero(); p];
                for b in 0..bsz {
                    for step in 1..t {
                        let prev = (b * t + step - 1) * p;
                        let cur = (b * t + step) * p;
                        for s in 0..p {
                            let x = Complex64::new(x_re[prev + s], x_im[prev + s]);
                            let ga = Complex64::new(ga_re[cur + s], ga_im[cur + s]);
                            g_lambda_bar[s] += x.conj() * ga;
                        }
                    }
                }
                let mut gbb_re = vec![0.0; p * h];
                let mut gbb_im = vec![0.0; p * h];
                gemm(
                    p,
                    rows,
                    h,
                    1.0,
                    &ga_re,
                    Layout::transposed(p),
                    uv.data(),
                    Layout::rows(h),
                    0.0,
                    &mut gbb_re,
                    Layout::rows(h),
                );
                gemm(
                    p,
                    rows,
                    h,
                    1.0,
                    &ga_im,
                    Layout::transposed(p),
                    uv.data(),
                    Layout::rows(h),
                    0.0,
                    &mut gbb_im,
                    Layout::rows(h),
                );
                param_grads = disc.backprop(&g_lambda_bar, &gbb_re, &gbb_im).map(Some);
            }
            let [g_rho, g_imag, g_dt, g_bre, g_bim] = param_grads;
            vec![
                gu,
                g_rho,
                g_imag,
                g_dt,
                g_bre,
                g_bim,
                needs[6].then(|| NdArray::from_vec(vec![h, p], gc_re).unwrap()),
                needs[7].then(|| NdArray::from_vec(vec![h, p], gc_im).unwrap()),
            ]
        }),
    )
}

/// Materialized MIMO impulse response `K[o, i, s] = Re(Σ_p C[o,p]·Λ̄_pˢ·B̄[p,i])`
/// for `s < len`, shape `[H, H, len]`.
pub fn s4_kernel_op(tape: &mut Tape, v: &SsmVars, len: usize) -> Var {
    let disc = Discretized::new(tape, v);
    let (p, h) = (disc.p(), disc.h);
    let hh = h * h;
    let (c_re, c_im) = (tape.value(v.c_re).data(), tape.value(v.c_im).data());
    let c: Vec<Complex64> = c_re
        .iter()
        .zip(c_im)
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    // M[o, i, p] = C[o,p]·B̄[p,i]
    let (mut m_re, mut m_im) = (vec![0.0; hh * p], vec![0.0; hh * p]);
    for o in 0..h {
        for i in 0..h {
            for s in 0..p {
                let z = c[o * p + s] * Complex64::new(disc.bb_re[s * h + i], disc.bb_im[s * h + i]);
                m_re[(o * h + i) * p + s] = z.re;
                m_im[(o * h + i) * p + s] = z.im;
            }
        }
    }
    // Vandermonde rows V[p, s] = Λ̄_pˢ
    let lambda_bar = disc.lambda_bar();
    let (mut w_re, mut w_im) = (vec![0.0; p * len], vec![0.0; p * len]);
    for (s, lb) in lambda_bar.iter().enumerate() {
        let mut pow = Complex64::new(1.0, 0.0);
        for step in 0..len {
            w_re[s * len + step] = pow.re;
            w_im[s * len + step] = pow.im;
            pow *= lb;
        }
    }
    let mut k = vec![0.0; hh * len];
    gemm(
        hh,
        p,
        len,
        1.0,
        &m_re,
        Layout::rows(p),
        &w_re,
        Layout::rows(len),
        0.0,
        &mut k,
        Layout::rows(len),
    );
    gemm(
        hh,
        p,
        len,
        -1.0,
        &m_im,
        Layout::rows(p),
        &w_im,
        Layout::rows(len),
        1.0,
        &mut k,
        Layout::rows(len),
    );

    tape.op(
        NdArray::from_vec(vec![h, h, len], k).unwrap(),
        &v.all(),
        Box::new(move |g, needs| {
            let g = g.data();
            let (mut gm_re, mut gm_im) = (vec![0.0; hh * p], vec![0.0; hh * p]);
            gemm(
                hh,
                len,
                p,
                1.0,
                g,
                Layout::rows(len),
                &w_re,
                Layout::transposed(len),
                0.0,
                &mut gm_re,
                Layout::rows(p),
            );
            gemm(
                hh,
                len,
                p,
                -1.0,
                g,
                Layout::rows(len),
                &w_im,
                Layout::transposed(len),
                0.0,
                &mut gm_im,
                Layout::rows(p),
            );
            let gm = |idx: usize| Complex64::new(gm_re[idx], gm_im[idx]);

            let (mut gc_re, mut gc_im) = (vec![0.0; h * p], vec![0.0; h * p]);
            let (mut gbb_re, mut gbb_im) = (vec![0.0; p * h], vec![0.0; p * h]);
            for o in 0..h {
                for i in 0..h {
                    for s in 0..p {
                        let gz = gm((o * h + i) * p + s);
                        let bb = Complex64::new(disc.bb_re[s * h + i], disc.bb_im[s * h + i]);
                        let gc = bb.conj() * gz;
                        gc_re[o * p + s] += gc.re;
                        gc_im[o * p + s] += gc.im;
                        let gb = c[o * p + s].conj() * gz;
                        gbb_re[s * h + i] += gb.re;
                        gbb_im[s * h + i] += gb.im;
                    }
                }
            }

            let mut param_grads: [Option<NdArray>; 5] = Default::default();
            if needs[..5].iter().any(|&n| n) {
                let (mut gw_re, mut gw_im) = (vec![0.0; p * len], vec![0.0; p * len]);
                gemm(
                    p,
                    hh,
                    len,
                    1.0,
                    &m_re,
                    Layout::transposed(p),
                    g,
                    Layout::rows(len),
                    0.0,
                    &mut gw_re,
                    Layout::rows(len),
                );
                gemm(
                    p,
                    hh,
                    len,
                    -1.0,
                    &m_im,
                    Layout::transposed(p),
                    g,
                    Layout::rows(len),
                    0.0,
                    &mut gw_im,
                    Layout::rows(len),
                );
                // ∂Λ̄ˢ/∂Λ̄ = s·Λ̄ˢ⁻¹
                let g_lambda_bar: Vec<Complex64> = (0..p)
                    .map(|s| {
                        (1..len)
                            .map(|step| {
                                let prev = Complex64::new(
                                    w_re[s * len + step - 1],
                                    w_im[s * len + step - 1],
                                );
                                let gw =
                                    Complex64::new(gw_re[s * len + step], gw_im[s * len + step]);
                                (prev * step as f64).conj() * gw
                            })
                            .sum()
                    })
                    .collect();
                param_grads = disc.backprop(&g_lambda_bar, &gbb_re, &gbb_im).map(Some);
            }
            let [g_rho, g_imag, g_dt, g_bre, g_bim] = param_grads;
            vec![
                g_rho,
                g_imag,
                g_dt,
                g_bre,
                g_bim,
                needs[5].then(|| NdArray::from_vec(vec![h, p], gc_re).unwrap()),
                needs[6].then(|| NdArray::from_vec(vec![h, p], gc_im).unwrap()),
            ]
        }),
    )
}

fn padded_spectrum(x: impl Iterator<Item = f64>, n: usize) -> Vec<Complex64> {
    let mut buf = vec![zero(); n];
    buf.iter_mut().zip(x).for_each(|(b, v)| b.re = v);
    fft_in_place(&mut buf);
    buf
}

/// Spectrum of the first `t` taps starting at `offset`, zero-padded to `n`.
fn kernel_spectrum(k: &[f64], offset: usize, t: usize, n: usize) -> Vec<Complex64> {
    padded_spectrum(k[offset..offset + t].iter().copied(), n)
}

/// Causal multichannel convolution `y[b,t,o] = Σ_i Σ_{s≤t} K[o,i,s]·u[b,t−s,i]`
/// for `u: [B, T, H_in]` and `K: [H_out, H_in, L]` with `L ≥ T`; taps past
/// `T` are unused. Evaluated with FFTs padded to at least `2T`.
pub fn causal_conv(tape: &mut Tape, u: Var, k: Var) -> Var {
    let (bsz, t, hi) = btc(tape.shape(u));
    let &[ho, khi, len] = tape.shape(k) else {
        panic!("kernel must be [out, in, taps]");
    };
    assert_eq!(hi, khi, "causal_conv channel mismatch");
    assert!(
        len >= t,
        "kernel of {len} taps is shorter than the {t}-step input"
    );
    let n = (2 * t).next_power_of_two();
    let (uv, kv) = (tape.shared(u), tape.shared(k));
    let (ud, kd) = (uv.data(), kv.data());
    let u_hat: Vec<Vec<Complex64>> = (0..bsz * hi)
        .map(|bi| {
            let (b, i) = (bi / hi, bi % hi);
            padded_spectrum((0..t).map(|step| ud[(b * t + step) * hi + i]), n)
        })
        .collect();

    let mut y = vec![0.0; bsz * t * ho];
    for o in 0..ho {
        let k_hat: Vec<Vec<Complex64>> = (0..hi)
            .map(|i| kernel_spectrum(kd, (o * hi + i) * len, t, n))
            .collect();
        for b in 0..bsz {
            let mut acc = vec![zero(); n];
            for (i, kf) in k_hat.iter().enumerate() {
                acc.iter_mut()
                    .zip(kf.iter().zip(&u_hat[b * hi + i]))
                    .for_each(|(a, (kk, x))| *a += kk * x);
            }
            ifft_in_place(&mut acc);
            for step in 0..t {
                y[(b * t + step) * ho + o] = acc[step].re;
            }
        }
    }

    tape.op(
        NdArray::from_vec(vec![bsz, t, ho], y).unwrap(),
        &[u, k],
        Box::new(move |g, needs| {
            let gd = g.data();
            let g_hat: Vec<Vec<Complex64>> = (0..bsz * ho)
                .map(|bo| {
                    let (b, o) = (bo / ho, bo % ho);
                    padded_spectrum((0..t).map(|step| gd[(b * t + step) * ho + o]), n)
                })
                .collect();
            let mut gu_hat = if needs[0] {
                vec![vec![zero(); n]; bsz * hi]
            } else {
                Vec::new()
            };
            let mut gk = needs[1].then(|| vec![0.0; ho * hi * len]);
            for o in 0..ho {
                for i in 0..hi {
                    if needs[0] {
                        let kf = kernel_spectrum(kv.data(), (o * hi + i) * len, t, n);
                        for b in 0..bsz {
                            let gh = &g_hat[b * ho + o];
                            gu_hat[b * hi + i]
                                .iter_mut()
                                .zip(kf.iter().zip(gh))
                                .for_each(|(a, (kk, gg))| *a += kk.conj() * gg);
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        let mut acc = vec![zero(); n];
                        for b in 0..bsz {
                            let (gh, uh) = (&g_hat[b * ho + o], &u_hat[b * hi + i]);
                            acc.iter_mut()
                                .zip(gh.iter().zip(uh))
                                .for_each(|(a, (gg, x))| *a += gg * x.conj());
                        }
                        ifft_in_place(&mut acc);
                        let dst = &mut gk[(o * hi + i) * len..][..t];
                        dst.iter_mut().zip(&acc).for_each(|(d, a)| *d = a.re);
                    }
                }
            }
            let gu = needs[0].then(|| {
                let mut gu = vec![0.0; bsz * t * hi];
                for (bi, mut spec) in gu_hat.into_iter().enumerate() {
                    let (b, i) = (bi / hi, bi % hi);
                    ifft_in_place(&mut spec);
                    for step in 0..t {
                        gu[(b * t + step) * hi + i] = spec[step].re;
                    }
                }
                NdArray::from_vec(vec![bsz, t, hi], gu).unwrap()
            });
            vec![
                gu,
                gk.map(|gk| NdArray::from_vec(vec![ho, hi, len], gk).unwrap()),
            ]
        }),
    )
}
