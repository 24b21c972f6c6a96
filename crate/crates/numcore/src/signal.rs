//! 1-D signal primitives: direct and FFT convolution, softmax.
//!
//! Convolution uses the correlation convention throughout:
//! `out[i] = Σ_j signal[i + j] · kernel[j]` (the kernel is not flipped).
//! The FFT helpers compute ordinary (flipped) linear convolution, which is what
//! causal filtering needs; [`correlate_valid_fft`] bridges the two.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

use crate::array::NdArray;
use crate::error::{NumError, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// In-place forward DFT (unnormalized).
pub fn fft_in_place(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// In-place inverse DFT, normalized by `1/n`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    plan(n, true).process(buf);
    let s = 1.0 / n as f64;
    for z in buf.iter_mut() {
        *z *= s;
    }
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft_in_place(&mut buf);
    buf
}

/// Valid-mode correlation, `O(L·K)` direct loop.
pub fn conv1d_valid(signal: &NdArray, kernel: &NdArray) -> Result<NdArray> {
    let (s, k) = (signal.data(), kernel.data());
    if k.len() > s.len() {
        return Err(NumError::KernelTooLong {
            kernel: k.len(),
            signal: s.len(),
        });
    }
    if k.is_empty() {
        return Err(NumError::Invalid("empty kernel".into()));
    }
    let out: Vec<f64> = (0..=s.len() - k.len())
        .map(|i| s[i..i + k.len()].iter().zip(k).map(|(a, b)| a * b).sum())
        .collect();
    Ok(NdArray::vector(&out))
}

/// Full linear convolution (`len(a) + len(b) - 1` samples) through a
/// zero-padded power-of-two FFT.
pub fn fft_linear_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    FftConvolver::new(b, a.len()).convolve(a)
}

/// Circular convolution of two equal-length arrays:
/// `out[n] = Σ_m a[m] · b[(n − m) mod L]`.
///
/// Realized as a zero-padded linear convolution folded back modulo `L`, so any
/// `L` is accepted.
pub fn fft_circular_convolve(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    if a.shape() != b.shape() || a.ndim() != 1 {
        return Err(NumError::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let l = a.len();
    let full = fft_linear_convolve(a.data(), b.data());
    let mut out = vec![0.0; l];
    for (i, v) in full.into_iter().enumerate() {
        out[i % l] += v;
    }
    Ok(NdArray::vector(&out))
}

/// Kernels up to this length are correlated directly.
const DIRECT_KERNEL_MAX: usize = 32;

/// Valid-mode correlation computed through the FFT; numerically matches
/// [`conv1d_valid`] and is much cheaper for long kernels. Short kernels take
/// the direct loop.
pub fn correlate_valid_fft(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() > signal.len() {
        return Err(NumError::KernelTooLong {
            kernel: kernel.len(),
            signal: signal.len(),
        });
    }
    if kernel.len() <= DIRECT_KERNEL_MAX {
        return Ok((0..=signal.len() - kernel.len())
            .map(|i| {
                signal[i..i + kernel.len()]
                    .iter()
                    .zip(kernel)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect());
    }
    let flipped: Vec<f64> = kernel.iter().rev().copied().collect();
    let full = fft_linear_convolve(signal, &flipped);
    Ok(full[kernel.len() - 1..signal.len()].to_vec())
}

/// Linear convolution against a fixed kernel whose spectrum is computed once.
pub struct FftConvolver {
    kernel_spec: Vec<Complex64>,
    kernel_len: usize,
    n: usize,
}

impl FftConvolver {
    /// Prepares a convolver for signals of up to `max_signal_len` samples.
    pub fn new(kernel: &[f64], max_signal_len: usize) -> Self {
        let n = (max_signal_len + kernel.len())
            .saturating_sub(1)
            .max(1)
            .next_power_of_two();
        Self {
            kernel_spec: spectrum(kernel, n),
            kernel_len: kernel.len(),
            n,
        }
    }

    /// Convolves two real signals with one complex transform by packing them
    /// as real and imaginary parts.
    pub fn convolve_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(a.len(), b.len(), "paired signals must have equal length");
        let out_len = a.len() + self.kernel_len - 1;
        assert!(
            out_len <= self.n,
            "signal longer than the convolver was planned for"
        );
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (z, (&x, &y)) in buf.iter_mut().zip(a.iter().zip(b)) {
            *z = Complex64::new(x, y);
        }
        fft_in_place(&mut buf);
        for (x, k) in buf.iter_mut().zip(&self.kernel_spec) {
            *x *= k;
        }
        ifft_in_place(&mut buf);
        buf[..out_len].iter().map(|z| (z.re, z.im)).unzip()
    }

    /// Full linear convolution of `signal` with the kernel.
    pub fn convolve(&self, signal: &[f64]) -> Vec<f64> {
        assert!(
            signal.len() + self.kernel_len - 1 <= self.n,
            "signal longer than the convolver was planned for"
        );
        let mut buf = spectrum(signal, self.n);
        for (x, k) in buf.iter_mut().zip(&self.kernel_spec) {
            *x *= k;
        }
        ifft_in_place(&mut buf);
        buf[..signal.len() + self.kernel_len - 1]
            .iter()
            .map(|z| z.re)
            .collect()
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Shift-stable softmax over a slice, written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Softmax of a 1-D logit vector. NaN (or infinite) logits are rejected.
pub fn softmax(logits: &NdArray) -> Result<NdArray> {
    if !logits.all_finite() {
        return Err(NumError::NonFinite("softmax logits"));
    }
    if logits.is_empty() {
        return Err(NumError::Invalid("softmax of an empty vector".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits.data(), &mut out);
    NdArray::from_vec(logits.shape().to_vec(), out)
}
