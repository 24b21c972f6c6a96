//! Windowed-sinc FIR design and application.

use std::f64::consts::PI;

use numcore::signal::FftConvolver;
use numcore::NdArray;

use crate::error::{BenchError, Result};
use crate::recording::Recording;

/// Default band and kernel length for raw recordings at 250 Hz.
pub const DEFAULT_BAND_HZ: (f64, f64) = (1.0, 50.0);
pub const DEFAULT_BANDPASS_TAPS: usize = 1001;
pub const ANTI_ALIAS_TAPS: usize = 255;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn hamming(i: usize, n: usize) -> f64 {
    0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
}

/// Hamming-windowed sinc lowpass with unit DC gain. Only the first half is
/// evaluated; the second half is mirrored so the kernel is exactly symmetric.
fn lowpass_kernel(cutoff_hz: f64, sample_rate: f64, num_taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate;
    let mid = (num_taps - 1) / 2;
    let mut h = vec![0.0; num_taps];
    for i in 0..=mid {
        let v = 2.0 * fc * sinc(2.0 * fc * (i as f64 - mid as f64)) * hamming(i, num_taps);
        h[i] = v;
        h[num_taps - 1 - i] = v;
    }
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

fn check_taps(num_taps: usize) -> Result<()> {
    if num_taps < 3 || num_taps.is_multiple_of(2) {
        return Err(BenchError::Config(format!(
            "FIR length must be odd and >= 3, got {num_taps}"
        )));
    }
    Ok(())
}

pub fn design_fir_lowpass(cutoff_hz: f64, sample_rate: f64, num_taps: usize) -> Result<NdArray> {
    check_taps(num_taps)?;
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(BenchError::Config(format!(
            "lowpass cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    Ok(NdArray::vector(&lowpass_kernel(
        cutoff_hz,
        sample_rate,
        num_taps,
    )))
}

/// Linear-phase band-pass, built as the difference of two lowpass kernels.
pub fn design_fir_bandpass(
    low_hz: f64,
    high_hz: f64,
    sample_rate: f64,
    num_taps: usize,
) -> Result<NdArray> {
    check_taps(num_taps)?;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate / 2.0) {
        return Err(BenchError::Config(format!(
            "band edges must satisfy 0 < low < high < {}; got ({low_hz}, {high_hz})",
            sample_rate / 2.0
        )));
    }
    let hi = lowpass_kernel(high_hz, sample_rate, num_taps);
    let lo = lowpass_kernel(low_hz, sample_rate, num_taps);
    let h: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
    Ok(NdArray::vector(&h))
}

/// Valid-mode correlation of several equal-length rows with one kernel. The
/// kernel spectrum is shared and rows go through the FFT two at a time.
pub(crate) fn correlate_valid_rows(rows: &[&[f64]], kernel: &[f64]) -> Result<Vec<Vec<f64>>> {
    let Some(len) = rows.first().map(|r| r.len()) else {
        return Ok(Vec::new());
    };
    if kernel.len() > len {
        return Err(BenchError::Data(format!(
            "signal of {len} samples is shorter than the {}-tap kernel",
            kernel.len()
        )));
    }
    let flipped: Vec<f64> = kernel.iter().rev().copied().collect();
    let conv = FftConvolver::new(&flipped, len);
    let valid = kernel.len() - 1..len;
    let mut out = Vec::with_capacity(rows.len());
    for pair in rows.chunks(2) {
        match pair {
            [a, b] => {
                let (ya, yb) = conv.convolve_pair(a, b);
                out.push(ya[valid.clone()].to_vec());
                out.push(yb[valid.clone()].to_vec());
            }
            [a] => out.push(conv.convolve(a)[valid.clone()].to_vec()),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// Filters every channel with a symmetric kernel and keeps only fully
/// overlapped outputs, so output sample `i` aligns with input sample
/// `i + (N-1)/2` and the recording shrinks by `N-1`.
pub fn apply_fir(rec: &Recording, kernel: &NdArray) -> Result<Recording> {
    let taps = kernel.len();
    if taps > rec.n_samples() {
        return Err(BenchError::Data(format!(
            "recording {} has {} samples, shorter than the {taps}-tap filter",
            rec.key(),
            rec.n_samples()
        )));
    }
    let out_len = rec.n_samples() - taps + 1;
    let rows: Vec<&[f64]> = (0..rec.n_channels())
        .map(|ch| rec.samples.row(ch))
        .collect();
    let out = if taps == 1 {
        rows.iter()
            .flat_map(|r| r.iter().map(|v| v * kernel.data()[0]))
            .collect()
    } else {
        correlate_valid_rows(&rows, kernel.data())?.concat()
    };
    let samples = NdArray::from_vec(vec![rec.n_channels(), out_len], out)?;
    Ok(rec.with_samples(samples, rec.sample_rate))
}

/// Subtracts the instantaneous cross-channel mean.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    let (c, t) = (rec.n_channels(), rec.n_samples());
    if c < 2 {
        return Err(BenchError::Data(
            "common average reference needs at least two channels".into(),
        ));
    }
    let mut mean = vec![0.0; t];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(rec.samples.row(ch)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut samples = rec.samples.clone();
    for ch in 0..c {
        for (v, m) in samples.row_mut(ch).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Ok(rec.with_samples(samples, rec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::TaskLabel;

    #[test]
    fn bandpass_is_symmetric() {
        let k = design_fir_bandpass(1.0, 50.0, 250.0, 1001).unwrap();
        let d = k.data();
        for i in 0..d.len() {
            assert_eq!(d[i], d[d.len() - 1 - i]);
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(design_fir_bandpass(50.0, 1.0, 250.0, 101).is_err());
        assert!(design_fir_bandpass(1.0, 130.0, 250.0, 101).is_err());
        assert!(design_fir_bandpass(1.0, 50.0, 250.0, 100).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let s = NdArray::from_vec(vec![2, 5], (0..10).map(|v| v as f64).collect()).unwrap();
        let rec = Recording::new("a", TaskLabel::Movie1, 250.0, s.clone()).unwrap();
        let out = apply_fir(&rec, &NdArray::vector(&[1.0])).unwrap();
        assert_eq!(out.samples, s);
    }

    #[test]
    fn car_hand_case() {
        let s = NdArray::from_vec(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let rec = Recording::new("a", TaskLabel::Movie1, 250.0, s).unwrap();
        let out = common_average_reference(&rec).unwrap();
        assert_eq!(out.samples.data(), &[-1.0, 1.0]);
    }
}
