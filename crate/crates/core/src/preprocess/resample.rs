//! Anti-aliased rational-ratio resampling.
//!
//! The signal is first lowpassed at `0.45 * target_rate` with a 255-tap
//! Hamming sinc, then interpolated by a polyphase windowed-sinc bank. Both
//! stages use even reflection at the edges so the output keeps the input's
//! length scaled by the rate ratio.

use std::f64::consts::PI;

use numcore::NdArray;

use super::filter::{correlate_valid_rows, design_fir_lowpass, ANTI_ALIAS_TAPS};
use crate::error::{BenchError, Result};
use crate::recording::Recording;

pub const ANTI_ALIAS_FRACTION: f64 = 0.45;
/// Interpolation half-width, counted in zero crossings of the output-rate sinc.
const LOBES: f64 = 8.0;
const MAX_BANK: u64 = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(up, down)` with `target/source = up/down` in lowest terms, resolved to
/// millihertz.
fn rational_ratio(source: f64, target: f64) -> (u64, u64) {
    let s = (source * 1000.0).round() as u64;
    let t = (target * 1000.0).round() as u64;
    let g = gcd(s, t);
    (t / g, s / g)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // a single reflection is enough once the pad is shorter than the signal
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| x[reflect(i, x.len())])
        .collect()
}

/// Same-length filtering with even reflection at both ends.
pub fn filter_same(x: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let pad = (kernel.len() - 1) / 2;
    if x.len() <= pad {
        return Err(BenchError::Data(format!(
            "signal of {} samples too short for a {}-tap filter",
            x.len(),
            kernel.len()
        )));
    }
    let padded = reflect_pad(x, pad);
    Ok(correlate_valid_rows(&[&padded], kernel)?.remove(0))
}

/// [`filter_same`] over many rows at once.
fn filter_same_rows(rows: &[&[f64]], kernel: &[f64]) -> Result<Vec<Vec<f64>>> {
    let pad = (kernel.len() - 1) / 2;
    if rows.first().is_some_and(|r| r.len() <= pad) {
        return Err(BenchError::Data(format!(
            "signal of {} samples too short for a {}-tap filter",
            rows[0].len(),
            kernel.len()
        )));
    }
    let padded: Vec<Vec<f64>> = rows.iter().map(|r| reflect_pad(r, pad)).collect();
    let refs: Vec<&[f64]> = padded.iter().map(|r| r.as_slice()).collect();
    correlate_valid_rows(&refs, kernel)
}

struct Interpolator {
    ratio: f64,
    half_width: isize,
}

impl Interpolator {
    fn new(ratio: f64) -> Self {
        Self {
            ratio,
            half_width: (LOBES / ratio).ceil() as isize,
        }
    }

    /// Normalized taps for source offsets `-half_width+1 ..= half_width`
    /// around an output located `frac` samples past a source sample.
    fn taps(&self, frac: f64) -> Vec<f64> {
        let w = self.half_width as f64;
        let mut taps: Vec<f64> = (-self.half_width + 1..=self.half_width)
            .map(|j| {
                let x = j as f64 - frac;
                let arg = self.ratio * x;
                let sinc = if arg == 0.0 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                let hann = if x.abs() >= w {
                    0.0
                } else {
                    0.5 + 0.5 * (PI * x / w).cos()
                };
                sinc * hann
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        taps
    }
}

fn interpolate(
    x: &[f64],
    interp: &Interpolator,
    bank: &[Vec<f64>],
    up: u64,
    down: u64,
    out_len: usize,
) -> Vec<f64> {
    let n = x.len() as isize;
    (0..out_len as u64)
        .map(|m| {
            let pos = m * down;
            let first = (pos / up) as isize - interp.half_width + 1;
            let phase = (pos % up) as usize;
            let computed;
            let taps = if bank.is_empty() {
                computed = interp.taps(phase as f64 / up as f64);
                &computed
            } else {
                &bank[phase]
            };
            let last = first + taps.len() as isize;
            if first >= 0 && last <= n {
                taps.iter()
                    .zip(&x[first as usize..last as usize])
                    .map(|(w, v)| w * v)
                    .sum()
            } else {
                taps.iter()
                    .enumerate()
                    .map(|(k, w)| w * x[reflect(first + k as isize, x.len())])
                    .sum()
            }
        })
        .collect()
}

fn resample_rows(rows: &[&[f64]], source: f64, target: f64) -> Result<Vec<Vec<f64>>> {
    if !(target > 0.0 && target < source) {
        return Err(BenchError::Config(format!(
            "target rate {target} Hz must be positive and below the source rate {source} Hz"
        )));
    }
    let kernel = design_fir_lowpass(ANTI_ALIAS_FRACTION * target, source, ANTI_ALIAS_TAPS)?;
    let smooth = filter_same_rows(rows, kernel.data())?;
    let (up, down) = rational_ratio(source, target);
    let interp = Interpolator::new(up as f64 / down as f64);
    let bank: Vec<Vec<f64>> = if up <= MAX_BANK {
        (0..up).map(|p| interp.taps(p as f64 / up as f64)).collect()
    } else {
        Vec::new()
    };
    Ok(smooth
        .iter()
        .map(|x| {
            interpolate(
                x,
                &interp,
                &bank,
                up,
                down,
                resampled_len(x.len(), source, target),
            )
        })
        .collect())
}

pub fn resampled_len(n: usize, source: f64, target: f64) -> usize {
    (n as f64 * target / source).round() as usize
}

/// Resamples one channel.
pub fn resample_signal(x: &[f64], source: f64, target: f64) -> Result<Vec<f64>> {
    Ok(resample_rows(&[x], source, target)?.remove(0))
}

pub fn resample(rec: &Recording, target_rate: f64) -> Result<Recording> {
    if target_rate >= rec.sample_rate {
        return Err(BenchError::Config(format!(
            "resample target {target_rate} Hz must be below the source rate {} Hz",
            rec.sample_rate
        )));
    }
    let out_len = resampled_len(rec.n_samples(), rec.sample_rate, target_rate);
    let rows: Vec<&[f64]> = (0..rec.n_channels())
        .map(|ch| rec.samples.row(ch))
        .collect();
    let out = resample_rows(&rows, rec.sample_rate, target_rate)?.concat();
    let samples = NdArray::from_vec(vec![rec.n_channels(), out_len], out)?;
    Ok(rec.with_samples(samples, target_rate))
}
