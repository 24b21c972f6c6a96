//! Helpers shared by the integration tests.
#![allow(dead_code)]

use eegbench::datagen::{generate_recording, recording_jobs, SynthConfig};
use eegbench::preprocess::{condition, PrepConfig, SegmentSet};
use eegbench::Recording;
use numcore::signal::fft_in_place;
use numcore::Complex64;

/// Generates and conditions recordings one at a time to bound memory.
pub fn conditioned(cfg: &SynthConfig, seed: u64, prep: &PrepConfig) -> Vec<Recording> {
    recording_jobs(cfg)
        .iter()
        .map(|job| condition(&generate_recording(cfg, seed, job).unwrap(), prep).unwrap())
        .collect()
}

/// Channel-averaged periodogram of a `[channels, time]` window.
pub fn periodogram(seg: &numcore::NdArray) -> Vec<f64> {
    let (c, t) = (seg.shape()[0], seg.shape()[1]);
    let mut p = vec![0.0; t / 2 + 1];
    for ch in 0..c {
        let mut buf: Vec<Complex64> = seg
            .row(ch)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft_in_place(&mut buf);
        for (k, pk) in p.iter_mut().enumerate() {
            *pk += buf[k].norm_sqr() / c as f64;
        }
    }
    p
}

/// Log relative power in `±1 Hz` around each class frequency.
pub fn band_features(seg: &numcore::NdArray, rate: f64, bands: &[f64]) -> Vec<f64> {
    let p = periodogram(seg);
    let t = seg.shape()[1] as f64;
    let hz = |k: usize| k as f64 * rate / t;
    let total: f64 = (0..p.len()).filter(|&k| hz(k) >= 1.0).map(|k| p[k]).sum();
    bands
        .iter()
        .map(|&f| {
            let band: f64 = (0..p.len())
                .filter(|&k| (hz(k) - f).abs() <= 1.0)
                .map(|k| p[k])
                .sum();
            (band / total).ln()
        })
        .collect()
}

/// Gaussian naive Bayes on band features: fit on `train`, accuracy on `test`.
pub fn band_power_accuracy(train: &SegmentSet, test: &SegmentSet, bands: &[f64]) -> f64 {
    let k = 4;
    let feats = |s: &SegmentSet| -> Vec<Vec<f64>> {
        s.segments
            .iter()
            .map(|g| band_features(g, s.sample_rate, bands))
            .collect()
    };
    let (ftr, fte) = (feats(train), feats(test));
    let d = bands.len();
    let mut mean = vec![vec![0.0; d]; k];
    let mut var = vec![vec![0.0; d]; k];
    let mut count = vec![0.0; k];
    for (f, &y) in ftr.iter().zip(&train.labels) {
        count[y] += 1.0;
        for j in 0..d {
            mean[y][j] += f[j];
        }
    }
    for c in 0..k {
        for j in 0..d {
            mean[c][j] /= count[c];
        }
    }
    for (f, &y) in ftr.iter().zip(&train.labels) {
        for j in 0..d {
            var[y][j] += (f[j] - mean[y][j]).powi(2);
        }
    }
    for c in 0..k {
        for j in 0..d {
            var[c][j] = var[c][j] / count[c] + 1e-9;
        }
    }
    let correct = fte
        .iter()
        .zip(&test.labels)
        .filter(|(f, &y)| {
            let score = |c: usize| -> f64 {
                (0..d)
                    .map(|j| -0.5 * ((f[j] - mean[c][j]).powi(2) / var[c][j] + var[c][j].ln()))
                    .sum()
            };
            let best = (0..k).fold(0, |b, c| if score(c) > score(b) { c } else { b });
            best == y
        })
        .count();
    correct as f64 / test.len() as f64
}
