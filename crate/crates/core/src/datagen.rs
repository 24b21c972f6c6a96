//! Synthetic multichannel recordings with known class structure.
//!
//! Each movie class is a band-limited oscillation at a class frequency whose
//! amplitude follows a slow sinusoidal envelope with a class-specific period.
//! `n_sources` such oscillations (random phases) are projected onto the
//! channels through a subject-specific mixing matrix and buried in
//! independent pink noise. Resting recordings are noise only. Short windows
//! therefore see weak, partial evidence and long windows see whole envelope
//! cycles.

use std::f64::consts::PI;

use numcore::signal::{fft_in_place, ifft_in_place};
use numcore::{Complex64, NdArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::recording::{Recording, TaskLabel, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodTask {
    pub name: String,
    pub band_hz: f64,
    pub envelope_period_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub sessions_per_subject: usize,
    pub n_channels: usize,
    /// Latent oscillators per recording (columns of the mixing matrix).
    pub n_sources: usize,
    pub sample_rate: f64,
    pub duration_s: f64,
    /// Oscillation frequency of movie1..movie3; resting has none.
    pub band_hz: [f64; 3],
    pub envelope_period_s: [f64; 3],
    /// Per-subject frequency offsets are drawn uniformly from `±jitter`.
    pub subject_freq_jitter_hz: f64,
    pub mixing_seed: u64,
    /// Class signal power over pink-noise power, per channel, in dB.
    pub snr_db: f64,
    pub ood_tasks: Vec<OodTask>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            sessions_per_subject: 1,
            n_channels: 64,
            n_sources: 4,
            sample_rate: 250.0,
            duration_s: 500.0,
            band_hz: [6.0, 10.0, 20.0],
            envelope_period_s: [16.0, 24.0, 48.0],
            subject_freq_jitter_hz: 0.3,
            mixing_seed: 0,
            snr_db: -20.0,
            ood_tasks: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.n_subjects == 0
            || self.sessions_per_subject == 0
            || self.n_channels == 0
            || self.n_sources == 0
        {
            return bad("subject, session, channel and source counts must be positive".into());
        }
        if !(self.sample_rate > 0.0 && self.duration_s > 0.0) {
            return bad("sample rate and duration must be positive".into());
        }
        let limit = 0.45 * self.sample_rate;
        let bands = self
            .band_hz
            .iter()
            .copied()
            .chain(self.ood_tasks.iter().map(|t| t.band_hz));
        for f in bands {
            if !(f > 0.0 && f + self.subject_freq_jitter_hz < limit) {
                return bad(format!(
                    "band frequency {f} Hz must lie below 0.45 x rate = {limit} Hz"
                ));
            }
        }
        let periods = self
            .envelope_period_s
            .iter()
            .copied()
            .chain(self.ood_tasks.iter().map(|t| t.envelope_period_s));
        for p in periods {
            if !(p > 0.0 && p < self.duration_s) {
                return bad(format!(
                    "envelope period {p} s must be positive and below the duration"
                ));
            }
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts
        .iter()
        .fold(0x5851_f42d_4c95_7f2d, |acc, &p| mix(acc ^ mix(p)));
    ChaCha8Rng::seed_from_u64(seed)
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Two independent unit-variance series with power spectral density
/// proportional to `1/f`. Complex white noise is shaped by a real, symmetric
/// gain, so the real and imaginary parts of the result stay independent.
/// Shaping runs at a power-of-two length and the result is truncated.
pub fn pink_noise_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let m = n.next_power_of_two();
    let mut buf: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    fft_in_place(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..m {
        let bin = k.min(m - k) as f64;
        buf[k] /= bin.sqrt();
    }
    ifft_in_place(&mut buf);
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = buf[..n].iter().map(|c| (c.re, c.im)).unzip();
    standardize(&mut a);
    standardize(&mut b);
    (a, b)
}

/// Subject mixing matrix `[channels, sources]`; every column has unit mean
/// power per channel.
pub fn mixing_matrix(cfg: &SynthConfig, seed: u64, subject: usize) -> NdArray {
    let mut rng = stream(&[seed, cfg.mixing_seed, subject as u64, 0x006d_6978]);
    let (c, k) = (cfg.n_channels, cfg.n_sources);
    let mut m: Vec<f64> = (0..c * k).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..k {
        let norm = (0..c).map(|i| m[i * k + j] * m[i * k + j]).sum::<f64>() / c as f64;
        let s = norm.sqrt();
        (0..c).for_each(|i| m[i * k + j] /= s);
    }
    NdArray::from_vec(vec![c, k], m).unwrap()
}

fn subject_offset(cfg: &SynthConfig, seed: u64, subject: usize) -> f64 {
    let mut rng = stream(&[seed, cfg.mixing_seed, subject as u64, 0x006f_6666]);
    rng.random_range(-1.0..=1.0) * cfg.subject_freq_jitter_hz
}

/// Mean power of `e(t)·sin(·)` with `e = (1 + sin)/2` and independent phases.
const ENVELOPED_POWER: f64 = 3.0 / 16.0;

struct Oscillation {
    freq_hz: f64,
    period_s: f64,
}

fn synthesize(
    cfg: &SynthConfig,
    mixing: &NdArray,
    osc: Option<Oscillation>,
    rng: &mut ChaCha8Rng,
) -> NdArray {
    let (c, n) = (cfg.n_channels, cfg.samples());
    let mut data = Vec::with_capacity(c * n);
    for ch in (0..c).step_by(2) {
        let (a, b) = pink_noise_pair(n, rng);
        data.extend(a);
        if ch + 1 < c {
            data.extend(b);
        }
    }
    if let Some(osc) = osc {
        let k = cfg.n_sources;
        let amp = (10f64.powf(cfg.snr_db / 10.0) / (k as f64 * ENVELOPED_POWER)).sqrt();
        let env_phase = rng.random_range(0.0..2.0 * PI);
        let phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let mut src = vec![0.0; k];
        for t in 0..n {
            let time = t as f64 / cfg.sample_rate;
            let env = 0.5 * (1.0 + (2.0 * PI * time / osc.period_s + env_phase).sin());
            for (s, ph) in src.iter_mut().zip(&phases) {
                *s = amp * env * (2.0 * PI * osc.freq_hz * time + ph).sin();
            }
            for ch in 0..c {
                let row = mixing.row(ch);
                data[ch * n + t] += row.iter().zip(&src).map(|(m, s)| m * s).sum::<f64>();
            }
        }
    }
    // stored as f32 on disk; round now so file round trips are exact
    data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    NdArray::from_vec(vec![c, n], data).unwrap()
}

fn task_oscillation(cfg: &SynthConfig, task: &TaskLabel, offset: f64) -> Option<Oscillation> {
    match task {
        TaskLabel::Resting => None,
        TaskLabel::Ood(name) => {
            cfg.ood_tasks
                .iter()
                .find(|t| &t.name == name)
                .map(|t| Oscillation {
                    freq_hz: t.band_hz + offset,
                    period_s: t.envelope_period_s,
                })
        }
        movie => {
            let c = movie.class().unwrap();
            Some(Oscillation {
                freq_hz: cfg.band_hz[c] + offset,
                period_s: cfg.envelope_period_s[c],
            })
        }
    }
}

/// One recording to synthesize.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingJob {
    pub subject: usize,
    pub session: usize,
    pub task_index: usize,
    pub task: TaskLabel,
}

/// Every (subject, session, task) combination, in generation order.
pub fn recording_jobs(cfg: &SynthConfig) -> Vec<RecordingJob> {
    let tasks: Vec<TaskLabel> = (0..NUM_CLASSES)
        .filter_map(TaskLabel::from_class)
        .chain(cfg.ood_tasks.iter().map(|t| TaskLabel::Ood(t.name.clone())))
        .collect();
    let mut jobs = Vec::new();
    for subject in 0..cfg.n_subjects {
        for session in 0..cfg.sessions_per_subject {
            for (task_index, task) in tasks.iter().enumerate() {
                jobs.push(RecordingJob {
                    subject,
                    session,
                    task_index,
                    task: task.clone(),
                });
            }
        }
    }
    jobs
}

/// Synthesizes one recording from its own RNG stream.
pub fn generate_recording(cfg: &SynthConfig, seed: u64, job: &RecordingJob) -> Result<Recording> {
    let mixing = mixing_matrix(cfg, seed, job.subject);
    let offset = subject_offset(cfg, seed, job.subject);
    let mut rng = stream(&[
        seed,
        job.subject as u64,
        job.session as u64,
        job.task_index as u64,
    ]);
    let samples = synthesize(
        cfg,
        &mixing,
        task_oscillation(cfg, &job.task, offset),
        &mut rng,
    );
    let mut rec = Recording::new(
        format!("sub{:02}", job.subject),
        job.task.clone(),
        cfg.sample_rate,
        samples,
    )?;
    if cfg.sessions_per_subject > 1 {
        rec.session = Some(format!("ses{}", job.session));
    }
    Ok(rec)
}

/// One recording per (subject, session, task); deterministic in `seed` and
/// independent of thread count.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<Recording>> {
    cfg.validate()?;
    recording_jobs(cfg)
        .par_iter()
        .map(|job| generate_recording(cfg, seed, job))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_differ() {
        let a: u64 = stream(&[1, 2, 3]).random();
        let b: u64 = stream(&[1, 2, 4]).random();
        assert_ne!(a, b);
    }

    #[test]
    fn pink_noise_has_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = pink_noise_pair(4096, &mut rng);
        for x in [a, b] {
            let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_band_above_limit() {
        let cfg = SynthConfig {
            band_hz: [6.0, 10.0, 120.0],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
