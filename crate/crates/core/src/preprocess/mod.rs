//! Recording preprocessing: band-pass, re-reference, optional resampling,
//! split-then-segment and per-channel standardization, in that fixed order.

mod filter;
mod resample;
mod segment;

pub use filter::{
    apply_fir, common_average_reference, design_fir_bandpass, design_fir_lowpass, ANTI_ALIAS_TAPS,
    DEFAULT_BANDPASS_TAPS, DEFAULT_BAND_HZ,
};
pub use resample::{filter_same, resample, resample_signal, resampled_len, ANTI_ALIAS_FRACTION};
pub use segment::{
    read_segment_set, segment_whole, split_then_segment, write_segment_set, zscore, SegmentSet,
    Split, SplitRatios, SplitSets, Windowing, OOD_LABEL,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::recording::Recording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    /// Band-pass edges in Hz; `None` skips filtering.
    pub band_hz: Option<(f64, f64)>,
    pub bandpass_taps: usize,
    pub common_average: bool,
    /// Rate fed to the models; `None` keeps the recording rate.
    pub target_rate: Option<f64>,
    pub ratios: SplitRatios,
    pub window_s: f64,
    pub overlap: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            band_hz: Some(DEFAULT_BAND_HZ),
            bandpass_taps: DEFAULT_BANDPASS_TAPS,
            common_average: true,
            target_rate: None,
            ratios: SplitRatios::default(),
            window_s: 8.0,
            overlap: 0.5,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        self.windowing()?;
        if let Some(r) = self.target_rate {
            if !(r > 0.0) {
                return Err(BenchError::Config(format!(
                    "target rate {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn windowing(&self) -> Result<Windowing> {
        Windowing::new(self.window_s, self.overlap)
    }
}

/// The continuous-signal stages: filter, re-reference, resample.
pub fn condition(rec: &Recording, cfg: &PrepConfig) -> Result<Recording> {
    let mut out = match cfg.band_hz {
        Some((lo, hi)) => {
            let kernel = design_fir_bandpass(lo, hi, rec.sample_rate, cfg.bandpass_taps)?;
            apply_fir(rec, &kernel)?
        }
        None => rec.clone(),
    };
    if cfg.common_average {
        out = common_average_reference(&out)?;
    }
    match cfg.target_rate {
        Some(r) if r < out.sample_rate => resample(&out, r),
        Some(r) if r > out.sample_rate => Err(BenchError::Config(format!(
            "target rate {r} Hz exceeds the recording rate {} Hz",
            out.sample_rate
        ))),
        _ => Ok(out),
    }
}

/// Windows an already conditioned recording and standardizes each window.
pub fn segment(rec: &Recording, cfg: &PrepConfig) -> Result<SplitSets> {
    let sets = split_then_segment(rec, cfg.ratios, &cfg.windowing()?)?;
    Ok(SplitSets {
        train: sets.train.map_segments(zscore),
        val: sets.val.map_segments(zscore),
        test: sets.test.map_segments(zscore),
    })
}

pub fn prepare(rec: &Recording, cfg: &PrepConfig) -> Result<SplitSets> {
    segment(&condition(rec, cfg)?, cfg)
}

/// Conditions recordings in parallel; output order matches input order.
pub fn condition_all(recs: &[Recording], cfg: &PrepConfig) -> Result<Vec<Recording>> {
    recs.par_iter().map(|r| condition(r, cfg)).collect()
}

/// Segments each conditioned recording and concatenates the splits in input
/// order.
pub fn segment_all(recs: &[Recording], cfg: &PrepConfig) -> Result<SplitSets> {
    let parts: Vec<SplitSets> = recs
        .par_iter()
        .map(|r| segment(r, cfg))
        .collect::<Result<_>>()?;
    let rate = recs.first().map_or(0.0, |r| r.sample_rate);
    let mut out = SplitSets::empty(rate, cfg.window_s);
    for p in parts {
        out.extend(p)?;
    }
    Ok(out)
}
