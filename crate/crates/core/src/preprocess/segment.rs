//! Split-then-segment windowing, per-channel standardization and the
//! segment archive format.

use std::fmt;
use std::fs;
use std::path::Path;

use numcore::NdArray;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::recording::{Recording, TaskLabel, NUM_CLASSES};

/// Label stored for segments of tasks outside the trained class set.
pub const OOD_LABEL: usize = NUM_CLASSES;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Fractions of each recording given to train, validation and test, in time
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        Self([0.6, 0.2, 0.2])
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|r| !(*r >= 0.0)) {
            return Err(BenchError::Config(
                "split ratios must be non-negative".into(),
            ));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BenchError::Config(format!(
                "ratios must sum to 1 (got {total})"
            )));
        }
        Ok(())
    }

    /// Contiguous `[start, end)` spans covering `0..n`.
    pub fn spans(&self, n: usize) -> [(usize, usize); 3] {
        let b1 = (self.0[0] * n as f64).round() as usize;
        let b2 = ((self.0[0] + self.0[1]) * n as f64).round() as usize;
        [(0, b1.min(n)), (b1.min(n), b2.min(n)), (b2.min(n), n)]
    }
}

/// Windowing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Windowing {
    pub window_s: f64,
    pub overlap: f64,
}

impl Windowing {
    pub fn new(window_s: f64, overlap: f64) -> Result<Self> {
        if !(window_s > 0.0) {
            return Err(BenchError::Config(format!(
                "window length {window_s} s must be positive"
            )));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(BenchError::Config(format!(
                "overlap {overlap} must lie in [0, 1)"
            )));
        }
        Ok(Self { window_s, overlap })
    }

    pub fn window_len(&self, rate: f64) -> usize {
        (self.window_s * rate).round() as usize
    }

    pub fn hop(&self, rate: f64) -> usize {
        let t = self.window_len(rate);
        (t - (t as f64 * self.overlap).round() as usize).max(1)
    }

    /// Window start offsets inside a span, never crossing its end.
    pub fn starts(&self, span: (usize, usize), rate: f64) -> Vec<usize> {
        let (t, hop) = (self.window_len(rate), self.hop(rate));
        let mut starts = Vec::new();
        let mut s = span.0;
        while s + t <= span.1 {
            starts.push(s);
            s += hop;
        }
        starts
    }
}

/// Labeled windows drawn from one split of one or more recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub split: Split,
    pub sample_rate: f64,
    pub window_seconds: f64,
    /// Each `[channels, window_len]`.
    pub segments: Vec<NdArray>,
    pub labels: Vec<usize>,
    pub tasks: Vec<TaskLabel>,
    pub subject_ids: Vec<String>,
    /// Source recording key and `[start, end)` sample range, per segment.
    pub sources: Vec<(String, (usize, usize))>,
    pub warnings: Vec<String>,
}

impl SegmentSet {
    pub fn empty(split: Split, sample_rate: f64, window_seconds: f64) -> Self {
        Self {
            split,
            sample_rate,
            window_seconds,
            segments: Vec::new(),
            labels: Vec::new(),
            tasks: Vec::new(),
            subject_ids: Vec::new(),
            sources: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `[channels, window_len]` shared by all segments.
    pub fn segment_shape(&self) -> Option<&[usize]> {
        self.segments.first().map(|s| s.shape())
    }

    pub fn extend(&mut self, other: SegmentSet) -> Result<()> {
        if let (Some(a), Some(b)) = (self.segment_shape(), other.segment_shape()) {
            if a != b {
                return Err(BenchError::Data(format!(
                    "cannot merge segments of shape {a:?} and {b:?}"
                )));
            }
        }
        self.segments.extend(other.segments);
        self.labels.extend(other.labels);
        self.tasks.extend(other.tasks);
        self.subject_ids.extend(other.subject_ids);
        self.sources.extend(other.sources);
        self.warnings.extend(other.warnings);
        Ok(())
    }

    /// Stacks the selected segments into `[batch, channels, time]`.
    pub fn batch(&self, indices: &[usize]) -> NdArray {
        let shape = self
            .segment_shape()
            .expect("batch from empty segment set")
            .to_vec();
        let mut data = Vec::with_capacity(indices.len() * shape[0] * shape[1]);
        for &i in indices {
            data.extend_from_slice(self.segments[i].data());
        }
        NdArray::from_vec(vec![indices.len(), shape[0], shape[1]], data).unwrap()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn map_segments(mut self, f: impl Fn(&NdArray) -> NdArray) -> Self {
        self.segments = self.segments.iter().map(f).collect();
        self
    }

    pub fn all_in_distribution(&self) -> bool {
        self.labels.iter().all(|&l| l < NUM_CLASSES)
    }
}

/// Train, validation and test sets of one windowing run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSets {
    pub train: SegmentSet,
    pub val: SegmentSet,
    pub test: SegmentSet,
}

impl SplitSets {
    pub fn empty(sample_rate: f64, window_seconds: f64) -> Self {
        Self {
            train: SegmentSet::empty(Split::Train, sample_rate, window_seconds),
            val: SegmentSet::empty(Split::Val, sample_rate, window_seconds),
            test: SegmentSet::empty(Split::Test, sample_rate, window_seconds),
        }
    }

    pub fn get(&self, split: Split) -> &SegmentSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut SegmentSet {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn extend(&mut self, other: SplitSets) -> Result<()> {
        self.train.extend(other.train)?;
        self.val.extend(other.val)?;
        self.test.extend(other.test)
    }
}

fn cut(rec: &Recording, split: Split, span: (usize, usize), win: &Windowing) -> SegmentSet {
    let mut set = SegmentSet::empty(split, rec.sample_rate, win.window_s);
    let t = win.window_len(rec.sample_rate);
    let starts = win.starts(span, rec.sample_rate);
    if starts.is_empty() {
        set.warnings.push(format!(
            "{}: {split} span of {} samples is shorter than one {t}-sample window; split left empty",
            rec.key(),
            span.1 - span.0
        ));
    }
    let label = rec.task_label.class().unwrap_or(OOD_LABEL);
    let c = rec.n_channels();
    for s in starts {
        let mut data = Vec::with_capacity(c * t);
        for ch in 0..c {
            data.extend_from_slice(&rec.samples.row(ch)[s..s + t]);
        }
        set.segments
            .push(NdArray::from_vec(vec![c, t], data).unwrap());
        set.labels.push(label);
        set.tasks.push(rec.task_label.clone());
        set.subject_ids.push(rec.subject_id.clone());
        set.sources.push((rec.key(), (s, s + t)));
    }
    set
}

/// Splits the recording into contiguous time spans, then windows each span
/// independently so no window straddles a split boundary.
pub fn split_then_segment(
    rec: &Recording,
    ratios: SplitRatios,
    win: &Windowing,
) -> Result<SplitSets> {
    ratios.validate()?;
    let spans = ratios.spans(rec.n_samples());
    Ok(SplitSets {
        train: cut(rec, Split::Train, spans[0], win),
        val: cut(rec, Split::Val, spans[1], win),
        test: cut(rec, Split::Test, spans[2], win),
    })
}

/// Windows the whole recording as one span (used for held-out units).
pub fn segment_whole(rec: &Recording, split: Split, win: &Windowing) -> SegmentSet {
    cut(rec, split, (0, rec.n_samples()), win)
}

/// Per-channel standardization to zero mean and unit population variance;
/// channels flatter than `1e-12` variance become zeros.
pub fn zscore(segment: &NdArray) -> NdArray {
    let (c, t) = (segment.shape()[0], segment.shape()[1]);
    let mut out = segment.clone();
    for ch in 0..c {
        let row = out.row_mut(ch);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        if var < VARIANCE_FLOOR {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let inv = 1.0 / var.sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: [usize; 3],
    split: Split,
    sample_rate: f64,
    window_seconds: f64,
    labels: Vec<usize>,
    tasks: Vec<TaskLabel>,
    subjects: Vec<String>,
    sources: Vec<(String, (usize, usize))>,
    warnings: Vec<String>,
}

/// Writes `<stem>.bin` (little-endian f32 segments) and `<stem>.json`.
pub fn write_segment_set(dir: &Path, stem: &str, set: &SegmentSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [c, t] = match set.segment_shape() {
        Some(&[c, t]) => [c, t],
        _ => [0, 0],
    };
    let mut body = Vec::with_capacity(set.len() * c * t * 4);
    for seg in &set.segments {
        for &v in seg.data() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let sidecar = Sidecar {
        shape: [set.len(), c, t],
        split: set.split,
        sample_rate: set.sample_rate,
        window_seconds: set.window_seconds,
        labels: set.labels.clone(),
        tasks: set.tasks.clone(),
        subjects: set.subject_ids.clone(),
        sources: set.sources.clone(),
        warnings: set.warnings.clone(),
    };
    fs::write(dir.join(format!("{stem}.bin")), body)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn read_segment_set(dir: &Path, stem: &str) -> Result<SegmentSet> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
    let path = dir.join(format!("{stem}.bin"));
    let body = fs::read(&path)?;
    let [n, c, t] = sidecar.shape;
    if body.len() != n * c * t * 4 || sidecar.labels.len() != n {
        return Err(BenchError::Corrupt {
            path,
            detail: "segment archive does not match its sidecar".into(),
            header_len: 0,
            expected: n * c * t * 4,
            actual: body.len(),
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let segments = values
        .chunks(c * t)
        .take(n)
        .map(|chunk| NdArray::from_vec(vec![c, t], chunk.to_vec()).unwrap())
        .collect();
    Ok(SegmentSet {
        split: sidecar.split,
        sample_rate: sidecar.sample_rate,
        window_seconds: sidecar.window_seconds,
        segments,
        labels: sidecar.labels,
        tasks: sidecar.tasks,
        subject_ids: sidecar.subjects,
        sources: sidecar.sources,
        warnings: sidecar.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_closed_form() {
        let s = NdArray::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let z = zscore(&s);
        let want = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in z.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_is_zeroed() {
        let s = NdArray::from_vec(vec![1, 4], vec![7.0; 4]).unwrap();
        assert!(zscore(&s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let err = SplitRatios([0.6, 0.2, 0.3]).validate().unwrap_err();
        assert!(err.to_string().contains("ratios must sum to 1"));
    }

    #[test]
    fn sixty_seconds_of_eight_second_windows() {
        let rec = Recording::new(
            "s",
            TaskLabel::Movie2,
            250.0,
            NdArray::zeros(vec![2, 15000]),
        )
        .unwrap();
        let win = Windowing::new(8.0, 0.5).unwrap();
        let sets = split_then_segment(&rec, SplitRatios::default(), &win).unwrap();
        assert_eq!(
            (sets.train.len(), sets.val.len(), sets.test.len()),
            (8, 2, 2)
        );
        assert!(sets.train.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn short_split_is_empty_with_warning() {
        let rec =
            Recording::new("s", TaskLabel::Movie1, 10.0, NdArray::zeros(vec![2, 100])).unwrap();
        let win = Windowing::new(3.0, 0.5).unwrap();
        let sets = split_then_segment(&rec, SplitRatios::default(), &win).unwrap();
        assert!(sets.val.is_empty());
        assert_eq!(sets.val.warnings.len(), 1);
        assert!(!sets.train.is_empty());
    }
}
