//! Continuous multichannel recordings and their on-disk format.
//!
//! A recording file is one JSON header line followed by raw little-endian
//! `f32` samples in channel-major order. A dataset directory additionally
//! carries `manifest.jsonl` with one entry per recording file.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use numcore::NdArray;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["movie1", "movie2", "movie3", "resting"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskLabel {
    Movie1,
    Movie2,
    Movie3,
    Resting,
    Ood(String),
}

impl TaskLabel {
    pub fn from_class(class: usize) -> Option<Self> {
        match class {
            0 => Some(Self::Movie1),
            1 => Some(Self::Movie2),
            2 => Some(Self::Movie3),
            3 => Some(Self::Resting),
            _ => None,
        }
    }

    /// Class index for in-distribution tasks, `None` for OOD tasks.
    pub fn class(&self) -> Option<usize> {
        match self {
            Self::Movie1 => Some(0),
            Self::Movie2 => Some(1),
            Self::Movie3 => Some(2),
            Self::Resting => Some(3),
            Self::Ood(_) => None,
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ood(name) => write!(f, "ood_task:{name}"),
            other => f.write_str(CLASS_NAMES[other.class().unwrap()]),
        }
    }
}

impl FromStr for TaskLabel {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("ood_task:") {
            if name.is_empty() {
                return Err(BenchError::Data("empty OOD task name".into()));
            }
            return Ok(Self::Ood(name.to_string()));
        }
        CLASS_NAMES
            .iter()
            .position(|&n| n == s)
            .and_then(Self::from_class)
            .ok_or_else(|| BenchError::Data(format!("unknown task label {s:?}")))
    }
}

impl Serialize for TaskLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One continuous recording; `samples` is `[channels, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub session: Option<String>,
    pub task_label: TaskLabel,
    pub sample_rate: f64,
    pub samples: NdArray,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        task_label: TaskLabel,
        sample_rate: f64,
        samples: NdArray,
    ) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            session: None,
            task_label,
            sample_rate,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(BenchError::Data(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        if self.samples.ndim() != 2 {
            return Err(BenchError::Data(format!(
                "samples must be [channels, time], got {:?}",
                self.samples.shape()
            )));
        }
        if !self.samples.all_finite() {
            return Err(BenchError::Data(format!(
                "recording {} contains NaN or inf",
                self.key()
            )));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }

    /// Unit used for leave-one-out folds: the subject plus its session, if any.
    pub fn unit(&self) -> String {
        match &self.session {
            Some(s) => format!("{}/{}", self.subject_id, s),
            None => self.subject_id.clone(),
        }
    }

    /// Stable identifier, also used as the file stem.
    pub fn key(&self) -> String {
        let task = self.task_label.to_string().replace(':', "-");
        match &self.session {
            Some(s) => format!("{}_{}_{}", self.subject_id, s, task),
            None => format!("{}_{}", self.subject_id, task),
        }
    }

    /// Same metadata, new samples (and possibly a new rate).
    pub fn with_samples(&self, samples: NdArray, sample_rate: f64) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            session: self.session.clone(),
            task_label: self.task_label.clone(),
            sample_rate,
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session: Option<String>,
    task_label: TaskLabel,
    sample_rate: f64,
    n_channels: usize,
    n_samples: usize,
    byte_order: String,
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    rec.validate()?;
    let header = Header {
        subject_id: rec.subject_id.clone(),
        session: rec.session.clone(),
        task_label: rec.task_label.clone(),
        sample_rate: rec.sample_rate,
        n_channels: rec.n_channels(),
        n_samples: rec.n_samples(),
        byte_order: "little".into(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    buf.reserve(rec.samples.len() * 4);
    for &v in rec.samples.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let bytes = fs::read(path)?;
    let corrupt = |detail: &str, header_len, expected, actual| BenchError::Corrupt {
        path: path.to_path_buf(),
        detail: detail.to_string(),
        header_len,
        expected,
        actual,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header line", 0, 0, bytes.len()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.byte_order != "little" {
        return Err(BenchError::Data(format!(
            "unsupported byte order {:?}",
            header.byte_order
        )));
    }
    let body = &bytes[newline + 1..];
    let expected = header.n_channels * header.n_samples * 4;
    if body.len() != expected {
        return Err(corrupt(
            "body length does not match header",
            newline + 1,
            expected,
            body.len(),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let samples = NdArray::from_vec(vec![header.n_channels, header.n_samples], data)?;
    let rec = Recording {
        subject_id: header.subject_id,
        session: header.session,
        task_label: header.task_label,
        sample_rate: header.sample_rate,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub task_label: TaskLabel,
    pub sample_rate: f64,
    pub n_channels: usize,
    pub n_samples: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const RECORDING_EXT: &str = "rec";

/// Writes every recording plus the manifest into `dir`.
pub fn write_dataset(dir: &Path, recordings: &[Recording]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(recordings.len());
    let mut manifest = Vec::new();
    for rec in recordings {
        let file = format!("{}.{RECORDING_EXT}", rec.key());
        write_recording(&dir.join(&file), rec)?;
        let entry = ManifestEntry {
            file,
            subject_id: rec.subject_id.clone(),
            session: rec.session.clone(),
            task_label: rec.task_label.clone(),
            sample_rate: rec.sample_rate,
            n_channels: rec.n_channels(),
            n_samples: rec.n_samples(),
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest.push(b'\n');
        entries.push(entry);
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(BenchError::Data(format!(
            "no dataset at {} (missing {MANIFEST_FILE}); run `eegbench synth --out {}` first",
            dir.display(),
            dir.display()
        )));
    }
    let file = fs::File::open(&path)?;
    let mut entries = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    Ok(entries)
}

/// Reads all recordings listed in the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<Recording>> {
    read_manifest(dir)?
        .iter()
        .map(|e| read_recording(&dir.join(&e.file)))
        .collect()
}

pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(dir)?
        .into_iter()
        .map(|e| dir.join(e.file))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_strings() {
        for s in ["movie1", "movie2", "movie3", "resting", "ood_task:symbols"] {
            assert_eq!(s.parse::<TaskLabel>().unwrap().to_string(), s);
        }
        assert!("movie4".parse::<TaskLabel>().is_err());
        assert!("ood_task:".parse::<TaskLabel>().is_err());
    }

    #[test]
    fn rejects_nan_samples() {
        let s = NdArray::from_vec(vec![1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(Recording::new("s", TaskLabel::Resting, 250.0, s).is_err());
    }
}
