//! Audio clips, WAV I/O, DCASE-style dataset manifests and a synthetic corpus
//! generator for running the pipeline without the real dataset.

mod manifest;
mod synth;
mod wav;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{parse_clip_name, scan_dataset, scan_pseudo, Manifest};
pub use synth::{generate_synthetic_corpus, SectionTones, SynthConfig, SynthCounts};
pub use wav::{read_wav, write_wav};

/// Working sample rate of the whole pipeline. Clips at other rates are
/// linearly resampled on load.
pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("no usable clips under {0}")]
    EmptyDataset(PathBuf),
    #[error("cannot parse DCASE tokens from file name {0:?}")]
    AmbiguousFilename(String),
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("unknown machine type {0:?}")]
    UnknownMachine(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A mono recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, CorpusError> {
        if samples.is_empty() {
            return Err(CorpusError::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(CorpusError::InvalidClip(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(CorpusError::InvalidClip(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Linear-interpolation resampling. Returns a clone when the rate already
    /// matches.
    pub fn resampled(&self, target_rate: u32) -> AudioClip {
        if target_rate == self.sample_rate || target_rate == 0 {
            return self.clone();
        }
        let ratio = f64::from(self.sample_rate) / f64::from(target_rate);
        let out_len = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let samples = resample_linear(&self.samples, ratio, out_len);
        AudioClip {
            samples,
            sample_rate: target_rate,
        }
    }
}

/// Reads `input` at fractional positions `i * step` for `i in 0..out_len`,
/// interpolating linearly and holding the last sample past the end.
fn resample_linear(input: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let last = input.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            if idx >= last {
                return input[last];
            }
            let frac = (pos - idx as f64) as f32;
            input[idx] * (1.0 - frac) + input[idx + 1] * frac
        })
        .collect()
}

/// The seven machine types of the DCASE 2022 task 2 development set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MachineType {
    #[serde(rename = "bearing")]
    Bearing,
    #[serde(rename = "fan")]
    Fan,
    #[serde(rename = "gearbox")]
    Gearbox,
    #[serde(rename = "slider")]
    Slider,
    #[serde(rename = "ToyCar")]
    ToyCar,
    #[serde(rename = "ToyTrain")]
    ToyTrain,
    #[serde(rename = "valve")]
    Valve,
}

impl MachineType {
    pub const ALL: [MachineType; 7] = [
        MachineType::Bearing,
        MachineType::Fan,
        MachineType::Gearbox,
        MachineType::Slider,
        MachineType::ToyCar,
        MachineType::ToyTrain,
        MachineType::Valve,
    ];

    /// Directory name used by the DCASE release.
    pub fn dir_name(self) -> &'static str {
        match self {
            MachineType::Bearing => "bearing",
            MachineType::Fan => "fan",
            MachineType::Gearbox => "gearbox",
            MachineType::Slider => "slider",
            MachineType::ToyCar => "ToyCar",
            MachineType::ToyTrain => "ToyTrain",
            MachineType::Valve => "valve",
        }
    }
}

impl fmt::Display for MachineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for MachineType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MachineType::ALL
            .into_iter()
            .find(|m| m.dir_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CorpusError::UnknownMachine(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::Unknown => "unknown",
        }
    }
}

/// Identity of one recording in a DCASE-style tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClipMeta {
    pub machine: MachineType,
    pub section: u8,
    pub domain: Domain,
    pub split: Split,
    pub label: Label,
    pub path: PathBuf,
}
