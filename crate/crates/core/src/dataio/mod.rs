//! Recording ingestion: per-run CSV files, annotation manifests, row
//! cleaning and a synthetic generator for dataset-free runs.

mod csvio;
mod synth;

pub use csvio::{
    aggregate_sessions, clean_rows, load_recording, read_manifest, write_manifest, write_recording_csv,
};
pub use synth::{synth_generate, SynthSpec};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 13 usable headset channels, in storage order (AF3 excluded).
pub const DEFAULT_CHANNELS: [&str; 13] = [
    "F3", "FC5", "F7", "T7", "P7", "O1", "O2", "P8", "T8", "F8", "AF4", "FC6", "F4",
];

/// Headset delivery rate used when none is configured.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 128.0;

pub fn default_channels() -> Vec<String> {
    DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect()
}

/// Binary annotation. `Truth` is index 0 and `Lie` index 1 everywhere,
/// including one-hot vectors and manifest files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Truth,
    Lie,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Truth, ClassLabel::Lie];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Truth => 0,
            ClassLabel::Lie => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Truth),
            1 => Some(ClassLabel::Lie),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Truth => "truth",
            ClassLabel::Lie => "lie",
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        let mut v = [0.0; 2];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything carrying a class label; lets balancing and splitting work on
/// recordings and windows alike.
pub trait Labeled {
    fn label(&self) -> ClassLabel;
}

/// One subject/run: an `n×c` sample matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub run_id: String,
    pub label: ClassLabel,
    pub channel_names: Vec<String>,
    /// Row-major, `n_samples() × channel_names.len()`, µV.
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl EegRecording {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        if self.channel_names.is_empty() {
            0
        } else {
            self.samples.len() / self.channel_names.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_channels();
        &self.samples[i * c..(i + 1) * c]
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.samples.iter().skip(j).step_by(self.n_channels()).copied().collect()
    }

    pub fn set_channel(&mut self, j: usize, values: &[f64]) {
        let c = self.n_channels();
        for (i, &v) in values.iter().enumerate() {
            self.samples[i * c + j] = v;
        }
    }
}

impl Labeled for EegRecording {
    fn label(&self) -> ClassLabel {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestSource {
    BagOfLies,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub run_id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
}

/// Annotated list of per-run files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub source: ManifestSource,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: channel {channel} missing from header")]
    MissingChannel { path: String, channel: String },
    #[error("{0}: no data rows")]
    EmptyFile(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("every row of {0} contains non-finite values")]
    AllRowsCorrupt(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest lists ({subject_id}, {run_id}) twice")]
    DuplicateEntry { subject_id: String, run_id: String },
    #[error("recording ({subject_id}, {run_id}): {source}")]
    Entry {
        subject_id: String,
        run_id: String,
        #[source]
        source: Box<DataError>,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
