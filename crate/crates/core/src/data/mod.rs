//! Samples, datasets, synthetic generation, subject-disjoint splits, pair
//! sampling and dataset file formats.

mod csv_io;
mod pairs;
mod persist;
mod split;
mod synth;

use std::path::PathBuf;

pub use csv_io::{export_csv, import_csv, CsvSchema};
pub use pairs::{
    compute_anchor, sample_contrastive_pairs, sample_preference_pairs, AnchorConfig,
    ContrastivePair, PairMode, PreferencePair, MAX_REDRAWS,
};
pub use persist::{load_dataset, read_dataset, save_dataset, write_dataset, CPDS_MAGIC, CPDS_VERSION};
pub use split::{split_by_subject, SplitSpec, Splits};
pub use synth::{generate_synthetic, generate_with_latents, GenConfig};

use crate::numcore::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("dataset has {subjects} subjects, at least 3 are needed to split")]
    TooFewSubjects { subjects: usize },
    #[error("{split} split has no normal samples")]
    NoNormalSamples { split: &'static str },
    #[error("cannot sample pairs: {0}")]
    Unsampleable(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("inconsistent file: {0}")]
    Inconsistent(String),
    #[error("refusing to save an empty dataset")]
    EmptyDataset,
    #[error("csv: missing column {0}")]
    MissingColumn(String),
    #[error("csv row {row}: column {column} is not a number ({value:?})")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("csv row {row}: expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("csv row {row}: severity {value} is outside 0..={max}")]
    SeverityOutOfRange { row: usize, value: i64, max: u8 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f32>,
    /// 0 is normal; 1..=K increasing severity.
    pub severity: u8,
    pub subject_id: u32,
}

impl Sample {
    pub fn is_normal(&self) -> bool {
        self.severity == 0
    }
}

/// Samples sharing a feature dimension and a severity scale `0..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    max_severity: u8,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, max_severity: u8, samples: Vec<Sample>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::InvalidConfig("feature dimension must be positive".into()));
        }
        if max_severity == 0 {
            return Err(DataError::InvalidConfig("need at least one abnormal level (K >= 1)".into()));
        }
        for (index, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(DataError::InvalidSample {
                    index,
                    reason: format!("{} features, expected {dim}", s.features.len()),
                });
            }
            if s.severity > max_severity {
                return Err(DataError::InvalidSample {
                    index,
                    reason: format!("severity {} exceeds {max_severity}", s.severity),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidSample {
                    index,
                    reason: "non-finite feature".into(),
                });
            }
        }
        Ok(Self {
            dim,
            max_severity,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K`: the highest severity level.
    pub fn max_severity(&self) -> u8 {
        self.max_severity
    }

    /// `K + 1`.
    pub fn num_classes(&self) -> usize {
        usize::from(self.max_severity) + 1
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn severities(&self) -> Vec<usize> {
        self.samples.iter().map(|s| usize::from(s.severity)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[usize::from(s.severity)] += 1;
        }
        counts
    }

    pub fn normal_indices(&self) -> Vec<usize> {
        self.indices_where(|s| s.is_normal())
    }

    pub fn abnormal_indices(&self) -> Vec<usize> {
        self.indices_where(|s| !s.is_normal())
    }

    pub fn indices_where(&self, pred: impl Fn(&Sample) -> bool) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(s))
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature matrix of the given samples, in the given order.
    pub fn features_of(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::new(vec![indices.len(), self.dim], data).expect("rows have dataset width")
    }

    pub fn features(&self) -> Tensor {
        let all: Vec<usize> = (0..self.len()).collect();
        self.features_of(&all)
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub(crate) fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> Self {
        Self {
            dim: self.dim,
            max_severity: self.max_severity,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}
