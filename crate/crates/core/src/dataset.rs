//! Multi-label samples and the JSON Lines dataset format.
//!
//! One sample per line:
//!
//! ```text
//! {"id": "s17", "features": [0.1, -2.5, ...], "labels": ["cat", "dog"]}
//! ```
//!
//! Label strings are interned to [`ClassId`]s in order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    /// Sorted, without duplicates, never empty.
    labels: Vec<ClassId>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        features: Vec<f64>,
        mut labels: Vec<ClassId>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        labels.sort_unstable();
        let before = labels.len();
        labels.dedup();
        if labels.is_empty() {
            return Err(DataError::EmptyLabels(id));
        }
        if labels.len() != before {
            return Err(DataError::DuplicateLabels(id));
        }
        Ok(Self {
            id,
            features,
            labels,
        })
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn has_label(&self, class: ClassId) -> bool {
        self.labels.binary_search(&class).is_ok()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// `class_names[c.0]` is the external name of class `c`.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Self {
        Self {
            samples,
            class_names,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_name(&self, class: ClassId) -> &str {
        &self.class_names[class.0 as usize]
    }

    /// Indices of the samples carrying each class.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut index = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            for c in s.labels() {
                index[c.0 as usize].push(i);
            }
        }
        index
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sample {0:?} has no labels")]
    EmptyLabels(String),
    #[error("sample {0:?} repeats a label")]
    DuplicateLabels(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: feature dimension {found}, expected {expected}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    id: std::borrow::Cow<'a, str>,
    features: std::borrow::Cow<'a, [f64]>,
    labels: Vec<std::borrow::Cow<'a, str>>,
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Dataset, DataError> {
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, ClassId> = HashMap::new();
    let mut samples = Vec::new();
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let found = record.features.len();
        match dim {
            None => dim = Some(found),
            Some(expected) if expected != found => {
                return Err(DataError::InconsistentDimension {
                    line: line_no,
                    expected,
                    found,
                })
            }
            _ => {}
        }
        if record.features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Malformed {
                line: line_no,
                message: "non-finite feature value".into(),
            });
        }
        let labels = record
            .labels
            .iter()
            .map(|name| {
                let next = ClassId(names.len() as u32);
                *lookup.entry(name.to_string()).or_insert_with(|| {
                    names.push(name.to_string());
                    next
                })
            })
            .collect();
        let sample = Sample::new(record.id.into_owned(), record.features.into_owned(), labels)
            .map_err(|e| DataError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        samples.push(sample);
    }
    Ok(Dataset::new(samples, names))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl(dataset: &Dataset, writer: impl Write) -> Result<(), DataError> {
    let mut out = BufWriter::new(writer);
    for s in &dataset.samples {
        let record = Record {
            id: s.id.as_str().into(),
            features: s.features.as_slice().into(),
            labels: s.labels().iter().map(|c| dataset.class_name(*c).into()).collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_jsonl(dataset, File::create(path)?)
}
