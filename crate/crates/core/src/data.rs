//! Samples, datasets, CSV ingestion and feature standardization.
//!
//! The canonical on-disk format is a headed CSV: an optional `sample_id`
//! column, feature columns `f0..f{D-1}`, a `label` column, and optional
//! `ext_score` (precomputed external typicality in `[0, 1]`) and `oracle_typ`
//! (synthetic ground-truth typicality) columns. Row order is significant.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SAMPLE_ID_COLUMN: &str = "sample_id";
pub const LABEL_COLUMN: &str = "label";
pub const SCORE_COLUMN: &str = "ext_score";
pub const ORACLE_COLUMN: &str = "oracle_typ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub sample_id: u64,
    pub features: Vec<T>,
    pub label: usize,
    /// Precomputed external score in `[0, 1]`, e.g. a memorability rating.
    pub external_score: Option<T>,
    /// Ground-truth typicality, only known for synthetic data.
    pub oracle_typicality: Option<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(sample_id: u64, features: Vec<T>, label: usize) -> Self {
        Sample {
            sample_id,
            features,
            label,
            external_score: None,
            oracle_typicality: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Train,
    TestTypical,
    TestAtypical,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::TestTypical => "test-typical",
            SplitTag::TestAtypical => "test-atypical",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test-typical" => Ok(SplitTag::TestTypical),
            "test-atypical" => Ok(SplitTag::TestAtypical),
            other => Err(Error::Parameter(format!("unknown split tag {other:?}"))),
        }
    }
}

/// An ordered collection of samples sharing one feature dimension.
///
/// Immutable after construction apart from explicit transforms that return a
/// new dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    num_classes: usize,
    split: SplitTag,
}

impl<T: Real> Dataset<T> {
    /// Validates fixed dimension, label range, score range and id uniqueness.
    pub fn new(samples: Vec<Sample<T>>, num_classes: usize, split: SplitTag) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::NoSamples);
        };
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::Schema("zero feature columns".into()));
        }
        let mut ids = HashSet::with_capacity(samples.len());
        for (row, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::Schema(format!(
                    "row {row}: {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::LabelRange {
                    row,
                    label: s.label,
                    num_classes,
                });
            }
            if let Some(v) = s.external_score {
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(Error::ScoreRange { value: v.as_f64() });
                }
            }
            if !ids.insert(s.sample_id) {
                return Err(Error::Schema(format!(
                    "duplicate sample_id {}",
                    s.sample_id
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn features(&self) -> impl Iterator<Item = &[T]> {
        self.samples.iter().map(|s| s.features.as_slice())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Samples of one class, in dataset order.
    pub fn class_subset(&self, class: usize) -> Vec<&Sample<T>> {
        self.samples.iter().filter(|s| s.label == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Returns a copy with every feature vector replaced by `f(features)`.
    pub fn map_features(&self, mut f: impl FnMut(&[T]) -> Vec<T>) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                features: f(&s.features),
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// Column options for [`load_dataset`].
#[derive(Debug, Clone, Default)]
pub struct Schema {
    /// Declared class count; inferred as `max(label) + 1` when absent.
    pub num_classes: Option<usize>,
    /// Name of the optional precomputed score column (default `ext_score`).
    pub score_column: Option<String>,
    pub split: Option<SplitTag>,
}

struct Columns {
    sample_id: Option<usize>,
    features: Vec<usize>,
    label: usize,
    score: Option<usize>,
    oracle: Option<usize>,
}

fn resolve_columns(header: &csv::StringRecord, score_name: &str) -> Result<Columns> {
    let mut sample_id = None;
    let mut label = None;
    let mut score = None;
    let mut oracle = None;
    let mut indexed = Vec::new();
    for (col, name) in header.iter().enumerate() {
        let name = name.trim();
        if name == SAMPLE_ID_COLUMN {
            sample_id = Some(col);
        } else if name == LABEL_COLUMN {
            label = Some(col);
        } else if name == score_name {
            score = Some(col);
        } else if name == ORACLE_COLUMN {
            oracle = Some(col);
        } else if let Some(idx) = name.strip_prefix('f').and_then(|r| r.parse::<usize>().ok()) {
            indexed.push((idx, col));
        } else {
            return Err(Error::Schema(format!("unexpected column {name:?}")));
        }
    }
    let label = label.ok_or_else(|| Error::Schema("missing label column".into()))?;
    indexed.sort_unstable();
    for (expect, &(idx, _)) in indexed.iter().enumerate() {
        if idx != expect {
            return Err(Error::Schema(format!(
                "feature columns must be f0..f{{D-1}}; found f{idx} at position {expect}"
            )));
        }
    }
    if indexed.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    Ok(Columns {
        sample_id,
        features: indexed.into_iter().map(|(_, col)| col).collect(),
        label,
        score,
        oracle,
    })
}

fn parse_real<T: Real>(row: usize, column: &str, field: &str) -> Result<T> {
    T::from_str_radix(field.trim(), 10).map_err(|_| Error::Parse {
        row,
        msg: format!("column {column}: cannot parse {field:?} as a number"),
    })
}

/// Reads a dataset from any CSV source. See the module docs for the format.
pub fn read_dataset<T: Real, R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let score_name = schema.score_column.as_deref().unwrap_or(SCORE_COLUMN);
    let cols = resolve_columns(&header, score_name)?;
    let width = header.len();

    let mut samples = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Schema(format!(
                "row {row}: {} fields, header has {width}",
                record.len()
            )));
        }
        let features = cols
            .features
            .iter()
            .enumerate()
            .map(|(i, &c)| parse_real(row, &format!("f{i}"), &record[c]))
            .collect::<Result<Vec<T>>>()?;
        let label = record[cols.label]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse {
                row,
                msg: format!("label {:?} is not a class index", &record[cols.label]),
            })?;
        let sample_id = match cols.sample_id {
            Some(c) => record[c].trim().parse::<u64>().map_err(|_| Error::Parse {
                row,
                msg: format!("sample_id {:?} is not an integer", &record[c]),
            })?,
            None => row as u64,
        };
        let optional = |c: Option<usize>, name: &str| -> Result<Option<T>> {
            match c {
                Some(c) if !record[c].trim().is_empty() => {
                    parse_real(row, name, &record[c]).map(Some)
                }
                _ => Ok(None),
            }
        };
        samples.push(Sample {
            sample_id,
            features,
            label,
            external_score: optional(cols.score, score_name)?,
            oracle_typicality: optional(cols.oracle, ORACLE_COLUMN)?,
        });
    }
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let num_classes = match schema.num_classes {
        Some(c) => c,
        None => samples.iter().map(|s| s.label).max().unwrap_or(0) + 1,
    };
    Dataset::new(
        samples,
        num_classes,
        schema.split.unwrap_or(SplitTag::Train),
    )
}

pub fn load_dataset<T: Real>(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

/// Writes the canonical CSV. Optional columns are emitted only if some
/// sample carries a value. Floats use the shortest round-trip representation.
pub fn write_dataset<T: Real, W: std::io::Write>(d: &Dataset<T>, writer: W) -> Result<()> {
    let with_score = d.samples.iter().any(|s| s.external_score.is_some());
    let with_oracle = d.samples.iter().any(|s| s.oracle_typicality.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![SAMPLE_ID_COLUMN.to_string()];
    header.extend((0..d.dim()).map(|i| format!("f{i}")));
    header.push(LABEL_COLUMN.into());
    if with_score {
        header.push(SCORE_COLUMN.into());
    }
    if with_oracle {
        header.push(ORACLE_COLUMN.into());
    }
    w.write_record(&header)?;
    let opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &d.samples {
        let mut rec = vec![s.sample_id.to_string()];
        rec.extend(s.features.iter().map(|x| x.to_string()));
        rec.push(s.label.to_string());
        if with_score {
            rec.push(opt(s.external_score));
        }
        if with_oracle {
            rec.push(opt(s.oracle_typicality));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_dataset<T: Real>(d: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(d, std::io::BufWriter::new(file))
}

/// Per-dimension affine standardization fitted on a training split.
///
/// Constant dimensions are passed through unchanged (mean 0, std 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    /// Population mean and standard deviation per dimension.
    pub fn fit(d: &Dataset<T>) -> Result<Self> {
        if d.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "standardization needs at least 2 samples, got {}",
                d.len()
            )));
        }
        let n = T::from_usize(d.len()).unwrap();
        let dim = d.dim();
        let mut mean = vec![T::zero(); dim];
        for x in d.features() {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); dim];
        for x in d.features() {
            for ((s, &v), &m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std: Vec<T> = var.into_iter().map(|s| (s / n).sqrt()).collect();
        for (m, s) in mean.iter_mut().zip(std.iter_mut()) {
            if !(*s > T::zero()) {
                *m = T::zero();
                *s = T::one();
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        if d.dim() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: d.dim(),
            });
        }
        Ok(d.map_features(|x| self.transform(x)))
    }
}

/// Standardizes `d` with its own statistics and returns the parameters so
/// that test splits can be transformed with the same (training) statistics.
pub fn standardize_features<T: Real>(d: &Dataset<T>) -> Result<(Dataset<T>, Standardizer<T>)> {
    let params = Standardizer::fit(d)?;
    let out = params.apply(d)?;
    Ok((out, params))
}
