//! Typicality read off the classifier itself.
//!
//! The internal probability of a sample is the softmax of the last-layer
//! outputs at its true label; the entropy signal is the single-class term
//! `-Z log Z` of that probability.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::mlp::MlpModel;
use crate::scalar::Real;

fn label_check<T: Real>(logits: &[T], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::LabelRange {
            row: 0,
            label,
            num_classes: logits.len(),
        });
    }
    Ok(())
}

pub fn probability_from_logits<T: Real>(logits: &[T], label: usize) -> Result<T> {
    label_check(logits, label)?;
    Ok(softmax(logits)[label])
}

/// `-z ln z`, with the `z -> 0` limit taken as 0.
pub fn entropy_term<T: Real>(z: T) -> T {
    if z <= T::zero() {
        T::zero()
    } else {
        let h = -z * z.ln();
        if h > T::zero() {
            h
        } else {
            T::zero()
        }
    }
}

pub fn internal_probability<T: Real>(model: &MlpModel<T>, x: &[T], label: usize) -> Result<T> {
    probability_from_logits(&model.forward(x)?, label)
}

pub fn internal_entropy<T: Real>(model: &MlpModel<T>, x: &[T], label: usize) -> Result<T> {
    internal_probability(model, x, label).map(entropy_term)
}

/// Internal scores for every training sample, taken from a model frozen at an
/// epoch boundary. `epoch` is the (1-based) epoch whose weights it drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalScoreTable<T> {
    pub epoch: usize,
    pub sample_ids: Vec<u64>,
    pub probability: Vec<T>,
    pub entropy: Vec<T>,
}

impl<T: Real> InternalScoreTable<T> {
    pub fn len(&self) -> usize {
        self.probability.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probability.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "sample_id", "probability", "entropy"])?;
        for ((id, p), h) in self
            .sample_ids
            .iter()
            .zip(&self.probability)
            .zip(&self.entropy)
        {
            w.write_record([
                self.epoch.to_string(),
                id.to_string(),
                p.to_string(),
                h.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn snapshot_scores<T: Real>(
    model: &MlpModel<T>,
    train: &Dataset<T>,
    epoch: usize,
) -> Result<InternalScoreTable<T>> {
    if epoch == 0 {
        return Err(Error::Parameter("epochs are numbered from 1".into()));
    }
    if model.num_classes() != train.num_classes() {
        return Err(Error::Dimension {
            expected: train.num_classes(),
            got: model.num_classes(),
        });
    }
    let probability = train
        .samples()
        .par_iter()
        .map(|s| internal_probability(model, &s.features, s.label))
        .collect::<Result<Vec<T>>>()?;
    let entropy = probability.iter().map(|&z| entropy_term(z)).collect();
    Ok(InternalScoreTable {
        epoch,
        sample_ids: train.samples().iter().map(|s| s.sample_id).collect(),
        probability,
        entropy,
    })
}
