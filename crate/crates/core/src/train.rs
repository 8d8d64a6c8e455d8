//! Minibatch SGD on a weighted loss, with epoch-boundary weight refresh.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::internal::snapshot_scores;
use crate::loss::{weighted_loss, LossKind};
use crate::mlp::{Gradients, MlpModel};
use crate::scalar::{argmax, Real};
use crate::weighting::{build_weight_table, ScoreSources, WeightTable, WeightingSpec};

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Learning rate for the summed batch loss: `1e-2 / sqrt(batch_size)`.
pub fn default_learning_rate(batch_size: usize) -> f64 {
    1e-2 / (batch_size as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Step size applied to the summed (not averaged) batch gradient.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub weighting: WeightingSpec,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(DEFAULT_BATCH_SIZE),
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 10,
            loss_kind: LossKind::MsHinge,
            weighting: WeightingSpec::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter(
                "batch_size and epochs must be positive".into(),
            ));
        }
        self.weighting.validate()
    }
}

/// Calibrated external typicality probabilities for the training set, in
/// training order. Fixed for the whole run.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores<T> {
    pub general: Option<Vec<T>>,
    pub class_specific: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of samples classified correctly.
    pub overall: f64,
    /// Unweighted mean of the per-class accuracies of classes present.
    pub macro_accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
}

/// Argmax prediction (ties to the lowest index) against the labels.
pub fn evaluate<T: Real>(model: &MlpModel<T>, d: &Dataset<T>) -> Result<Evaluation> {
    if d.is_empty() {
        return Err(Error::EmptySplit(d.split().to_string()));
    }
    if model.num_classes() != d.num_classes() {
        return Err(Error::Dimension {
            expected: d.num_classes(),
            got: model.num_classes(),
        });
    }
    let c = d.num_classes();
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    for s in d.samples() {
        let pred = argmax(&model.forward(&s.features)?);
        totals[s.label] += 1;
        if pred == s.label {
            hits[s.label] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(Evaluation {
        overall: hits.iter().sum::<usize>() as f64 / d.len() as f64,
        macro_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    #[serde(flatten)]
    pub eval: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Summed weighted loss over the epoch's minibatches.
    pub train_loss: f64,
    pub train: Evaluation,
    pub evals: Vec<SplitMetrics>,
}

/// Writes one JSON object per epoch.
pub fn write_metrics_jsonl<W: Write>(metrics: &[EpochMetrics], mut w: W) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io("<metrics>", e))?;
    }
    Ok(())
}

/// State exposed at each epoch boundary, before the epoch's first step.
pub struct EpochStart<'a, T> {
    pub epoch: usize,
    pub model: &'a MlpModel<T>,
    pub weights: &'a WeightTable<T>,
}

/// Trains `model` in place and returns per-epoch metrics.
///
/// Weight tables are rebuilt only at epoch boundaries; internal scores are
/// snapshotted from the model as it stands at that boundary. `on_epoch` is
/// called once per epoch with the table about to be used.
pub fn train<T: Real>(
    model: &mut MlpModel<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    external: &ExternalScores<T>,
    evals: &[(&str, &Dataset<T>)],
    mut on_epoch: Option<&mut dyn FnMut(EpochStart<'_, T>)>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if model.input_dim() != data.dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if model.num_classes() != data.num_classes() {
        return Err(Error::Dimension {
            expected: data.num_classes(),
            got: model.num_classes(),
        });
    }
    let lr = T::lit(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(model);
    let mut table: Option<WeightTable<T>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if table.is_none() || cfg.weighting.variant.refreshes_at(epoch) {
            let internal = if cfg
                .weighting
                .variant
                .at_epoch(epoch)
                .needs_internal_scores()
            {
                Some(snapshot_scores(model, data, epoch)?)
            } else {
                None
            };
            let sources = ScoreSources {
                general: external.general.as_deref(),
                class_specific: external.class_specific.as_deref(),
                internal: internal.as_ref(),
            };
            table = Some(build_weight_table(&cfg.weighting, &sources, data, epoch)?);
        }
        let weights = table.as_ref().expect("table built");
        if let Some(cb) = on_epoch.as_mut() {
            cb(EpochStart {
                epoch,
                model,
                weights,
            });
        }

        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = T::zero();
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.clear();
            let mut batch_loss = T::zero();
            for &i in chunk {
                let s = &data.samples()[i];
                let trace = model.forward_trace(&s.features)?;
                let lg = weighted_loss(cfg.loss_kind, trace.logits(), s.label, weights.weights[i])?;
                batch_loss += lg.loss;
                model.backward(&trace, &lg.grad, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            model.sgd_step(&grads, lr);
            epoch_loss += batch_loss;
        }

        let train_eval = evaluate(model, data)?;
        let evals = evals
            .iter()
            .map(|(name, d)| {
                evaluate(model, d).map(|eval| SplitMetrics {
                    split: name.to_string(),
                    eval,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss.as_f64(),
            train: train_eval,
            evals,
        });
    }
    Ok(history)
}
