//! From typicality score to per-sample loss weight.
//!
//! A [`WeightingSpec`] names one weighting function and its parameters. The
//! per-score rule lives in [`compute_weight`]; [`build_weight_table`] picks
//! the score column each variant reads (external general or class-specific
//! probabilities, the precomputed dataset column, internal scores or seeded
//! random draws), applies the rule to every training sample and, by default,
//! rescales the table to mean 1.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::internal::{entropy_term, InternalScoreTable};
use crate::scalar::Real;

/// Floor applied inside logarithms.
pub const LOG_EPS: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.05;
pub const DEFAULT_DEGREE: u32 = 4;
pub const DEFAULT_GAMMA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    Uniform,
    Random,
    Typicality,
    Atypicality,
    ClsTypicality,
    ClsAtypicality,
    LogTyp,
    LogClsAtyp,
    ExpTyp,
    GammaTyp,
    Polynomial,
    ExternalPrecomputed,
    InternalProb,
    InternalEntropy,
    HybridAtypThenInternal,
}

impl WeightVariant {
    pub const ALL: [WeightVariant; 15] = [
        WeightVariant::Uniform,
        WeightVariant::Random,
        WeightVariant::Typicality,
        WeightVariant::Atypicality,
        WeightVariant::ClsTypicality,
        WeightVariant::ClsAtypicality,
        WeightVariant::LogTyp,
        WeightVariant::LogClsAtyp,
        WeightVariant::ExpTyp,
        WeightVariant::GammaTyp,
        WeightVariant::Polynomial,
        WeightVariant::ExternalPrecomputed,
        WeightVariant::InternalProb,
        WeightVariant::InternalEntropy,
        WeightVariant::HybridAtypThenInternal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightVariant::Uniform => "uniform",
            WeightVariant::Random => "random",
            WeightVariant::Typicality => "typicality",
            WeightVariant::Atypicality => "atypicality",
            WeightVariant::ClsTypicality => "cls_typicality",
            WeightVariant::ClsAtypicality => "cls_atypicality",
            WeightVariant::LogTyp => "log_typ",
            WeightVariant::LogClsAtyp => "log_cls_atyp",
            WeightVariant::ExpTyp => "exp_typ",
            WeightVariant::GammaTyp => "gamma_typ",
            WeightVariant::Polynomial => "polynomial",
            WeightVariant::ExternalPrecomputed => "external_precomputed",
            WeightVariant::InternalProb => "internal_prob",
            WeightVariant::InternalEntropy => "internal_entropy",
            WeightVariant::HybridAtypThenInternal => "hybrid_atyp_then_internal",
        }
    }

    /// The variant in force during `epoch` (1-based). Only the hybrid
    /// schedule changes: external atypicality in epoch 1, internal
    /// probability afterwards.
    pub fn at_epoch(self, epoch: usize) -> WeightVariant {
        match self {
            WeightVariant::HybridAtypThenInternal if epoch <= 1 => WeightVariant::Atypicality,
            WeightVariant::HybridAtypThenInternal => WeightVariant::InternalProb,
            v => v,
        }
    }

    /// Whether the table for `epoch` differs from the one of `epoch - 1`.
    pub fn refreshes_at(self, epoch: usize) -> bool {
        match self {
            WeightVariant::InternalProb | WeightVariant::InternalEntropy => true,
            WeightVariant::HybridAtypThenInternal => epoch >= 2,
            _ => epoch <= 1,
        }
    }

    pub fn needs_general_scores(self) -> bool {
        matches!(
            self,
            WeightVariant::Typicality
                | WeightVariant::Atypicality
                | WeightVariant::LogTyp
                | WeightVariant::ExpTyp
                | WeightVariant::GammaTyp
                | WeightVariant::Polynomial
                | WeightVariant::HybridAtypThenInternal
        )
    }

    pub fn needs_class_scores(self) -> bool {
        matches!(
            self,
            WeightVariant::ClsTypicality
                | WeightVariant::ClsAtypicality
                | WeightVariant::LogClsAtyp
        )
    }

    pub fn needs_internal_scores(self) -> bool {
        matches!(
            self,
            WeightVariant::InternalProb
                | WeightVariant::InternalEntropy
                | WeightVariant::HybridAtypThenInternal
        )
    }
}

impl std::fmt::Display for WeightVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WeightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown weighting variant {s:?}")))
    }
}

/// How the entropy signal maps to a weight: `Up` makes uncertain samples
/// count more (`tau = -Z ln Z`), `Down` makes them count less
/// (`tau = 1/e + Z ln Z`, using `1/e` as the maximum of `-Z ln Z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyDirection {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingSpec {
    pub variant: WeightVariant,
    pub alpha: f64,
    pub beta: f64,
    /// Polynomial degree; even and at least 2.
    pub degree: u32,
    pub gamma: f64,
    pub seed: u64,
    /// Rescale each table to mean 1.
    pub normalize: bool,
    pub entropy_direction: EntropyDirection,
}

impl Default for WeightingSpec {
    fn default() -> Self {
        WeightingSpec {
            variant: WeightVariant::Uniform,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            degree: DEFAULT_DEGREE,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            normalize: true,
            entropy_direction: EntropyDirection::Up,
        }
    }
}

impl WeightingSpec {
    pub fn new(variant: WeightVariant) -> Self {
        WeightingSpec {
            variant,
            ..WeightingSpec::default()
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        WeightingSpec {
            variant: WeightVariant::Polynomial,
            degree,
            ..WeightingSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == WeightVariant::Polynomial {
            check_degree(self.degree)?;
            if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
                return Err(Error::Parameter(format!(
                    "polynomial needs alpha >= 0 and beta >= 0, got {} and {}",
                    self.alpha, self.beta
                )));
            }
        }
        if self.variant == WeightVariant::GammaTyp && !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Short human label, e.g. `polynomial_d4`.
    pub fn label(&self) -> String {
        match self.variant {
            WeightVariant::Polynomial => format!("polynomial_d{}", self.degree),
            WeightVariant::GammaTyp => format!("gamma_typ_{}", self.gamma),
            v => v.as_str().to_string(),
        }
    }
}

fn check_degree(d: u32) -> Result<()> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "polynomial degree must be even and >= 2, got {d}"
        )));
    }
    Ok(())
}

fn check_unit<T: Real>(v: T) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::ScoreRange { value: v.as_f64() })
    }
}

/// `alpha * (score - mu)^d + beta` for even `d`; minimum `beta` at `mu`.
pub fn polynomial_weight<T: Real>(score: T, mu: T, alpha: T, beta: T, degree: u32) -> Result<T> {
    check_degree(degree)?;
    if !(alpha >= T::zero()) || !(beta >= T::zero()) {
        return Err(Error::Parameter("alpha and beta must be >= 0".into()));
    }
    let dev = (score - mu).abs();
    Ok(alpha * dev.powi(degree as i32) + beta)
}

fn neg_log_floor<T: Real>(v: T) -> T {
    T::zero() - v.max(T::lit(LOG_EPS)).ln()
}

/// Weight for one score under `spec`. For `random` the score is the uniform
/// draw, for the internal variants the internal probability, and for
/// `external_precomputed` the stored column value. The hybrid schedule is
/// epoch dependent and must be resolved with [`WeightVariant::at_epoch`].
pub fn compute_weight<T: Real>(spec: &WeightingSpec, score: T, mu: T) -> Result<T> {
    check_unit(score)?;
    let w = match spec.variant {
        WeightVariant::Uniform => T::one(),
        WeightVariant::Random
        | WeightVariant::Typicality
        | WeightVariant::ClsTypicality
        | WeightVariant::ExternalPrecomputed
        | WeightVariant::InternalProb => score,
        WeightVariant::Atypicality | WeightVariant::ClsAtypicality => T::one() - score,
        WeightVariant::LogTyp => neg_log_floor(score),
        WeightVariant::LogClsAtyp => neg_log_floor(T::one() - score),
        WeightVariant::ExpTyp => score.exp(),
        WeightVariant::GammaTyp => {
            if !(spec.gamma > 0.0) {
                return Err(Error::Parameter(format!(
                    "gamma must be > 0, got {}",
                    spec.gamma
                )));
            }
            T::lit(spec.gamma).powf(score)
        }
        WeightVariant::Polynomial => {
            check_unit(mu)?;
            polynomial_weight(
                score,
                mu,
                T::lit(spec.alpha),
                T::lit(spec.beta),
                spec.degree,
            )?
        }
        WeightVariant::InternalEntropy => match spec.entropy_direction {
            EntropyDirection::Up => entropy_term(score),
            EntropyDirection::Down => {
                (T::lit((-1.0f64).exp()) - entropy_term(score)).max(T::zero())
            }
        },
        WeightVariant::HybridAtypThenInternal => {
            return Err(Error::Config(
                "hybrid weighting depends on the epoch; resolve it with at_epoch first".into(),
            ))
        }
    };
    Ok(w)
}

/// Score columns available to [`build_weight_table`], each aligned with the
/// training set's sample order.
#[derive(Debug, Clone, Copy)]
pub struct ScoreSources<'a, T> {
    /// Calibrated general (class-independent) typicality probabilities.
    pub general: Option<&'a [T]>,
    /// Calibrated class-specific typicality probabilities.
    pub class_specific: Option<&'a [T]>,
    /// Internal scores snapshotted at the boundary before the epoch.
    pub internal: Option<&'a InternalScoreTable<T>>,
}

impl<T> Default for ScoreSources<'_, T> {
    fn default() -> Self {
        ScoreSources {
            general: None,
            class_specific: None,
            internal: None,
        }
    }
}

/// Per-sample weights, aligned with the training set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable<T> {
    pub first_epoch: usize,
    /// Last epoch the table is valid for; `None` when it never changes.
    pub last_epoch: Option<usize>,
    pub sample_ids: Vec<u64>,
    pub weights: Vec<T>,
}

impl<T: Real> WeightTable<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> T {
        self.weights.iter().copied().sum::<T>() / T::from_usize(self.weights.len().max(1)).unwrap()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_id", "weight"])?;
        for (id, v) in self.sample_ids.iter().zip(&self.weights) {
            w.write_record([id.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn aligned<'a, T>(col: Option<&'a [T]>, n: usize, what: &str) -> Result<&'a [T]> {
    let col = col.ok_or_else(|| Error::Config(format!("weighting needs {what} scores")))?;
    if col.len() != n {
        return Err(Error::Config(format!(
            "{what} scores cover {} samples, training set has {n}",
            col.len()
        )));
    }
    Ok(col)
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_usize(xs.len()).unwrap()
}

/// Builds the weight table used during `epoch` (1-based).
///
/// `mu` for the polynomial is the mean of the general typicality column over
/// the training set.
pub fn build_weight_table<T: Real>(
    spec: &WeightingSpec,
    sources: &ScoreSources<'_, T>,
    train: &Dataset<T>,
    epoch: usize,
) -> Result<WeightTable<T>> {
    spec.validate()?;
    if epoch == 0 {
        return Err(Error::Parameter("epochs are numbered from 1".into()));
    }
    let n = train.len();
    let variant = spec.variant.at_epoch(epoch);
    let effective = WeightingSpec {
        variant,
        ..spec.clone()
    };

    let scores: Vec<T> = match variant {
        WeightVariant::Uniform => vec![T::one(); n],
        WeightVariant::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..n).map(|_| T::lit(rng.random::<f64>())).collect()
        }
        WeightVariant::Typicality
        | WeightVariant::Atypicality
        | WeightVariant::LogTyp
        | WeightVariant::ExpTyp
        | WeightVariant::GammaTyp
        | WeightVariant::Polynomial => aligned(sources.general, n, "general external")?.to_vec(),
        WeightVariant::ClsTypicality
        | WeightVariant::ClsAtypicality
        | WeightVariant::LogClsAtyp => {
            aligned(sources.class_specific, n, "class-specific external")?.to_vec()
        }
        WeightVariant::ExternalPrecomputed => train
            .samples()
            .iter()
            .map(|s| {
                s.external_score.ok_or_else(|| {
                    Error::Config(format!("sample {} has no precomputed score", s.sample_id))
                })
            })
            .collect::<Result<_>>()?,
        WeightVariant::InternalProb | WeightVariant::InternalEntropy => {
            let table = sources
                .internal
                .ok_or_else(|| Error::Config("weighting needs internal scores".into()))?;
            aligned(Some(&table.probability[..]), n, "internal")?.to_vec()
        }
        WeightVariant::HybridAtypThenInternal => unreachable!("resolved by at_epoch"),
    };
    let mu = if variant == WeightVariant::Polynomial {
        mean(&scores)
    } else {
        T::zero()
    };
    let mut weights = scores
        .into_iter()
        .map(|s| compute_weight(&effective, s, mu))
        .collect::<Result<Vec<T>>>()?;

    if spec.normalize {
        let m = mean(&weights);
        if m > T::zero() && m.is_finite() {
            weights.iter_mut().for_each(|w| *w = *w / m);
        }
    }
    if let Some(bad) = weights
        .iter()
        .find(|w| !(w.is_finite() && **w >= T::zero()))
    {
        return Err(Error::Config(format!(
            "weight {bad} is not finite and nonnegative"
        )));
    }
    let last_epoch = if variant.refreshes_at(epoch + 1) || spec.variant.refreshes_at(epoch + 1) {
        Some(epoch)
    } else {
        None
    };
    Ok(WeightTable {
        first_epoch: epoch,
        last_epoch,
        sample_ids: train.samples().iter().map(|s| s.sample_id).collect(),
        weights,
    })
}
