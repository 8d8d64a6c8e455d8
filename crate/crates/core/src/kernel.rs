use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Subsample size for the median-distance bandwidth heuristic.
pub const MEDIAN_HEURISTIC_SUBSAMPLE: usize = 256;

/// A positive-definite kernel. `Rbf` is `exp(-|x - y|^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec<T> {
    Linear,
    Rbf { bandwidth: T },
}

impl<T: Real> KernelSpec<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::Parameter(format!(
                "rbf bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Rbf { bandwidth })
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Rbf { bandwidth } => {
                let d2 = sq_dist(x, y);
                (-d2 / (T::lit(2.0) * bandwidth * bandwidth)).exp()
            }
        }
    }
}

/// Kernel selection as written in configuration; `bandwidth: None` asks for
/// the median heuristic at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    Rbf {
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Rbf { bandwidth: None }
    }
}

impl KernelChoice {
    pub fn resolve<T: Real>(&self, points: &[&[T]], seed: u64) -> Result<KernelSpec<T>> {
        match *self {
            KernelChoice::Linear => Ok(KernelSpec::Linear),
            KernelChoice::Rbf { bandwidth: Some(h) } => KernelSpec::rbf(T::lit(h)),
            KernelChoice::Rbf { bandwidth: None } => {
                KernelSpec::rbf(median_heuristic(points, MEDIAN_HEURISTIC_SUBSAMPLE, seed))
            }
        }
    }
}

pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

pub(crate) fn sq_dist<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// Median pairwise Euclidean distance over a seeded subsample of at most
/// `max_points` points. Falls back to 1 when the median is zero.
pub fn median_heuristic<T: Real>(points: &[&[T]], max_points: usize, seed: u64) -> T {
    let chosen: Vec<&[T]> = if points.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, points.len(), max_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut dists = Vec::with_capacity(chosen.len() * chosen.len().saturating_sub(1) / 2);
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            dists.push(sq_dist(chosen[i], chosen[j]).sqrt().as_f64());
        }
    }
    match crate::stats::median(&dists) {
        Some(m) if m > 0.0 => T::lit(m),
        _ => T::one(),
    }
}
