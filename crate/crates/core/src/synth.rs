//! Gaussian class clouds with a known typicality gradient.
//!
//! Radii are RMS Mahalanobis radii, `r = |L^-1 (x - mu)| / sqrt(D)` with
//! `L L' = Sigma`, so a typical draw sits near `r = 1` in any dimension.
//! Training and typical-test samples are Gaussian draws with `r` below the
//! shell; atypical-test samples keep their label but lie on the shell band
//! `[lower, upper]`. The oracle typicality of a sample is `exp(-r^2 / 2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats;

/// SplitMix64 finalizer over `base ^ salt`, for per-job RNG streams.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How atypical samples are displaced from their class mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtypicalMode {
    /// Uniform direction in whitened space.
    Radial,
    /// A typical draw pushed along a random direction of a per-class
    /// subspace of the given rank until it reaches the shell.
    LowRank { rank: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_typical_per_class: usize,
    pub test_atypical_per_class: usize,
    /// Explicit class means; when absent, class `c` sits at
    /// `separation * e_c` (random unit directions if `c >= dim`).
    pub class_means: Option<Vec<Vec<f64>>>,
    pub separation: f64,
    /// Isotropic standard deviation, used unless `covariances` is given.
    pub sigma: f64,
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
    /// Atypical band of RMS Mahalanobis radii.
    pub shell: [f64; 2],
    pub atypical_mode: AtypicalMode,
    pub seed: u64,
    /// Rejection attempts allowed per accepted sample.
    pub max_attempts: usize,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            num_classes: 6,
            dim: 32,
            train_per_class: 500,
            test_typical_per_class: 100,
            test_atypical_per_class: 100,
            class_means: None,
            separation: 3.0,
            sigma: 1.0,
            covariances: None,
            shell: [2.5, 4.0],
            atypical_mode: AtypicalMode::Radial,
            seed: 0,
            max_attempts: 1000,
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return Err(Error::Parameter("covariance must be square".into()));
        }
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return Err(Error::Parameter(
                        "covariance is not positive-definite".into(),
                    ));
                }
                l[i][j] = d.sqrt();
            } else {
                if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                    return Err(Error::Parameter("covariance is not symmetric".into()));
                }
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Class geometry after defaults are filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clouds {
    pub means: Vec<Vec<f64>>,
    /// Cholesky factor per class.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl Clouds {
    /// Whitened offset `L^-1 (x - mu)` by forward substitution.
    fn whiten(&self, class: usize, x: &[f64]) -> Vec<f64> {
        let l = &self.factors[class];
        let mu = &self.means[class];
        let n = mu.len();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
            z[i] = (x[i] - mu[i] - s) / l[i][i];
        }
        z
    }

    fn color(&self, class: usize, z: &[f64]) -> Vec<f64> {
        let l = &self.factors[class];
        self.means[class]
            .iter()
            .enumerate()
            .map(|(i, &m)| m + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
            .collect()
    }

    /// RMS Mahalanobis radius of `x` under class `class`.
    pub fn radius(&self, class: usize, x: &[f64]) -> f64 {
        let z = self.whiten(class, x);
        (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt()
    }
}

pub fn oracle_typicality(radius: f64) -> f64 {
    (-radius * radius / 2.0).exp()
}

impl CloudSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::Parameter(
                "num_classes and dim must be positive".into(),
            ));
        }
        if !(self.shell[0] < self.shell[1]) || !(self.shell[0] > 0.0) {
            return Err(Error::Parameter(format!(
                "shell band must satisfy 0 < lower < upper, got {:?}",
                self.shell
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Parameter("sigma must be positive".into()));
        }
        if let AtypicalMode::LowRank { rank } = self.atypical_mode {
            if rank == 0 || rank > self.dim {
                return Err(Error::Parameter(format!(
                    "rank must be in 1..={}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Clouds> {
        self.validate()?;
        let (c, d) = (self.num_classes, self.dim);
        let means = match &self.class_means {
            Some(m) => {
                if m.len() != c || m.iter().any(|v| v.len() != d) {
                    return Err(Error::Parameter(
                        "class_means must be num_classes x dim".into(),
                    ));
                }
                m.clone()
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0xC1A5));
                (0..c)
                    .map(|k| {
                        if k < d {
                            let mut v = vec![0.0; d];
                            v[k] = self.separation;
                            v
                        } else {
                            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                            g.into_iter().map(|x| self.separation * x / norm).collect()
                        }
                    })
                    .collect()
            }
        };
        let factors = match &self.covariances {
            Some(covs) => {
                if covs.len() != c || covs.iter().any(|m| m.len() != d) {
                    return Err(Error::Parameter(
                        "covariances must be num_classes x dim x dim".into(),
                    ));
                }
                covs.iter()
                    .map(|m| cholesky(m))
                    .collect::<Result<Vec<_>>>()?
            }
            None => {
                let mut l = vec![vec![0.0; d]; d];
                for (i, row) in l.iter_mut().enumerate() {
                    row[i] = self.sigma;
                }
                vec![l; c]
            }
        };
        Ok(Clouds { means, factors })
    }
}

/// The three generated splits. Sample ids are unique across all of them.
#[derive(Debug, Clone)]
pub struct Generated<T> {
    pub train: Dataset<T>,
    pub test_typical: Dataset<T>,
    pub test_atypical: Dataset<T>,
    pub clouds: Clouds,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn orthonormal_basis(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian(rng, d);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Whitened offsets for one class and split. Returns `(z, radius)` pairs.
fn draw_class(
    spec: &CloudSpec,
    split: SplitTag,
    class: usize,
    count: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let salt = match split {
        SplitTag::Train => 1,
        SplitTag::TestTypical => 2,
        SplitTag::TestAtypical => 3,
    };
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(spec.seed, salt), class as u64));
    let d = spec.dim;
    let sqrt_d = (d as f64).sqrt();
    let [lower, upper] = spec.shell;
    let basis = match (split, spec.atypical_mode) {
        (SplitTag::TestAtypical, AtypicalMode::LowRank { rank }) => {
            orthonormal_basis(&mut rng, d, rank)
        }
        _ => Vec::new(),
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let budget = spec.max_attempts.saturating_mul(count.max(1));
    while out.len() < count {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Generation(format!(
                "class {class}, split {split}: accepted {} of {count} samples after {budget} attempts",
                out.len()
            )));
        }
        let z = match split {
            SplitTag::Train | SplitTag::TestTypical => {
                let z = gaussian(&mut rng, d);
                if norm(&z) / sqrt_d >= lower {
                    continue;
                }
                z
            }
            SplitTag::TestAtypical => {
                let r = rng.random_range(lower..=upper);
                let target = r * sqrt_d;
                match spec.atypical_mode {
                    AtypicalMode::Radial => {
                        let g = gaussian(&mut rng, d);
                        let n = norm(&g);
                        if n == 0.0 {
                            continue;
                        }
                        g.into_iter().map(|x| x * target / n).collect()
                    }
                    AtypicalMode::LowRank { .. } => {
                        let z0 = gaussian(&mut rng, d);
                        let coef = gaussian(&mut rng, basis.len());
                        let mut v = vec![0.0; d];
                        for (c, b) in coef.iter().zip(&basis) {
                            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
                        }
                        let vn = norm(&v);
                        if vn == 0.0 {
                            continue;
                        }
                        v.iter_mut().for_each(|x| *x /= vn);
                        let zv: f64 = z0.iter().zip(&v).map(|(a, b)| a * b).sum();
                        let disc =
                            zv * zv - z0.iter().map(|x| x * x).sum::<f64>() + target * target;
                        if disc < 0.0 {
                            continue;
                        }
                        let a = -zv + disc.sqrt();
                        z0.iter().zip(&v).map(|(x, y)| x + a * y).collect()
                    }
                }
            }
        };
        let r = norm(&z) / sqrt_d;
        if split == SplitTag::TestAtypical && !(r >= lower && r <= upper) {
            continue;
        }
        out.push((z, r));
    }
    Ok(out)
}

fn build_split<T: Real>(
    spec: &CloudSpec,
    clouds: &Clouds,
    split: SplitTag,
    per_class: usize,
    first_id: u64,
) -> Result<Dataset<T>> {
    let per_class_draws = (0..spec.num_classes)
        .into_par_iter()
        .map(|c| draw_class(spec, split, c, per_class))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(per_class * spec.num_classes);
    let mut id = first_id;
    for (class, draws) in per_class_draws.into_iter().enumerate() {
        for (z, r) in draws {
            let x = clouds.color(class, &z);
            samples.push(Sample {
                sample_id: id,
                features: x.into_iter().map(T::lit).collect(),
                label: class,
                external_score: None,
                oracle_typicality: Some(T::lit(oracle_typicality(r))),
            });
            id += 1;
        }
    }
    Dataset::new(samples, spec.num_classes, split)
}

/// Draws all three splits. Deterministic per `spec.seed`; classes are drawn
/// from independent per-class streams.
pub fn generate<T: Real>(spec: &CloudSpec) -> Result<Generated<T>> {
    let clouds = spec.resolve()?;
    let n_train = (spec.train_per_class * spec.num_classes) as u64;
    let n_typ = (spec.test_typical_per_class * spec.num_classes) as u64;
    Ok(Generated {
        train: build_split(spec, &clouds, SplitTag::Train, spec.train_per_class, 0)?,
        test_typical: build_split(
            spec,
            &clouds,
            SplitTag::TestTypical,
            spec.test_typical_per_class,
            n_train,
        )?,
        test_atypical: build_split(
            spec,
            &clouds,
            SplitTag::TestAtypical,
            spec.test_atypical_per_class,
            n_train + n_typ,
        )?,
        clouds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    /// Spearman correlation, 0 when undefined.
    pub spearman: f64,
    /// Set when either side is constant and the correlation is undefined.
    pub degenerate: bool,
    pub n: usize,
}

/// Spearman correlation between scorer probabilities (aligned with `d`) and
/// the oracle typicality stored in `d`.
pub fn oracle_score_check<T: Real>(probabilities: &[T], d: &Dataset<T>) -> Result<RankCheck> {
    if probabilities.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            got: probabilities.len(),
        });
    }
    let oracle = d
        .samples()
        .iter()
        .map(|s| {
            s.oracle_typicality.map(|v| v.as_f64()).ok_or_else(|| {
                Error::Config(format!("sample {} has no oracle typicality", s.sample_id))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let probs: Vec<f64> = probabilities.iter().map(|p| p.as_f64()).collect();
    let rho = stats::spearman(&probs, &oracle);
    Ok(RankCheck {
        spearman: rho.unwrap_or(0.0),
        degenerate: rho.is_none(),
        n: d.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CloudSpec {
        CloudSpec {
            num_classes: 3,
            dim: 4,
            train_per_class: 30,
            test_typical_per_class: 10,
            test_atypical_per_class: 12,
            seed: 5,
            ..CloudSpec::default()
        }
    }

    #[test]
    fn oracle_values() {
        assert_eq!(oracle_typicality(0.0), 1.0);
        assert!((oracle_typicality(2.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((oracle_typicality(2.0) - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn splits_have_exact_balance_and_unique_ids() {
        let g = generate::<f64>(&small()).unwrap();
        assert_eq!(g.train.class_counts(), vec![30; 3]);
        assert_eq!(g.test_typical.class_counts(), vec![10; 3]);
        assert_eq!(g.test_atypical.class_counts(), vec![12; 3]);
        let mut ids: Vec<u64> = [&g.train, &g.test_typical, &g.test_atypical]
            .iter()
            .flat_map(|d| d.samples().iter().map(|s| s.sample_id))
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(g.test_atypical.split(), SplitTag::TestAtypical);
    }

    #[test]
    fn radii_respect_bands() {
        for mode in [AtypicalMode::Radial, AtypicalMode::LowRank { rank: 2 }] {
            let spec = CloudSpec {
                atypical_mode: mode,
                ..small()
            };
            let g = generate::<f64>(&spec).unwrap();
            for s in g.test_atypical.samples() {
                let r = g.clouds.radius(s.label, &s.features);
                assert!((2.5 - 1e-9..=4.0 + 1e-9).contains(&r), "{r}");
                let o = s.oracle_typicality.unwrap();
                assert!((o - oracle_typicality(r)).abs() < 1e-9);
            }
            for s in g.train.samples().iter().chain(g.test_typical.samples()) {
                assert!(g.clouds.radius(s.label, &s.features) < 2.5);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate::<f64>(&small()).unwrap();
        let b = generate::<f64>(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_atypical, b.test_atypical);
        let c = generate::<f64>(&CloudSpec { seed: 6, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn sample_at_mean_has_unit_typicality() {
        let g = generate::<f64>(&small()).unwrap();
        let mu = g.clouds.means[1].clone();
        assert_eq!(oracle_typicality(g.clouds.radius(1, &mu)), 1.0);
    }

    #[test]
    fn full_covariance() {
        let cov = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let spec = CloudSpec {
            num_classes: 1,
            dim: 2,
            train_per_class: 200,
            test_typical_per_class: 5,
            test_atypical_per_class: 5,
            covariances: Some(vec![cov.clone()]),
            ..CloudSpec::default()
        };
        let g = generate::<f64>(&spec).unwrap();
        let n = g.train.len() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|j| g.train.features().map(|x| x[j]).sum::<f64>() / n)
            .collect();
        let c00 = g
            .train
            .features()
            .map(|x| (x[0] - mean[0]).powi(2))
            .sum::<f64>()
            / n;
        assert!((c00 - 2.0).abs() < 0.5, "{c00}");
        for s in g.test_atypical.samples() {
            let r = g.clouds.radius(0, &s.features);
            assert!((2.5 - 1e-9..=4.0 + 1e-9).contains(&r));
        }
        let bad = CloudSpec {
            covariances: Some(vec![vec![vec![1.0, 2.0], vec![2.0, 1.0]]]),
            ..spec
        };
        assert!(generate::<f64>(&bad).is_err());
    }

    #[test]
    fn impossible_band_is_generation_error() {
        // typical draws in D=1 exceed r = 0.01 almost always
        let spec = CloudSpec {
            dim: 1,
            num_classes: 1,
            shell: [0.001, 0.002],
            max_attempts: 2,
            ..small()
        };
        assert!(matches!(generate::<f64>(&spec), Err(Error::Generation(_))));
        assert!(generate::<f64>(&CloudSpec {
            shell: [4.0, 2.5],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn rank_check_signs_and_degenerate() {
        let g = generate::<f64>(&small()).unwrap();
        let oracle: Vec<f64> = g
            .train
            .samples()
            .iter()
            .map(|s| s.oracle_typicality.unwrap())
            .collect();
        let anti: Vec<f64> = oracle.iter().map(|v| -v).collect();
        assert!((oracle_score_check(&oracle, &g.train).unwrap().spearman - 1.0).abs() < 1e-12);
        assert!(oracle_score_check(&anti, &g.train).unwrap().spearman <= -0.9);
        let flat = vec![0.5; g.train.len()];
        let c = oracle_score_check(&flat, &g.train).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.spearman, 0.0);
    }
}
