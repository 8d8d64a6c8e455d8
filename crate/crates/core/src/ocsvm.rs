//! One-class SVM scorer for external typicality.
//!
//! The dual is solved in the normalized form
//!
//! ```text
//! minimize   1/2 a' K a
//! subject to sum(a) = 1,  0 <= a_i <= 1 / (nu N)
//! ```
//!
//! with pairwise (SMO) coordinate descent and second-order working-set
//! selection. The decision function is `sum_i a_i K(sv_i, x) - rho`, larger
//! for points inside the estimated support. A logistic calibration centred
//! on the median training score turns decisions into probabilities of
//! typicality.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::kernel::{KernelChoice, KernelSpec};
use crate::scalar::Real;
use crate::stats;

pub const DEFAULT_NU: f64 = 0.1;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmParams {
    pub nu: f64,
    pub kernel: KernelChoice,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        OcsvmParams {
            nu: DEFAULT_NU,
            kernel: KernelChoice::default(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl OcsvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Parameter(format!(
                "nu must lie in (0, 1], got {}",
                self.nu
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Parameter("tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of the one-class dual on a precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    pub rho: T,
    /// `1/2 a' K a` at the solution.
    pub objective: T,
    pub iterations: usize,
    pub max_violation: T,
}

/// Solves the normalized one-class dual for a row-major `n x n` Gram matrix.
pub fn solve_dual<T: Real>(
    gram: &[T],
    n: usize,
    nu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DualSolution<T>> {
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "one-class SVM needs at least 2 samples, got {n}"
        )));
    }
    if gram.len() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: gram.len(),
        });
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Parameter(format!("nu must lie in (0, 1], got {nu}")));
    }
    let k = |i: usize, j: usize| gram[i * n + j];
    let ub = T::lit(1.0 / (nu * n as f64));
    let tol = T::lit(tol);
    let tau = T::lit(1e-12);

    // feasible start: fill coordinates up to the box in index order
    let mut alpha = vec![T::zero(); n];
    let mut remaining = T::one();
    for a in alpha.iter_mut() {
        if !(remaining > T::zero()) {
            break;
        }
        let v = if ub < remaining { ub } else { remaining };
        *a = v;
        remaining -= v;
    }
    let mut grad = vec![T::zero(); n];
    for (i, g) in grad.iter_mut().enumerate() {
        *g = (0..n)
            .filter(|&j| alpha[j] > T::zero())
            .map(|j| k(i, j) * alpha[j])
            .sum();
    }

    let mut iterations = 0;
    let mut max_violation;
    loop {
        // i: steepest increase candidate (alpha below the box), j: decrease
        let mut i_sel = None;
        let mut g_min = T::infinity();
        for t in 0..n {
            if alpha[t] < ub && grad[t] < g_min {
                g_min = grad[t];
                i_sel = Some(t);
            }
        }
        let mut g_max = T::neg_infinity();
        for t in 0..n {
            if alpha[t] > T::zero() && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        max_violation = g_max - g_min;
        let Some(i) = i_sel else { break };
        if max_violation < tol || iterations >= max_iter {
            break;
        }
        // second-order choice of j among violators
        let mut j_sel = None;
        let mut best = T::neg_infinity();
        for t in 0..n {
            if alpha[t] > T::zero() && grad[t] > g_min {
                let diff = grad[t] - g_min;
                let mut eta = k(i, i) + k(t, t) - T::lit(2.0) * k(i, t);
                if eta <= T::zero() {
                    eta = tau;
                }
                let gain = diff * diff / eta;
                if gain > best {
                    best = gain;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break };
        let mut eta = k(i, i) + k(j, j) - T::lit(2.0) * k(i, j);
        if eta <= T::zero() {
            eta = tau;
        }
        let room_i = ub - alpha[i];
        let room_j = alpha[j];
        let delta = ((grad[j] - grad[i]) / eta).min(room_i).min(room_j);
        if delta == room_i {
            alpha[i] = ub;
        } else {
            alpha[i] = (alpha[i] + delta).min(ub);
        }
        if delta == room_j {
            alpha[j] = T::zero();
        } else {
            alpha[j] -= delta;
        }
        if delta <= T::zero() {
            iterations += 1;
            break;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += delta * (k(t, i) - k(t, j));
        }
        iterations += 1;
    }

    // rho: mean gradient over free coordinates, else midpoint of the bounds
    let mut free_sum = T::zero();
    let mut free_count = 0usize;
    let mut upper = T::infinity(); // min grad over a_i = 0
    let mut lower = T::neg_infinity(); // max grad over a_i = ub
    for t in 0..n {
        if alpha[t] > T::zero() && alpha[t] < ub {
            free_sum += grad[t];
            free_count += 1;
        } else if alpha[t] <= T::zero() {
            upper = upper.min(grad[t]);
        } else {
            lower = lower.max(grad[t]);
        }
    }
    let rho = if free_count > 0 {
        free_sum / T::from_usize(free_count).unwrap()
    } else if upper.is_finite() && lower.is_finite() {
        (upper + lower) / T::lit(2.0)
    } else if upper.is_finite() {
        upper
    } else {
        lower
    };
    let objective = T::lit(0.5) * alpha.iter().zip(&grad).map(|(&a, &g)| a * g).sum::<T>();
    Ok(DualSolution {
        alpha,
        rho,
        objective,
        iterations,
        max_violation,
    })
}

/// Monotone map from decision score to probability of typicality:
/// `p = 1 / (1 + exp(-(s - median) / scale))`, `scale` the interquartile
/// range of training scores (1 if that is zero). A flat calibration maps
/// everything to 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration<T> {
    pub median: T,
    pub scale: T,
    pub flat: bool,
}

impl<T: Real> Calibration<T> {
    pub fn fit(scores: &[T]) -> Result<Self> {
        let xs: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
        if xs.len() < 2 || !xs.iter().any(|&v| v != xs[0]) {
            return Err(Error::FlatCalibration);
        }
        let (q1, median, q3) = stats::quartiles(&xs).expect("non-empty");
        let iqr = q3 - q1;
        let scale = if iqr > 0.0 { iqr } else { 1.0 };
        Ok(Calibration {
            median: T::lit(median),
            scale: T::lit(scale),
            flat: false,
        })
    }

    pub fn flat() -> Self {
        Calibration {
            median: T::zero(),
            scale: T::one(),
            flat: true,
        }
    }

    pub fn apply(&self, score: T) -> T {
        if self.flat {
            return T::lit(0.5);
        }
        let u = (score - self.median) / self.scale;
        T::one() / (T::one() + (-u).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypicalityScore<T> {
    pub raw_decision: T,
    pub probability: T,
}

impl<T: Real> TypicalityScore<T> {
    pub fn atypicality(&self) -> T {
        T::one() - self.probability
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassSvmModel<T> {
    pub kernel: KernelSpec<T>,
    pub nu: T,
    /// Size of the training set the box constraint refers to.
    pub n_train: usize,
    pub support_vectors: Vec<Vec<T>>,
    pub alphas: Vec<T>,
    pub rho: T,
    pub calibration: Calibration<T>,
    pub iterations: usize,
    pub objective: T,
}

impl<T: Real> OneClassSvmModel<T> {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, |v| v.len())
    }

    /// `sum_i a_i K(sv_i, x) - rho`.
    pub fn decision_score(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let s: T = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, &a)| a * self.kernel.eval(sv, x))
            .sum();
        Ok(s - self.rho)
    }

    pub fn score(&self, x: &[T]) -> Result<TypicalityScore<T>> {
        let raw_decision = self.decision_score(x)?;
        Ok(TypicalityScore {
            raw_decision,
            probability: self.calibration.apply(raw_decision),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn gram_matrix<T: Real>(kernel: &KernelSpec<T>, points: &[&[T]]) -> Vec<T> {
    let n = points.len();
    let mut gram = vec![T::zero(); n * n];
    gram.par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = kernel.eval(points[i], points[j]);
            }
        });
    gram
}

/// Fits a one-class SVM on raw feature vectors. `seed` drives only the
/// bandwidth-heuristic subsample; the solver itself is deterministic.
pub fn fit_points<T: Real>(
    points: &[&[T]],
    params: &OcsvmParams,
    seed: u64,
) -> Result<OneClassSvmModel<T>> {
    params.validate()?;
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "one-class SVM needs at least 2 samples, got {n}"
        )));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let kernel = params.kernel.resolve(points, seed)?;
    let gram = gram_matrix(&kernel, points);
    let sol = solve_dual(&gram, n, params.nu, params.tol, params.max_iter)?;
    drop(gram);

    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for (p, &a) in points.iter().zip(&sol.alpha) {
        if a > T::zero() {
            support_vectors.push(p.to_vec());
            alphas.push(a);
        }
    }
    let mut model = OneClassSvmModel {
        kernel,
        nu: T::lit(params.nu),
        n_train: n,
        support_vectors,
        alphas,
        rho: sol.rho,
        calibration: Calibration::flat(),
        iterations: sol.iterations,
        objective: sol.objective,
    };
    let train_scores = points
        .par_iter()
        .map(|p| model.decision_score(p))
        .collect::<Result<Vec<T>>>()?;
    model.calibration = match Calibration::fit(&train_scores) {
        Ok(c) => c,
        Err(Error::FlatCalibration) => Calibration::flat(),
        Err(e) => return Err(e),
    };
    Ok(model)
}

/// Class-independent scorer over every sample of `train`.
pub fn fit_ocsvm<T: Real>(
    train: &Dataset<T>,
    params: &OcsvmParams,
    seed: u64,
) -> Result<OneClassSvmModel<T>> {
    let points: Vec<&[T]> = train.features().collect();
    fit_points(&points, params, seed)
}

/// One scorer per class, each trained on that class only. Index = label.
pub fn fit_class_specific<T: Real>(
    train: &Dataset<T>,
    params: &OcsvmParams,
    seed: u64,
) -> Result<Vec<OneClassSvmModel<T>>> {
    params.validate()?;
    let counts = train.class_counts();
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::ClassInsufficient { class, count });
    }
    (0..train.num_classes())
        .into_par_iter()
        .map(|c| {
            let points: Vec<&[T]> = train
                .class_subset(c)
                .into_iter()
                .map(|s| s.features.as_slice())
                .collect();
            fit_points(&points, params, seed.wrapping_add(c as u64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    General,
    ClassSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow<T> {
    pub sample_id: u64,
    pub raw_decision: T,
    pub probability: T,
}

/// Per-sample external scores, in dataset order. Computed once and never
/// modified during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable<T> {
    pub rows: Vec<ScoreRow<T>>,
}

impl<T: Real> ScoreTable<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.probability).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_id", "raw_decision", "probability"])?;
        for r in &self.rows {
            w.write_record([
                r.sample_id.to_string(),
                r.raw_decision.to_string(),
                r.probability.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse {
                    row,
                    msg: "expected 3 fields".into(),
                })
            };
            let num = |i: usize| -> Result<T> {
                T::from_str_radix(field(i)?.trim(), 10).map_err(|_| Error::Parse {
                    row,
                    msg: format!("field {i} is not a number"),
                })
            };
            rows.push(ScoreRow {
                sample_id: field(0)?.trim().parse().map_err(|_| Error::Parse {
                    row,
                    msg: "sample_id is not an integer".into(),
                })?,
                raw_decision: num(1)?,
                probability: num(2)?,
            });
        }
        Ok(ScoreTable { rows })
    }
}

fn score_sample<T: Real>(
    models: &[OneClassSvmModel<T>],
    s: &Sample<T>,
    mode: ScoreMode,
) -> Result<ScoreRow<T>> {
    let model = match mode {
        ScoreMode::General => models.first().ok_or(Error::MissingClassModel(0))?,
        ScoreMode::ClassSpecific => models
            .get(s.label)
            .ok_or(Error::MissingClassModel(s.label))?,
    };
    let sc = model.score(&s.features)?;
    Ok(ScoreRow {
        sample_id: s.sample_id,
        raw_decision: sc.raw_decision,
        probability: sc.probability,
    })
}

/// Scores every sample. In general mode `models[0]` is used; in
/// class-specific mode each sample is scored by the model of its own label.
pub fn score_dataset<T: Real>(
    models: &[OneClassSvmModel<T>],
    d: &Dataset<T>,
    mode: ScoreMode,
) -> Result<ScoreTable<T>> {
    let rows = d
        .samples()
        .par_iter()
        .map(|s| score_sample(models, s, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}
