//! Sample-weighted classification losses with gradients w.r.t. the logits.
//!
//! Both losses are a weighted sum over samples, `L = sum_n tau_n * l(z_n, y_n)`:
//!
//! - softmax-log: `l = -log softmax(z)_y`, gradient `softmax(z) - onehot(y)`;
//! - multi-class structured hinge (Crammer-Singer): with the margin
//!   `phi = z_y - max_{j != y} z_j`, `l = max(0, 1 - phi)` and subgradient
//!   `+1` at the best competitor, `-1` at the label while `phi < 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxLog,
    MsHinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SoftmaxLog => "softmax_log",
            LossKind::MsHinge => "ms_hinge",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_log" | "softmax" => Ok(LossKind::SoftmaxLog),
            "ms_hinge" | "hinge" => Ok(LossKind::MsHinge),
            other => Err(Error::Parameter(format!("unknown loss {other:?}"))),
        }
    }
}

/// Per-sample loss value with its (sub)gradient w.r.t. the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

pub fn log_sum_exp<T: Real>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check<T: Real>(z: &[T], label: usize, tau: T) -> Result<()> {
    if label >= z.len() {
        return Err(Error::LabelRange {
            row: 0,
            label,
            num_classes: z.len(),
        });
    }
    if !(tau >= T::zero()) || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "weight must be finite and >= 0, got {tau}"
        )));
    }
    Ok(())
}

/// `tau * -log softmax(z)_label`, computed as `tau * (lse(z) - z_label)`.
pub fn weighted_softmax_log_loss<T: Real>(z: &[T], label: usize, tau: T) -> Result<LossGrad<T>> {
    check(z, label, tau)?;
    let lse = log_sum_exp(z);
    let mut grad = softmax(z);
    grad[label] -= T::one();
    grad.iter_mut().for_each(|g| *g *= tau);
    Ok(LossGrad {
        loss: tau * (lse - z[label]),
        grad,
    })
}

/// Best competing class (lowest index on ties) and the margin `phi`.
pub fn hinge_margin<T: Real>(z: &[T], label: usize) -> (usize, T) {
    let mut best: Option<usize> = None;
    for (j, &v) in z.iter().enumerate() {
        if j == label {
            continue;
        }
        match best {
            Some(b) if z[b] >= v => {}
            _ => best = Some(j),
        }
    }
    let b = best.expect("at least two classes");
    (b, z[label] - z[b])
}

/// `tau * max(0, 1 - phi)`; zero subgradient at the kink `phi = 1`.
pub fn weighted_ms_hinge_loss<T: Real>(z: &[T], label: usize, tau: T) -> Result<LossGrad<T>> {
    if z.len() < 2 {
        return Err(Error::Parameter(
            "hinge margin needs at least 2 classes".into(),
        ));
    }
    check(z, label, tau)?;
    let (competitor, phi) = hinge_margin(z, label);
    let slack = T::one() - phi;
    let mut grad = vec![T::zero(); z.len()];
    if slack > T::zero() {
        grad[competitor] = tau;
        grad[label] = -tau;
        Ok(LossGrad {
            loss: tau * slack,
            grad,
        })
    } else {
        Ok(LossGrad {
            loss: T::zero(),
            grad,
        })
    }
}

pub fn weighted_loss<T: Real>(
    kind: LossKind,
    z: &[T],
    label: usize,
    tau: T,
) -> Result<LossGrad<T>> {
    match kind {
        LossKind::SoftmaxLog => weighted_softmax_log_loss(z, label, tau),
        LossKind::MsHinge => weighted_ms_hinge_loss(z, label, tau),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a, T> {
    pub sample_id: u64,
    pub logits: &'a [T],
    pub label: usize,
    pub tau: T,
}

/// Summed loss; `terms` are in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub terms: Vec<T>,
}

/// Sum reduction over a batch. Gradients are returned in batch order; the
/// total is accumulated in ascending `sample_id` order so it does not depend
/// on how the batch was permuted.
pub fn batch_loss<T: Real>(
    kind: LossKind,
    batch: &[BatchItem<'_, T>],
) -> Result<(LossValue<T>, Vec<Vec<T>>)> {
    if let Some(first) = batch.first() {
        let c = first.logits.len();
        if let Some(bad) = batch.iter().find(|b| b.logits.len() != c) {
            return Err(Error::Dimension {
                expected: c,
                got: bad.logits.len(),
            });
        }
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for item in batch {
        let lg = weighted_loss(kind, item.logits, item.label, item.tau)?;
        terms.push(lg.loss);
        grads.push(lg.grad);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| batch[i].sample_id);
    let total = order.iter().fold(T::zero(), |acc, &i| acc + terms[i]);
    Ok((LossValue { total, terms }, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0f64, 1000.0, 1000.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1.0f64, 0.0]);
        assert!((p[0] - E / (E + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (E + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_loss_examples() {
        let r = weighted_softmax_log_loss(&[0.0f64, 0.0], 0, 1.0).unwrap();
        assert!((r.loss - LN_2).abs() < 1e-15);
        assert_eq!(r.grad, vec![-0.5, 0.5]);

        let r = weighted_softmax_log_loss(&[0.3f64, -1.0, 2.0], 2, 0.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));

        let z = [0.3f64, -1.0, 2.0];
        let a = weighted_softmax_log_loss(&z, 1, 1.0).unwrap();
        let b = weighted_softmax_log_loss(&z, 1, 2.0).unwrap();
        assert_eq!(b.loss, 2.0 * a.loss);
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert_eq!(*y, 2.0 * x);
        }
    }

    #[test]
    fn softmax_loss_extreme_logits_finite() {
        let r = weighted_softmax_log_loss(&[-800.0f64, 800.0], 0, 1.0).unwrap();
        assert_eq!(r.loss, 1600.0);
        assert!(r.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn hinge_examples() {
        let r = weighted_ms_hinge_loss(&[2.0f64, 1.0, 0.0], 0, 1.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grad, vec![0.0; 3]);

        let r = weighted_ms_hinge_loss(&[1.0f64, 1.0, 0.0], 0, 0.5).unwrap();
        assert_eq!(r.loss, 0.5);

        let r = weighted_ms_hinge_loss(&[0.0f64, 3.0, 0.0], 0, 1.0).unwrap();
        assert_eq!(r.loss, 4.0);
        assert_eq!(r.grad, vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn hinge_ties_pick_lowest_competitor() {
        let r = weighted_ms_hinge_loss(&[0.0f64, 2.0, 2.0, 2.0], 3, 1.0).unwrap();
        assert_eq!(r.grad, vec![0.0, 1.0, 0.0, -1.0]);
        let r = weighted_ms_hinge_loss(&[5.0f64, 5.0, 0.0], 2, 1.0).unwrap();
        assert_eq!(r.grad, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn hinge_requires_two_classes() {
        assert!(weighted_ms_hinge_loss(&[1.0f64], 0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(weighted_softmax_log_loss(&[0.0f64, 1.0], 2, 1.0).is_err());
        assert!(weighted_softmax_log_loss(&[0.0f64, 1.0], 0, -1.0).is_err());
        assert!(weighted_ms_hinge_loss(&[0.0f64, 1.0], 0, f64::NAN).is_err());
    }

    #[test]
    fn batch_of_one_and_permutation() {
        let zs = [
            vec![0.1f64, 0.5, -0.2],
            vec![1.0, -1.0, 0.3],
            vec![0.0, 0.0, 2.0],
        ];
        let items: Vec<BatchItem<f64>> = zs
            .iter()
            .enumerate()
            .map(|(i, z)| BatchItem {
                sample_id: 10 + i as u64,
                logits: z,
                label: i,
                tau: 0.7,
            })
            .collect();
        for kind in [LossKind::SoftmaxLog, LossKind::MsHinge] {
            let (one, g1) = batch_loss(kind, &items[..1]).unwrap();
            let single = weighted_loss(kind, &zs[0], 0, 0.7).unwrap();
            assert_eq!(one.total, single.loss);
            assert_eq!(g1[0], single.grad);

            let (all, _) = batch_loss(kind, &items).unwrap();
            let mut rev = items.clone();
            rev.reverse();
            let (back, grads) = batch_loss(kind, &rev).unwrap();
            assert_eq!(all.total, back.total);
            assert_eq!(grads[0], weighted_loss(kind, &zs[2], 2, 0.7).unwrap().grad);
            let sum: f64 = all.terms.iter().sum();
            assert!((sum - all.total).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_rejects_mixed_class_counts() {
        let a = [0.0f64, 1.0];
        let b = [0.0f64, 1.0, 2.0];
        let items = [
            BatchItem {
                sample_id: 0,
                logits: &a[..],
                label: 0,
                tau: 1.0,
            },
            BatchItem {
                sample_id: 1,
                logits: &b[..],
                label: 0,
                tau: 1.0,
            },
        ];
        assert!(batch_loss(LossKind::MsHinge, &items).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn logits() -> impl Strategy<Value = (Vec<f64>, usize)> {
            (2usize..=8).prop_flat_map(|c| (prop::collection::vec(-10.0f64..10.0, c), 0..c))
        }

        proptest! {
            #[test]
            fn shift_invariance((z, y) in logits(), shift in -50.0f64..50.0, tau in 0.0f64..5.0) {
                let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
                let a = weighted_softmax_log_loss(&z, y, tau).unwrap();
                let b = weighted_softmax_log_loss(&shifted, y, tau).unwrap();
                prop_assert!((a.loss - b.loss).abs() < 1e-9);
                let (_, pa) = hinge_margin(&z, y);
                let (_, pb) = hinge_margin(&shifted, y);
                prop_assert!((pa - pb).abs() < 1e-9);
            }

            #[test]
            fn hinge_zero_iff_margin((z, y) in logits(), tau in 0.1f64..5.0) {
                let r = weighted_ms_hinge_loss(&z, y, tau).unwrap();
                let (_, phi) = hinge_margin(&z, y);
                prop_assert_eq!(r.loss == 0.0, phi >= 1.0);
                let s = weighted_softmax_log_loss(&z, y, tau).unwrap();
                prop_assert!(s.loss > 0.0);
            }

            #[test]
            fn softmax_sums_to_one((z, _y) in logits()) {
                let s: f64 = softmax(&z).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
