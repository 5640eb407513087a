use serde::{Deserialize, Serialize};

use super::Activation;
use crate::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside BCE.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
}

impl LossKind {
    /// Per-sample loss and its derivative with respect to the prediction.
    #[inline]
    pub(crate) fn sample(self, y: f64, pred: f64) -> (f64, f64) {
        match self {
            LossKind::Mse => {
                let r = pred - y;
                (r * r, 2.0 * r)
            }
            LossKind::Bce => {
                let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                (
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
                    -y / p + (1.0 - y) / (1.0 - p),
                )
            }
        }
    }

    pub(crate) fn check_head(self, head: Activation) -> Result<()> {
        if self == LossKind::Bce && head != Activation::Sigmoid {
            return Err(Error::LossMismatch {
                loss: "bce".into(),
                head: head.name().into(),
            });
        }
        Ok(())
    }
}

/// Sample-averaged loss.
pub fn loss(kind: LossKind, y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), pred.len())));
    }
    if y.is_empty() {
        return Err(Error::Empty("loss inputs".into()));
    }
    let total: f64 = y.iter().zip(pred).map(|(&t, &p)| kind.sample(t, p).0).sum();
    Ok(total / y.len() as f64)
}

pub fn mse(y: &[f64], pred: &[f64]) -> Result<f64> {
    loss(LossKind::Mse, y, pred)
}

pub fn bce(y: &[f64], pred: &[f64]) -> Result<f64> {
    loss(LossKind::Bce, y, pred)
}

/// Area under the ROC curve: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Empty("auc needs both classes".into()));
    }
    let mut neg = negative.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    // twice the pair score, kept integral so the result is exact
    let mut twice: u64 = 0;
    for &x in positive {
        let below = neg.partition_point(|&v| v < x);
        let not_above = neg.partition_point(|&v| v <= x);
        twice += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(twice as f64 / (2.0 * positive.len() as f64 * negative.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc_brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut twice = 0u64;
        for &x in pos {
            for &y in neg {
                twice += if x > y { 2 } else if x == y { 1 } else { 0 };
            }
        }
        twice as f64 / (2.0 * pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn mse_of_identical_vectors_is_zero() {
        let y = [0.3, -1.0, 2.5];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn bce_at_one_half_is_ln2() {
        assert!((bce(&[1.0], &[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_clamps_instead_of_overflowing() {
        let v = bce(&[1.0], &[0.0]).unwrap();
        assert!(v.is_finite());
        assert!((v + BCE_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_requires_sigmoid_head() {
        assert!(LossKind::Bce.check_head(Activation::Linear).is_err());
        assert!(LossKind::Mse.check_head(Activation::Sigmoid).is_ok());
    }

    #[test]
    fn auc_perfect_and_reversed() {
        assert_eq!(auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(auc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert!(auc(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn loss_matches_direct_summation(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut direct = 0.0;
            for i in 0..y.len() {
                direct += (y[i] - p[i]).powi(2);
            }
            prop_assert!((mse(&y, &p).unwrap() - direct / y.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn auc_matches_pairwise_enumeration(
            pos in prop::collection::vec(0u8..20, 1..15),
            neg in prop::collection::vec(0u8..20, 1..15),
        ) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            prop_assert_eq!(auc(&pos, &neg).unwrap(), auc_brute(&pos, &neg));
        }

        #[test]
        fn auc_invariant_under_increasing_transform(
            pos in prop::collection::vec(-3.0f64..3.0, 1..12),
            neg in prop::collection::vec(-3.0f64..3.0, 1..12),
        ) {
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let tp: Vec<f64> = pos.iter().map(f).collect();
            let tn: Vec<f64> = neg.iter().map(f).collect();
            prop_assert_eq!(auc(&pos, &neg).unwrap(), auc(&tp, &tn).unwrap());
        }
    }
}
