//! Probability math and MIL max-pooling.
//!
//! Bag-level outputs are obtained by element-wise max over instances,
//! then softmax per ensemble member, then the mean over members. The
//! softmax-before-averaging order is deliberate and load-bearing.

use crate::error::{Error, Result};
use crate::types::{BagLogits, ClassIndex, InstanceLogits, PooledLogits, ProbabilityVector};

/// Numerically stable softmax (max-subtraction). Rejects non-finite input.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    if logits.is_empty() {
        return Err(Error::InvalidShape {
            reason: "softmax input is empty".to_string(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "softmax input".to_string(),
        });
    }
    Ok(softmax_unchecked(logits))
}

/// Softmax for inputs already known to be finite and non-empty.
fn softmax_unchecked(logits: &[f64]) -> ProbabilityVector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbabilityVector::new(exps.iter().map(|e| e / sum).collect())
        .expect("softmax of finite logits is a valid distribution")
}

/// Mean over per-member softmax rows. Rows must share one length.
fn mean_member_softmax(rows: &[Vec<f64>]) -> ProbabilityVector {
    let n_classes = rows[0].len();
    let mut acc = vec![0.0f64; n_classes];
    for row in rows {
        let p = softmax_unchecked(row);
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    let m = rows.len() as f64;
    for a in acc.iter_mut() {
        *a /= m;
    }
    ProbabilityVector::new(acc).expect("mean of distributions is a distribution")
}

/// Instance-level probabilities: softmax per ensemble member, then the
/// arithmetic mean over members.
pub fn instance_probability(inst: &InstanceLogits) -> ProbabilityVector {
    mean_member_softmax(inst.values())
}

/// MIL pooling: element-wise maximum over the bag's instances,
/// independently per (member, class).
pub fn mil_pool(bag: &BagLogits) -> PooledLogits {
    let (n_models, n_classes) = bag.shape();
    let mut pooled = vec![vec![f64::NEG_INFINITY; n_classes]; n_models];
    for inst in bag.instances() {
        for (m, row) in pooled.iter_mut().enumerate() {
            for (c, z) in row.iter_mut().enumerate() {
                let h = inst.member(m)[c];
                if h > *z {
                    *z = h;
                }
            }
        }
    }
    PooledLogits::new(pooled).expect("pooled logits inherit the bag's valid shape")
}

/// Bag-level probabilities from pooled logits: softmax per member, then
/// the mean over members.
pub fn bag_probability(pooled: &PooledLogits) -> ProbabilityVector {
    mean_member_softmax(pooled.values())
}

/// Predicted class: argmax with ties broken toward the lowest class index.
pub fn bag_predict(probs: &ProbabilityVector) -> ClassIndex {
    let mut best = 0usize;
    for (i, v) in probs.values().iter().enumerate() {
        if *v > probs.values()[best] {
            best = i;
        }
    }
    ClassIndex::new(best + 1, probs.len()).expect("argmax index lies within 1..=C")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn inst(values: Vec<Vec<f64>>) -> InstanceLogits {
        InstanceLogits::new(values).unwrap()
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p.values() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_two_class_example() {
        // e/(e+1) for [1, 0]
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.values()[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(p.values()[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.456).collect();
        let a = softmax(&x).unwrap();
        let b = softmax(&shifted).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_stable_under_large_magnitudes() {
        let p = softmax(&[1e308, 1e308 - 1.0]).unwrap();
        assert!(p.values().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.values().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn instance_probability_single_member_is_softmax() {
        let i = inst(vec![vec![0.4, -0.7, 1.1]]);
        let p = instance_probability(&i);
        let s = softmax(&[0.4, -0.7, 1.1]).unwrap();
        assert_eq!(p, s);
    }

    #[test]
    fn instance_probability_averages_members() {
        // member A [0,0] -> [.5,.5]; member B [ln 3, 0] -> [.75,.25]
        let i = inst(vec![vec![0.0, 0.0], vec![3.0f64.ln(), 0.0]]);
        let p = instance_probability(&i);
        assert_abs_diff_eq!(p.values()[0], 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(p.values()[1], 0.375, epsilon = 1e-12);
    }

    #[test]
    fn instance_probability_identical_members() {
        let i = inst(vec![vec![0.2, 1.4, -0.3]; 4]);
        let p = instance_probability(&i);
        let s = softmax(&[0.2, 1.4, -0.3]).unwrap();
        for (u, v) in p.values().iter().zip(s.values()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn mil_pool_single_instance_is_identity() {
        let i = inst(vec![vec![0.5, -1.0], vec![2.0, 0.1]]);
        let bag = BagLogits::new("b", vec![i.clone()], None).unwrap();
        assert_eq!(mil_pool(&bag).values(), i.values());
    }

    #[test]
    fn mil_pool_elementwise_max() {
        let bag = BagLogits::new(
            "b",
            vec![inst(vec![vec![1.0, 2.0]]), inst(vec![vec![3.0, 0.0]])],
            None,
        )
        .unwrap();
        assert_eq!(mil_pool(&bag).values(), &[vec![3.0, 2.0]]);
    }

    #[test]
    fn mil_pool_permutation_invariant() {
        let a = inst(vec![vec![1.0, -2.0], vec![0.0, 4.0]]);
        let b = inst(vec![vec![-1.0, 7.0], vec![2.0, -4.0]]);
        let c = inst(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let fwd = BagLogits::new("b", vec![a.clone(), b.clone(), c.clone()], None).unwrap();
        let rev = BagLogits::new("b", vec![c, b, a], None).unwrap();
        assert_eq!(mil_pool(&fwd), mil_pool(&rev));
    }

    #[test]
    fn bag_probability_matches_instance_arithmetic() {
        let z = PooledLogits::new(vec![vec![0.0, 0.0], vec![3.0f64.ln(), 0.0]]).unwrap();
        let p = bag_probability(&z);
        assert_abs_diff_eq!(p.values()[0], 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(p.values()[1], 0.375, epsilon = 1e-12);
    }

    #[test]
    fn bag_predict_argmax_and_tie_break() {
        let p = ProbabilityVector::new(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(bag_predict(&p).get(), 2);
        let tie = ProbabilityVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(bag_predict(&tie).get(), 1);
        let one_hot = ProbabilityVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(bag_predict(&one_hot).get(), 3);
    }
}
