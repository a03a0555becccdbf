//! Evaluation metrics: Cohen's kappa (unweighted and quadratic-weighted),
//! ROC AUC, the Xie-Beni cluster-separation index, and percentile-bootstrap
//! confidence intervals.

use crate::error::{Error, Result};
use crate::rng::{substream, tags};
use crate::types::{ClassIndex, ProbabilityVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Bag-level evaluation summary. `kappa_w` is present for 3+ classes,
/// `kappa` always; `auc` is omitted when the binarized labels are
/// single-class. `ci` is present only when bootstrapping was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BTreeMap<String, CiEntry>>,
}

/// One bootstrap confidence interval in an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiEntry {
    pub low: f64,
    pub high: f64,
    pub iterations: u32,
    pub seed: u64,
}

/// How well one uncertainty measure separates clean from corrupted
/// instances: detection AUC plus the Xie-Beni index of the two score
/// populations (lower = better separated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSeparationReport {
    #[serde(with = "crate::serde_util::finite_or_inf")]
    pub xb: f64,
    pub auc: f64,
}

fn check_ratings(truth: &[ClassIndex], pred: &[ClassIndex], n_classes: usize) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            context: "ratings".into(),
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidShape {
            reason: "ratings are empty".into(),
        });
    }
    for &c in truth.iter().chain(pred) {
        if c.get() > n_classes {
            return Err(Error::InvalidClass {
                value: c.get(),
                n_classes,
            });
        }
    }
    Ok(())
}

fn confusion(truth: &[ClassIndex], pred: &[ClassIndex], n_classes: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[t.index()][p.index()] += 1;
    }
    counts
}

/// Quadratic weighted kappa. Weights are `(i - j)^2` (the usual
/// `(C - 1)^2` normalization cancels between numerator and denominator),
/// and the expected matrix comes from the outer product of the observed
/// marginals, so small integer examples evaluate exactly.
pub fn quadratic_weighted_kappa(
    truth: &[ClassIndex],
    pred: &[ClassIndex],
    n_classes: usize,
) -> Result<f64> {
    check_ratings(truth, pred, n_classes)?;
    let counts = confusion(truth, pred, n_classes);
    let n = truth.len() as u64;
    let row: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<u64> = (0..n_classes).map(|j| counts.iter().map(|r| r[j]).sum()).collect();

    let mut observed = 0u64; // n * sum w_ij O_ij / n, kept as integer sum
    let mut expected = 0u64; // sum w_ij row_i col_j
    for i in 0..n_classes {
        for j in 0..n_classes {
            let w = ((i as i64 - j as i64) * (i as i64 - j as i64)) as u64;
            observed += w * counts[i][j];
            expected += w * row[i] * col[j];
        }
    }
    if expected == 0 {
        return Err(Error::MetricUndefined {
            metric: "kappa_w",
            reason: "all ratings are a single identical class".into(),
        });
    }
    Ok(1.0 - (n * observed) as f64 / expected as f64)
}

/// Unweighted Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
pub fn cohen_kappa(truth: &[ClassIndex], pred: &[ClassIndex], n_classes: usize) -> Result<f64> {
    check_ratings(truth, pred, n_classes)?;
    let counts = confusion(truth, pred, n_classes);
    let n = truth.len() as u64;
    let diagonal: u64 = (0..n_classes).map(|i| counts[i][i]).sum();
    let mut chance = 0u64; // sum row_i col_i
    for i in 0..n_classes {
        let row: u64 = counts[i].iter().sum();
        let col: u64 = counts.iter().map(|r| r[i]).sum();
        chance += row * col;
    }
    if chance == n * n {
        return Err(Error::MetricUndefined {
            metric: "kappa",
            reason: "expected agreement is 1 (both raters constant on one class)".into(),
        });
    }
    let p_o = diagonal as f64 / n as f64;
    let p_e = chance as f64 / (n * n) as f64;
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// ROC AUC by the Mann-Whitney rank formulation; tied scores get averaged
/// ranks, so a tied positive-negative pair counts one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "roc_auc".into(),
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "roc_auc scores".into(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined {
            metric: "auc",
            reason: format!("need both classes, found {n_pos} positive / {n_neg} negative"),
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 share the average rank.
        let avg_rank = (start + end + 2) as f64 / 2.0;
        for &idx in &order[start..=end] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        start = end + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Positive/negative split of the ordinal scale: stages 3 and above are
/// positive.
pub fn binarize_stage(c: ClassIndex) -> bool {
    c.get() >= 3
}

/// Bag score for the binarized AUC: total probability mass on the
/// positive stages.
pub fn positive_score(probs: &ProbabilityVector) -> f64 {
    probs
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| i + 1 >= 3)
        .map(|(_, &p)| p)
        .sum()
}

/// Xie-Beni index for two score populations: mean squared distance of each
/// point to its own group mean, divided by the squared distance between
/// the group means. Lower = better separated; identical group centers
/// yield the infinite sentinel.
pub fn xie_beni(values: &[f64], groups: &[bool]) -> Result<f64> {
    if values.len() != groups.len() {
        return Err(Error::LengthMismatch {
            context: "xie_beni".into(),
            left: values.len(),
            right: groups.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "xie_beni values".into(),
        });
    }
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (&v, &g) in values.iter().zip(groups) {
        let k = usize::from(g);
        sum[k] += v;
        count[k] += 1;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::MetricUndefined {
            metric: "xie_beni",
            reason: "both groups must be non-empty".into(),
        });
    }
    let center = [sum[0] / count[0] as f64, sum[1] / count[1] as f64];
    let compactness = values
        .iter()
        .zip(groups)
        .map(|(&v, &g)| {
            let d = v - center[usize::from(g)];
            d * d
        })
        .sum::<f64>()
        / values.len() as f64;
    let separation = (center[0] - center[1]) * (center[0] - center[1]);
    if separation == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(compactness / separation)
}

/// Percentile of pre-sorted values with linear interpolation between
/// closest ranks (`p` in 0..=100; `p = 0` is the minimum, `p = 100` the
/// maximum).
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=100.0).contains(&p));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Result of [`bootstrap_ci`]. `skipped` counts resamples on which the
/// metric was undefined (or non-finite); they do not enter the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub skipped: u32,
}

/// Non-parametric percentile bootstrap (2.5th/97.5th percentiles) over
/// case-level resampling with replacement. `metric` receives the resampled
/// indices into the caller's data and returns `None` when undefined on
/// that resample. Each iteration draws from its own seeded substream, so
/// results are bit-identical regardless of thread count.
pub fn bootstrap_ci<F>(metric: F, n_samples: usize, iterations: u32, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if iterations == 0 {
        return Err(Error::InvalidConfig {
            reason: "bootstrap iterations must be >= 1".into(),
        });
    }
    if n_samples == 0 {
        return Err(Error::MetricUndefined {
            metric: "bootstrap",
            reason: "no samples to resample".into(),
        });
    }
    let draws: Vec<Option<f64>> = (0..iterations)
        .into_par_iter()
        .map(|iteration| {
            let mut rng = substream(seed, &[tags::BOOTSTRAP, u64::from(iteration)]);
            let indices: Vec<usize> =
                (0..n_samples).map(|_| rng.gen_range(0..n_samples)).collect();
            metric(&indices).filter(|v| v.is_finite())
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().filter_map(|&v| v).collect();
    let skipped = (draws.len() - values.len()) as u32;
    if values.is_empty() {
        return Err(Error::MetricUndefined {
            metric: "bootstrap",
            reason: format!("metric undefined on all {iterations} resamples"),
        });
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: percentile_of_sorted(&values, 2.5),
        high: percentile_of_sorted(&values, 97.5),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn classes(values: &[usize], c: usize) -> Vec<ClassIndex> {
        values.iter().map(|&v| ClassIndex::new(v, c).unwrap()).collect()
    }

    /// Straightforward transcription of the weighted-kappa definition with
    /// normalized matrices, kept deliberately separate from the integer
    /// implementation above.
    fn qwk_reference(truth: &[usize], pred: &[usize], c: usize) -> f64 {
        let n = truth.len() as f64;
        let mut o = vec![vec![0.0f64; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            o[t - 1][p - 1] += 1.0 / n;
        }
        let row: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<f64> = (0..c).map(|j| o.iter().map(|r| r[j]).sum()).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..c {
            for j in 0..c {
                let w = ((i as f64) - (j as f64)).powi(2) / ((c - 1) as f64).powi(2);
                num += w * o[i][j];
                den += w * row[i] * col[j];
            }
        }
        1.0 - num / den
    }

    #[test]
    fn qwk_hand_example_is_exact() {
        let truth = classes(&[1, 2, 3], 3);
        let pred = classes(&[1, 3, 2], 3);
        assert_eq!(quadratic_weighted_kappa(&truth, &pred, 3).unwrap(), 0.5);
    }

    #[test]
    fn qwk_perfect_agreement() {
        let truth = classes(&[1, 2, 3, 2, 5], 5);
        assert_eq!(quadratic_weighted_kappa(&truth, &truth, 5).unwrap(), 1.0);
    }

    #[test]
    fn qwk_constant_prediction_not_positive() {
        let truth = classes(&[1, 2, 3, 4, 5], 5);
        let pred = classes(&[3, 3, 3, 3, 3], 5);
        assert!(quadratic_weighted_kappa(&truth, &pred, 5).unwrap() <= 0.0);
    }

    #[test]
    fn qwk_undefined_on_single_identical_class() {
        let truth = classes(&[2, 2, 2], 5);
        assert!(matches!(
            quadratic_weighted_kappa(&truth, &truth, 5),
            Err(Error::MetricUndefined { .. })
        ));
    }

    #[test]
    fn qwk_symmetric_and_distance_sensitive() {
        let truth = classes(&[1, 2, 3, 4, 5, 3], 5);
        let near = classes(&[2, 2, 3, 4, 5, 3], 5);
        let far = classes(&[3, 2, 3, 4, 5, 3], 5);
        let k_ab = quadratic_weighted_kappa(&truth, &near, 5).unwrap();
        let k_ba = quadratic_weighted_kappa(&near, &truth, 5).unwrap();
        assert_abs_diff_eq!(k_ab, k_ba, epsilon = 1e-15);
        assert!(
            quadratic_weighted_kappa(&truth, &far, 5).unwrap() < k_ab,
            "off-by-2 must cost more than off-by-1"
        );
    }

    #[test]
    fn qwk_matches_reference_on_random_pairs() {
        let mut rng = substream(7, &[1]);
        for _ in 0..300 {
            let c = rng.gen_range(2..=6);
            let n = rng.gen_range(5..=120);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=c)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=c)).collect();
            let ours = quadratic_weighted_kappa(&classes(&truth, c), &classes(&pred, c), c);
            match ours {
                Ok(v) => assert_abs_diff_eq!(v, qwk_reference(&truth, &pred, c), epsilon = 1e-12),
                Err(_) => {
                    assert!(truth.iter().chain(&pred).all(|&x| x == truth[0]));
                }
            }
        }
    }

    #[test]
    fn cohen_hand_examples() {
        let truth = classes(&[1, 2, 3], 3);
        assert_eq!(cohen_kappa(&truth, &truth, 3).unwrap(), 1.0);

        let truth = classes(&[1, 1, 2, 2], 2);
        let pred = classes(&[1, 2, 1, 2], 2);
        assert_eq!(cohen_kappa(&truth, &pred, 2).unwrap(), 0.0);
    }

    #[test]
    fn cohen_undefined_when_expected_agreement_is_one() {
        let truth = classes(&[1, 1, 1], 3);
        assert!(matches!(
            cohen_kappa(&truth, &truth, 3),
            Err(Error::MetricUndefined { .. })
        ));
    }

    #[test]
    fn auc_hand_examples() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.4, 0.4, 0.4], &[false, true, false]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.2, 0.8, 0.5, 0.4], &[false, true, false, true]).unwrap(),
            0.75
        );
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.11, 0.52, 0.48, 0.93, 0.27, 0.52];
        let labels = [false, true, false, true, false, true];
        let base = roc_auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp() - 3.0).collect();
        assert_abs_diff_eq!(roc_auc(&warped, &labels).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::MetricUndefined { .. })
        ));
    }

    #[test]
    fn binarize_and_positive_score() {
        assert!(!binarize_stage(ClassIndex::new(1, 5).unwrap()));
        assert!(!binarize_stage(ClassIndex::new(2, 5).unwrap()));
        assert!(binarize_stage(ClassIndex::new(3, 5).unwrap()));
        assert!(binarize_stage(ClassIndex::new(5, 5).unwrap()));

        let p = ProbabilityVector::new(vec![0.6, 0.2, 0.1, 0.05, 0.05]).unwrap();
        assert_abs_diff_eq!(positive_score(&p), 0.2, epsilon = 1e-12);
        let one_hot = ProbabilityVector::new(vec![0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(positive_score(&one_hot), 1.0);
    }

    #[test]
    fn xie_beni_hand_examples() {
        assert_eq!(
            xie_beni(&[0.1, 0.1, 0.9, 0.9], &[false, false, true, true]).unwrap(),
            0.0
        );
        assert_eq!(
            xie_beni(&[0.0, 2.0, 4.0, 6.0], &[false, false, true, true]).unwrap(),
            0.0625
        );
    }

    #[test]
    fn xie_beni_invariances_and_sentinel() {
        let v = [0.0, 2.0, 4.0, 6.0];
        let g = [false, false, true, true];
        let base = xie_beni(&v, &g).unwrap();
        // Permutation within groups.
        assert_eq!(xie_beni(&[2.0, 0.0, 6.0, 4.0], &g).unwrap(), base);
        // Shift and scale invariance.
        let shifted: Vec<f64> = v.iter().map(|x| x + 11.5).collect();
        assert_abs_diff_eq!(xie_beni(&shifted, &g).unwrap(), base, epsilon = 1e-12);
        let scaled: Vec<f64> = v.iter().map(|x| x * -3.0).collect();
        assert_abs_diff_eq!(xie_beni(&scaled, &g).unwrap(), base, epsilon = 1e-12);
        // Equal centers -> infinite sentinel.
        assert!(xie_beni(&[0.0, 2.0, 1.0, 1.0], &[false, false, true, true])
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn percentile_interpolation() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_of_sorted(&sorted, 0.0), 1.0);
        assert_eq!(percentile_of_sorted(&sorted, 100.0), 4.0);
        assert_eq!(percentile_of_sorted(&sorted, 50.0), 2.5);
        assert_eq!(percentile_of_sorted(&sorted, 25.0), 1.75);
        assert_eq!(percentile_of_sorted(&[7.0], 42.0), 7.0);
    }

    #[test]
    fn bootstrap_constant_metric_zero_width() {
        let ci = bootstrap_ci(|_| Some(3.25), 50, 200, 9).unwrap();
        assert_eq!((ci.low, ci.high, ci.skipped), (3.25, 3.25, 0));
    }

    #[test]
    fn bootstrap_deterministic_and_counts_skips() {
        let data: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let metric = |idx: &[usize]| {
            // Undefined whenever the resample misses index 0.
            if idx.contains(&0) {
                Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64)
            } else {
                None
            }
        };
        let a = bootstrap_ci(metric, data.len(), 500, 123).unwrap();
        let b = bootstrap_ci(metric, data.len(), 500, 123).unwrap();
        assert_eq!(a, b);
        assert!(a.skipped > 0, "some resamples should miss index 0");

        assert!(matches!(
            bootstrap_ci(|_| None, 10, 50, 1),
            Err(Error::MetricUndefined { .. })
        ));
    }

    #[test]
    fn bootstrap_coverage_sanity() {
        // 95% CI for the mean of 200 iid U(0,1) draws should contain the
        // true mean 0.5 in the vast majority of trials.
        let mut covered = 0;
        for trial in 0..100u64 {
            let mut rng = substream(1234, &[trial]);
            let data: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
            let ci = bootstrap_ci(
                |idx| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64),
                data.len(),
                1000,
                trial,
            )
            .unwrap();
            if ci.low <= 0.5 && 0.5 <= ci.high {
                covered += 1;
            }
        }
        assert!(covered >= 90, "CI covered the truth in only {covered}/100 trials");
    }
}
