//! Uncertainty-based instance exclusion (UBIX).
//!
//! The soft variant rescales every instance logit toward a per-class floor
//! `chi[c]` by a sigmoid gate of that instance's uncertainty: confident
//! instances pass through untouched, uncertain ones are flattened to the
//! floor and can no longer win the max-pooling. The hard variant drops
//! instances whose uncertainty reaches a threshold `tau` outright.
//!
//! [`calibrate`] fits the floors and uncertainty range on a labeled
//! validation set and grid-searches the gate hyperparameters by maximizing
//! quadratic weighted kappa.

use crate::error::{Error, Result};
use crate::metrics::{percentile_of_sorted, quadratic_weighted_kappa};
use crate::mil::{bag_predict, bag_probability, mil_pool};
use crate::types::{BagLogits, BagPrediction, ClassIndex, InstanceLogits, PooledLogits};
use crate::uncertainty::{uncertainty, UncertaintyMeasure};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// How a bag-level prediction is produced from instance logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InferenceMode {
    /// Plain max-pooling of the raw logits; no gating.
    #[serde(rename = "mil")]
    PlainMil,
    /// Sigmoid gating of logits toward the floor before pooling.
    #[serde(rename = "soft-ubix")]
    SoftUbix,
    /// Instances with uncertainty >= tau are removed before pooling.
    #[serde(rename = "hard-ubix")]
    HardUbix,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [
        InferenceMode::PlainMil,
        InferenceMode::SoftUbix,
        InferenceMode::HardUbix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::PlainMil => "mil",
            InferenceMode::SoftUbix => "soft-ubix",
            InferenceMode::HardUbix => "hard-ubix",
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InferenceMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!(
                    "unknown inference mode '{s}' (expected one of: {})",
                    InferenceMode::ALL.map(|m| m.as_str()).join(", ")
                ),
            })
    }
}

/// Calibrated UBIX hyperparameter bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UbixParams {
    pub measure: UncertaintyMeasure,
    /// Gate steepness; infinity turns the sigmoid into a step.
    #[serde(with = "crate::serde_util::finite_or_inf")]
    pub delta: f64,
    /// Gate-center factor; the center is `gamma * (u_min + u_max)`.
    pub gamma: f64,
    /// Hard-exclusion threshold (used by hard inference only).
    pub tau: f64,
    /// Per-class logit floor: minimum validation logit for each class.
    pub chi: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub n_classes: usize,
    pub n_models: usize,
}

impl UbixParams {
    /// Gate center on the uncertainty axis.
    pub fn gamma_hat(&self) -> f64 {
        gamma_hat(self.gamma, self.u_min, self.u_max)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidParams { reason });
        if self.n_classes < 2 {
            return fail(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_models < 1 {
            return fail(format!("n_models must be >= 1, got {}", self.n_models));
        }
        if self.chi.len() != self.n_classes {
            return fail(format!(
                "chi has {} entries, expected n_classes = {}",
                self.chi.len(),
                self.n_classes
            ));
        }
        if self.chi.iter().any(|v| !v.is_finite()) {
            return fail("chi entries must be finite".into());
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return fail(format!("delta must be positive (or \"inf\"), got {}", self.delta));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        if self.u_min > self.u_max {
            return fail(format!("u_min {} exceeds u_max {}", self.u_min, self.u_max));
        }
        Ok(())
    }
}

/// Gate-steepness search grid.
pub const DELTA_GRID: [f64; 9] = [
    1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 5000.0, 10000.0,
];

/// Gate-center search grid: -0.5 to 1.5 in steps of 0.05.
pub fn gamma_grid() -> Vec<f64> {
    (0..=40).map(|k| (5.0 * k as f64 - 50.0) / 100.0).collect()
}

/// Hard-threshold search grid: percentiles 0 to 100 (step 0.5) of the
/// validation uncertainties.
pub fn tau_grid(sorted_uncertainties: &[f64]) -> Vec<f64> {
    (0..=200)
        .map(|k| percentile_of_sorted(sorted_uncertainties, k as f64 * 0.5))
        .collect()
}

fn check_uniform_shapes(bags: &[BagLogits], context: &str) -> Result<(usize, usize)> {
    let (m, c) = bags[0].shape();
    for bag in &bags[1..] {
        let (bm, bc) = bag.shape();
        if (bm, bc) != (m, c) {
            return Err(Error::ShapeMismatch {
                context: format!("{context}: bag '{}'", bag.bag_id()),
                expected_m: m,
                expected_c: c,
                found_m: bm,
                found_c: bc,
            });
        }
    }
    Ok((m, c))
}

/// Per-class logit floor: the global minimum logit over every validation
/// instance and ensemble member.
pub fn fit_chi(validation: &[BagLogits]) -> Result<Vec<f64>> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (_, c) = check_uniform_shapes(validation, "fit_chi")?;
    let mut chi = vec![f64::INFINITY; c];
    for bag in validation {
        for inst in bag.instances() {
            for row in inst.values() {
                for (slot, &h) in chi.iter_mut().zip(row) {
                    if h < *slot {
                        *slot = h;
                    }
                }
            }
        }
    }
    Ok(chi)
}

/// Extremes of oriented uncertainty over all validation instances.
pub fn fit_u_range(
    validation: &[BagLogits],
    measure: UncertaintyMeasure,
) -> Result<(f64, f64)> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    check_uniform_shapes(validation, "fit_u_range")?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for bag in validation {
        for inst in bag.instances() {
            let u = uncertainty(measure, inst).value();
            lo = lo.min(u);
            hi = hi.max(u);
        }
    }
    Ok((lo, hi))
}

/// Gate center `gamma * (u_min + u_max)`.
pub fn gamma_hat(gamma: f64, u_min: f64, u_max: f64) -> f64 {
    gamma * (u_min + u_max)
}

/// Sigmoid gate in [0, 1]: ~1 for uncertainty well below the center,
/// ~0 well above. Infinite `delta` degenerates to a step that closes at
/// `u >= gamma_hat`.
pub fn gate(delta: f64, u: f64, gamma_hat: f64) -> f64 {
    if delta.is_infinite() {
        return if u >= gamma_hat { 0.0 } else { 1.0 };
    }
    1.0 / (1.0 + (delta * (u - gamma_hat)).exp())
}

fn transform_with_gate(h: f64, chi_c: f64, gate: f64) -> f64 {
    gate * (h - chi_c) + chi_c
}

/// The UBIX function: rescales logit `h` toward the class floor `chi_c`
/// according to the instance uncertainty `u`. The result always lies on
/// the closed segment between `chi_c` and `h`.
pub fn ubix_transform(h: f64, u: f64, chi_c: f64, delta: f64, gamma_hat: f64) -> f64 {
    transform_with_gate(h, chi_c, gate(delta, u, gamma_hat))
}

/// Oriented uncertainty of every instance, in bag order.
pub fn bag_uncertainties(bag: &BagLogits, measure: UncertaintyMeasure) -> Vec<f64> {
    bag.instances()
        .iter()
        .map(|inst| uncertainty(measure, inst).value())
        .collect()
}

/// Post-gating logits for every instance of a bag.
pub fn post_ubix_logits(
    bag: &BagLogits,
    uncertainties: &[f64],
    params: &UbixParams,
) -> Result<Vec<InstanceLogits>> {
    if uncertainties.len() != bag.n_instances() {
        return Err(Error::LengthMismatch {
            context: format!("post_ubix_logits for bag '{}'", bag.bag_id()),
            left: bag.n_instances(),
            right: uncertainties.len(),
        });
    }
    let gh = params.gamma_hat();
    bag.instances()
        .iter()
        .zip(uncertainties)
        .map(|(inst, &u)| {
            let g = gate(params.delta, u, gh);
            let rows = inst
                .values()
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&params.chi)
                        .map(|(&h, &chi_c)| transform_with_gate(h, chi_c, g))
                        .collect()
                })
                .collect();
            InstanceLogits::new(rows)
        })
        .collect()
}

fn retained_indices(uncertainties: &[f64], tau: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..uncertainties.len())
        .filter(|&i| uncertainties[i] < tau)
        .collect();
    if !kept.is_empty() {
        return kept;
    }
    // Everything reached the threshold; a bag must still predict, so keep
    // the single least-uncertain instance (lowest index on ties).
    let mut best = 0;
    for (i, &u) in uncertainties.iter().enumerate().skip(1) {
        if u < uncertainties[best] {
            best = i;
        }
    }
    vec![best]
}

/// Removes instances with uncertainty >= `tau`. If that would empty the
/// bag, the single least-uncertain instance is kept instead.
pub fn hard_prune(bag: &BagLogits, uncertainties: &[f64], tau: f64) -> Result<BagLogits> {
    if uncertainties.len() != bag.n_instances() {
        return Err(Error::LengthMismatch {
            context: format!("hard_prune for bag '{}'", bag.bag_id()),
            left: bag.n_instances(),
            right: uncertainties.len(),
        });
    }
    let kept = retained_indices(uncertainties, tau)
        .into_iter()
        .map(|i| bag.instances()[i].clone())
        .collect();
    BagLogits::new(bag.bag_id(), kept, bag.label())
}

fn predict_pooled(pooled: &PooledLogits) -> (crate::types::ProbabilityVector, ClassIndex) {
    let probs = bag_probability(pooled);
    let predicted = bag_predict(&probs);
    (probs, predicted)
}

/// Bag-level inference under the chosen mode. Plain MIL ignores every
/// gating field of `params` (and reports no uncertainties, so its output
/// is identical across measures); both UBIX modes report per-instance
/// uncertainties.
pub fn infer(bag: &BagLogits, params: &UbixParams, mode: InferenceMode) -> Result<BagPrediction> {
    let (m, c) = bag.shape();
    if (m, c) != (params.n_models, params.n_classes) {
        return Err(Error::ShapeMismatch {
            context: format!("bag '{}' vs params", bag.bag_id()),
            expected_m: params.n_models,
            expected_c: params.n_classes,
            found_m: m,
            found_c: c,
        });
    }
    match mode {
        InferenceMode::PlainMil => {
            let (probs, predicted) = predict_pooled(&mil_pool(bag));
            Ok(BagPrediction {
                probs,
                predicted,
                instance_uncertainties: None,
                instance_post_logits: None,
            })
        }
        InferenceMode::SoftUbix => {
            let us = bag_uncertainties(bag, params.measure);
            let post = post_ubix_logits(bag, &us, params)?;
            let post_bag = BagLogits::new(bag.bag_id(), post.clone(), bag.label())?;
            let (probs, predicted) = predict_pooled(&mil_pool(&post_bag));
            Ok(BagPrediction {
                probs,
                predicted,
                instance_uncertainties: Some(us),
                instance_post_logits: Some(post),
            })
        }
        InferenceMode::HardUbix => {
            let us = bag_uncertainties(bag, params.measure);
            let pruned = hard_prune(bag, &us, params.tau)?;
            let (probs, predicted) = predict_pooled(&mil_pool(&pruned));
            Ok(BagPrediction {
                probs,
                predicted,
                instance_uncertainties: Some(us),
                instance_post_logits: None,
            })
        }
    }
}

/// Pooled post-gating logits without materializing the gated instances;
/// value-identical to `post_ubix_logits` + `mil_pool`.
fn soft_pooled(
    bag: &BagLogits,
    uncertainties: &[f64],
    chi: &[f64],
    delta: f64,
    gamma_hat: f64,
) -> PooledLogits {
    let (m, c) = bag.shape();
    let mut pooled = vec![vec![f64::NEG_INFINITY; c]; m];
    for (inst, &u) in bag.instances().iter().zip(uncertainties) {
        let g = gate(delta, u, gamma_hat);
        for (out_row, in_row) in pooled.iter_mut().zip(inst.values()) {
            for ((slot, &h), &chi_c) in out_row.iter_mut().zip(in_row).zip(chi) {
                let v = transform_with_gate(h, chi_c, g);
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    PooledLogits::new(pooled).expect("gated logits are finite")
}

fn hard_pooled(bag: &BagLogits, uncertainties: &[f64], tau: f64) -> PooledLogits {
    let (m, c) = bag.shape();
    let kept = retained_indices(uncertainties, tau);
    let mut pooled = vec![vec![f64::NEG_INFINITY; c]; m];
    for &i in &kept {
        for (out_row, in_row) in pooled.iter_mut().zip(bag.instances()[i].values()) {
            for (slot, &h) in out_row.iter_mut().zip(in_row) {
                if h > *slot {
                    *slot = h;
                }
            }
        }
    }
    PooledLogits::new(pooled).expect("raw logits are finite")
}

fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fits the logit floors and uncertainty range on the validation set, then
/// grid-searches the gate hyperparameters by exhaustive evaluation of
/// validation kappa_w in the requested mode.
///
/// Mode specifics:
/// - soft: searches (delta, gamma); ties resolved toward smaller delta,
///   then smaller gamma. `tau` is filled with `u_max` (the weakest
///   threshold in the grid) since soft inference never reads it.
/// - hard: searches tau over validation-uncertainty percentiles; ties
///   resolved toward smaller tau. `delta` is recorded as infinite and
///   `gamma` is back-solved so the gate center equals tau, making the
///   bundle behave consistently if later used for soft inference.
/// - plain MIL: no search; gate fields are filled with the smallest grid
///   values and are ignored by plain inference anyway.
pub fn calibrate(
    validation: &[BagLogits],
    measure: UncertaintyMeasure,
    mode: InferenceMode,
) -> Result<UbixParams> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (m, c) = check_uniform_shapes(validation, "calibrate")?;

    let unlabeled: Vec<String> = validation
        .iter()
        .filter(|b| b.label().is_none())
        .map(|b| b.bag_id().to_string())
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::UnlabeledBags { bag_ids: unlabeled });
    }
    let labels: Vec<ClassIndex> = validation.iter().map(|b| b.label().unwrap()).collect();
    let distinct = labels.iter().map(|l| l.get()).collect::<BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::DegenerateLabels { distinct });
    }

    let chi = fit_chi(validation)?;
    let uncertainties: Vec<Vec<f64>> = validation
        .par_iter()
        .map(|bag| bag_uncertainties(bag, measure))
        .collect();
    let mut flat: Vec<f64> = uncertainties.iter().flatten().copied().collect();
    flat.sort_by(f64::total_cmp);
    let (u_min, u_max) = (flat[0], flat[flat.len() - 1]);

    let kappa_of = |preds: &[ClassIndex]| {
        quadratic_weighted_kappa(&labels, preds, c).unwrap_or(f64::NEG_INFINITY)
    };

    let (delta, gamma, tau) = match mode {
        InferenceMode::PlainMil => (
            DELTA_GRID[0],
            gamma_grid()[0],
            percentile_of_sorted(&flat, 0.0),
        ),
        InferenceMode::SoftUbix => {
            let grid: Vec<(f64, f64)> = DELTA_GRID
                .iter()
                .flat_map(|&d| gamma_grid().into_iter().map(move |g| (d, g)))
                .collect();
            let scores: Vec<f64> = grid
                .par_iter()
                .map(|&(d, g)| {
                    let gh = gamma_hat(g, u_min, u_max);
                    let preds: Vec<ClassIndex> = validation
                        .iter()
                        .zip(&uncertainties)
                        .map(|(bag, us)| predict_pooled(&soft_pooled(bag, us, &chi, d, gh)).1)
                        .collect();
                    kappa_of(&preds)
                })
                .collect();
            let best = argmax_first(&scores);
            (grid[best].0, grid[best].1, u_max)
        }
        InferenceMode::HardUbix => {
            let taus = tau_grid(&flat);
            let scores: Vec<f64> = taus
                .par_iter()
                .map(|&t| {
                    let preds: Vec<ClassIndex> = validation
                        .iter()
                        .zip(&uncertainties)
                        .map(|(bag, us)| predict_pooled(&hard_pooled(bag, us, t)).1)
                        .collect();
                    kappa_of(&preds)
                })
                .collect();
            let t = taus[argmax_first(&scores)];
            let span = u_min + u_max;
            let g = if span > 0.0 { t / span } else { 0.0 };
            (f64::INFINITY, g, t)
        }
    };

    Ok(UbixParams {
        measure,
        delta,
        gamma,
        tau,
        chi,
        u_min,
        u_max,
        n_classes: c,
        n_models: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn transform_hand_example() {
        let g = ubix_transform(3.0, 2.0, -2.0, 5.0, 1.0);
        assert_abs_diff_eq!(g, -1.96653, epsilon = 1e-5);
    }

    #[test]
    fn transform_midpoint_identity() {
        let mut rng = substream(11, &[0]);
        for _ in 0..1000 {
            let h: f64 = rng.gen_range(-50.0..50.0);
            let chi: f64 = rng.gen_range(-50.0..50.0);
            let delta: f64 = rng.gen_range(0.1..10_000.0);
            let gh: f64 = rng.gen_range(-5.0..5.0);
            let g = ubix_transform(h, gh, chi, delta, gh);
            assert_abs_diff_eq!(g, (h + chi) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_limits_saturate() {
        // Far below the center the gate is fully open, far above fully
        // closed; with a steep gate both saturate exactly.
        assert_eq!(ubix_transform(3.0, -1000.0, -2.0, 100.0, 0.0), 3.0);
        assert_eq!(ubix_transform(3.0, 1000.0, -2.0, 100.0, 0.0), -2.0);
        // Infinite delta is a step closing at the center itself.
        assert_eq!(ubix_transform(3.0, 0.5, -2.0, f64::INFINITY, 0.5), -2.0);
        assert_eq!(ubix_transform(3.0, 0.4999, -2.0, f64::INFINITY, 0.5), 3.0);
    }

    #[test]
    fn transform_segment_and_monotonicity() {
        let mut rng = substream(12, &[0]);
        for _ in 0..200 {
            let h: f64 = rng.gen_range(-10.0..10.0);
            let chi: f64 = rng.gen_range(-10.0..10.0);
            let delta: f64 = rng.gen_range(0.5..500.0);
            let gh: f64 = rng.gen_range(-2.0..2.0);
            let mut prev = None;
            for step in 0..40 {
                let u = -4.0 + step as f64 * 0.2;
                let g = ubix_transform(h, u, chi, delta, gh);
                assert!(g >= h.min(chi) - 1e-12 && g <= h.max(chi) + 1e-12);
                if let Some(p) = prev {
                    if h > chi {
                        assert!(g <= p + 1e-12);
                    } else {
                        assert!(g >= p - 1e-12);
                    }
                }
                prev = Some(g);
            }
        }
    }

    fn staged_instance(stage: usize, n_classes: usize, wobble: f64) -> InstanceLogits {
        let mut rows = Vec::new();
        for member in 0..2 {
            let mut row = vec![0.0; n_classes];
            row[stage - 1] = 3.0 + 0.6 * stage as f64 + wobble * member as f64;
            rows.push(row);
        }
        InstanceLogits::new(rows).unwrap()
    }

    fn staged_bag(id: &str, label: usize, n_classes: usize) -> BagLogits {
        let stages = [1, label.saturating_sub(1).max(1), label];
        let instances = stages
            .iter()
            .map(|&s| staged_instance(s, n_classes, 0.05))
            .collect();
        BagLogits::new(id, instances, Some(ClassIndex::new(label, n_classes).unwrap())).unwrap()
    }

    fn clean_validation() -> Vec<BagLogits> {
        (0..9)
            .map(|i| staged_bag(&format!("val-{i}"), 1 + i % 3, 5))
            .collect()
    }

    #[test]
    fn fit_chi_minima() {
        let instances = vec![
            InstanceLogits::new(vec![vec![-1.0, 9.0]]).unwrap(),
            InstanceLogits::new(vec![vec![2.0, 7.0]]).unwrap(),
            InstanceLogits::new(vec![vec![0.5, 8.0]]).unwrap(),
        ];
        let bag = BagLogits::new("b", instances, None).unwrap();
        assert_eq!(fit_chi(&[bag.clone()]).unwrap(), vec![-1.0, 7.0]);
        // Duplicating a bag cannot move a minimum.
        assert_eq!(fit_chi(&[bag.clone(), bag]).unwrap(), vec![-1.0, 7.0]);

        let single = BagLogits::new(
            "s",
            vec![InstanceLogits::new(vec![vec![0.25, -3.5]]).unwrap()],
            None,
        )
        .unwrap();
        assert_eq!(fit_chi(&[single]).unwrap(), vec![0.25, -3.5]);
        assert!(matches!(fit_chi(&[]), Err(Error::EmptyValidation)));
    }

    #[test]
    fn fit_u_range_extremes() {
        let bags = clean_validation();
        let (lo, hi) = fit_u_range(&bags, UncertaintyMeasure::Entropy).unwrap();
        let all: Vec<f64> = bags
            .iter()
            .flat_map(|b| bag_uncertainties(b, UncertaintyMeasure::Entropy))
            .collect();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (min, max));
        assert!(lo <= hi);

        let identical = BagLogits::new(
            "i",
            vec![staged_instance(2, 5, 0.0); 4],
            None,
        )
        .unwrap();
        let (lo, hi) = fit_u_range(&[identical], UncertaintyMeasure::Entropy).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn gamma_hat_arithmetic() {
        assert_abs_diff_eq!(gamma_hat(1.05, 0.0, 2.0), 2.1, epsilon = 1e-12);
        assert_eq!(gamma_hat(0.0, 0.3, 0.9), 0.0);
        assert_eq!(gamma_hat(1.0, 0.7, 0.7), 1.4);
    }

    fn two_instance_bag() -> (BagLogits, Vec<f64>) {
        let a = InstanceLogits::new(vec![vec![1.0, 0.5, -0.5]]).unwrap();
        let b = InstanceLogits::new(vec![vec![2.0, 1.5, 0.5]]).unwrap();
        let bag = BagLogits::new("two", vec![a, b], None).unwrap();
        (bag, vec![0.1, 5.0])
    }

    #[test]
    fn hard_prune_rules() {
        let (bag, us) = two_instance_bag();
        // Threshold between the two -> only the certain instance stays.
        let pruned = hard_prune(&bag, &us, 2.20).unwrap();
        assert_eq!(pruned.n_instances(), 1);
        assert_eq!(pruned.instances()[0], bag.instances()[0]);
        // Threshold above both -> unchanged.
        let pruned = hard_prune(&bag, &us, 10.0).unwrap();
        assert_eq!(pruned.instances(), bag.instances());
        // Threshold at/below all -> fallback keeps the min-U instance.
        let pruned = hard_prune(&bag, &us, 0.05).unwrap();
        assert_eq!(pruned.n_instances(), 1);
        assert_eq!(pruned.instances()[0], bag.instances()[0]);
        // Fallback tie-break: lowest index.
        let pruned = hard_prune(&bag, &[0.3, 0.3], 0.1).unwrap();
        assert_eq!(pruned.instances()[0], bag.instances()[0]);
    }

    fn params_for(bag: &BagLogits, measure: UncertaintyMeasure) -> UbixParams {
        let (m, c) = bag.shape();
        UbixParams {
            measure,
            delta: 5.0,
            gamma: 1.0,
            tau: 1.0,
            chi: vec![-3.0; c],
            u_min: 0.0,
            u_max: 1.0,
            n_classes: c,
            n_models: m,
        }
    }

    #[test]
    fn infer_open_gate_matches_plain() {
        let bag = staged_bag("b", 3, 5);
        let mut params = params_for(&bag, UncertaintyMeasure::Entropy);
        // Center the gate far above any uncertainty: gates saturate to 1.
        params.u_min = 0.0;
        params.u_max = 2000.0;
        params.gamma = 1.0;
        let soft = infer(&bag, &params, InferenceMode::SoftUbix).unwrap();
        let plain = infer(&bag, &params, InferenceMode::PlainMil).unwrap();
        assert_eq!(soft.predicted, plain.predicted);
        let post = soft.instance_post_logits.unwrap();
        for (inst, orig) in post.iter().zip(bag.instances()) {
            for (prow, orow) in inst.values().iter().zip(orig.values()) {
                for (p, o) in prow.iter().zip(orow) {
                    assert_abs_diff_eq!(p, o, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn infer_single_instance_hard_is_plain() {
        let bag = BagLogits::new("one", vec![staged_instance(4, 5, 0.05)], None).unwrap();
        let mut params = params_for(&bag, UncertaintyMeasure::Entropy);
        params.tau = -1.0; // everything excluded; fallback keeps the instance
        let hard = infer(&bag, &params, InferenceMode::HardUbix).unwrap();
        let plain = infer(&bag, &params, InferenceMode::PlainMil).unwrap();
        assert_eq!(hard.predicted, plain.predicted);
        assert_eq!(hard.probs, plain.probs);
    }

    #[test]
    fn infer_suppressed_instance_floors_to_chi() {
        // Instance 2 dominates every class but is far above the gate
        // center; with a steep gate the bag logits become max(h1, chi).
        let (bag, us) = two_instance_bag();
        let mut params = params_for(&bag, UncertaintyMeasure::Entropy);
        params.delta = 1e6;
        params.chi = vec![-3.0, 0.9, 0.0];
        params.u_min = 0.0;
        params.u_max = us[0] * 2.0; // gamma_hat = 0.2, between the two
        params.gamma = 1.0;

        let gh = params.gamma_hat();
        // Drive the suppression with explicit uncertainties to keep the
        // construction independent of the measure values.
        let post = post_ubix_logits(&bag, &[gh - 1.0, gh + 1.0], &params).unwrap();
        let post_bag = BagLogits::new("two", post, None).unwrap();
        let pooled = mil_pool(&post_bag);
        let h1 = bag.instances()[0].values();
        for (ci, &chi_c) in params.chi.iter().enumerate() {
            assert_abs_diff_eq!(
                pooled.values()[0][ci],
                h1[0][ci].max(chi_c),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn plain_mil_ignores_measure() {
        let bag = staged_bag("b", 2, 5);
        let base = infer(
            &bag,
            &params_for(&bag, UncertaintyMeasure::Entropy),
            InferenceMode::PlainMil,
        )
        .unwrap();
        for measure in UncertaintyMeasure::ALL {
            let other = infer(&bag, &params_for(&bag, measure), InferenceMode::PlainMil).unwrap();
            assert_eq!(base, other);
        }
        assert!(base.instance_uncertainties.is_none());
    }

    #[test]
    fn calibrate_clean_validation_keeps_plain_performance() {
        let val = clean_validation();
        let params = calibrate(&val, UncertaintyMeasure::OrdinalEntropy, InferenceMode::SoftUbix)
            .unwrap();
        assert!(params.validate().is_ok());
        assert!(DELTA_GRID.contains(&params.delta));
        assert!((-0.5..=1.5).contains(&params.gamma));

        let labels: Vec<ClassIndex> = val.iter().map(|b| b.label().unwrap()).collect();
        let soft: Vec<ClassIndex> = val
            .iter()
            .map(|b| infer(b, &params, InferenceMode::SoftUbix).unwrap().predicted)
            .collect();
        let plain: Vec<ClassIndex> = val
            .iter()
            .map(|b| infer(b, &params, InferenceMode::PlainMil).unwrap().predicted)
            .collect();
        let k_soft = quadratic_weighted_kappa(&labels, &soft, 5).unwrap();
        let k_plain = quadratic_weighted_kappa(&labels, &plain, 5).unwrap();
        assert!(k_soft >= k_plain - 1e-12, "soft {k_soft} vs plain {k_plain}");
        assert_eq!(k_plain, 1.0);
    }

    #[test]
    fn calibrate_is_deterministic() {
        let val = clean_validation();
        let a = calibrate(&val, UncertaintyMeasure::Entropy, InferenceMode::SoftUbix).unwrap();
        let b = calibrate(&val, UncertaintyMeasure::Entropy, InferenceMode::SoftUbix).unwrap();
        assert_eq!(a, b);
        let ha = calibrate(&val, UncertaintyMeasure::Entropy, InferenceMode::HardUbix).unwrap();
        let hb = calibrate(&val, UncertaintyMeasure::Entropy, InferenceMode::HardUbix).unwrap();
        assert_eq!(ha, hb);
        assert!(ha.delta.is_infinite());
    }

    #[test]
    fn calibrate_hard_excludes_corrupt_instance() {
        let mut val = clean_validation();
        // Poison one bag with an instance whose members disagree across
        // the full class range: it boosts class 5 and breaks plain MIL.
        let corrupt = InstanceLogits::new(vec![
            vec![0.0, 0.0, 0.0, 0.0, 10.0],
            vec![10.0, 0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let poisoned = {
            let b = &val[0];
            let mut instances = b.instances().to_vec();
            instances.push(corrupt);
            BagLogits::new(b.bag_id(), instances, b.label()).unwrap()
        };
        val[0] = poisoned;

        let labels: Vec<ClassIndex> = val.iter().map(|b| b.label().unwrap()).collect();
        let params =
            calibrate(&val, UncertaintyMeasure::OrdinalEntropy, InferenceMode::HardUbix).unwrap();
        let hard: Vec<ClassIndex> = val
            .iter()
            .map(|b| infer(b, &params, InferenceMode::HardUbix).unwrap().predicted)
            .collect();
        let plain: Vec<ClassIndex> = val
            .iter()
            .map(|b| infer(b, &params, InferenceMode::PlainMil).unwrap().predicted)
            .collect();
        let k_hard = quadratic_weighted_kappa(&labels, &hard, 5).unwrap();
        let k_plain = quadratic_weighted_kappa(&labels, &plain, 5).unwrap();
        assert_eq!(k_hard, 1.0);
        assert!(k_plain < 1.0);
    }

    #[test]
    fn calibrate_rejects_bad_validation() {
        assert!(matches!(
            calibrate(&[], UncertaintyMeasure::Entropy, InferenceMode::SoftUbix),
            Err(Error::EmptyValidation)
        ));

        let unlabeled =
            BagLogits::new("u", vec![staged_instance(1, 5, 0.05)], None).unwrap();
        assert!(matches!(
            calibrate(&[unlabeled], UncertaintyMeasure::Entropy, InferenceMode::SoftUbix),
            Err(Error::UnlabeledBags { .. })
        ));

        let same: Vec<BagLogits> = (0..3).map(|i| staged_bag(&format!("s{i}"), 2, 5)).collect();
        assert!(matches!(
            calibrate(&same, UncertaintyMeasure::Entropy, InferenceMode::SoftUbix),
            Err(Error::DegenerateLabels { distinct: 1 })
        ));
    }

    #[test]
    fn params_serde_round_trip() {
        let params = UbixParams {
            measure: UncertaintyMeasure::OrdinalEntropy,
            delta: 5.0,
            gamma: 1.05,
            tau: 2.20,
            chi: vec![-1.0, -2.0, -3.0, -4.0, -5.0],
            u_min: 0.01,
            u_max: 2.5,
            n_classes: 5,
            n_models: 5,
        };
        let json = serde_json::to_string(&params).unwrap();
        assert_eq!(serde_json::from_str::<UbixParams>(&json).unwrap(), params);

        let hard = UbixParams {
            delta: f64::INFINITY,
            ..params
        };
        let json = serde_json::to_string(&hard).unwrap();
        assert!(json.contains("\"delta\":\"inf\""));
        assert_eq!(serde_json::from_str::<UbixParams>(&json).unwrap(), hard);
    }

    #[test]
    fn params_validation_catches_nonsense() {
        let bag = staged_bag("b", 2, 5);
        let good = params_for(&bag, UncertaintyMeasure::Entropy);
        assert!(good.validate().is_ok());
        let bad = UbixParams { delta: -1.0, ..good.clone() };
        assert!(bad.validate().is_err());
        let bad = UbixParams { u_min: 2.0, u_max: 1.0, ..good.clone() };
        assert!(bad.validate().is_err());
        let bad = UbixParams { chi: vec![0.0; 3], ..good };
        assert!(bad.validate().is_err());
    }
}
