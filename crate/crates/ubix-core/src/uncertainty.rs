//! Instance-level uncertainty measures from ensemble probabilities.
//!
//! Five measures are supported: maximum class probability, mean class
//! variance, ordinal variance, entropy, and ordinal entropy. The ordinal
//! variants weight disagreement by distance on the class scale, so a
//! 50/50 split between stages 1 and 5 scores higher than between stages
//! 1 and 2.
//!
//! [`raw_score`] evaluates the measures literally (maximum class
//! probability is a confidence there); [`uncertainty`] orients every
//! measure so that larger always means more uncertain.

use crate::error::{Error, Result};
use crate::mil::softmax;
use crate::types::{InstanceLogits, ProbabilityVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMeasure {
    MaxClassProbability,
    MeanClassVariance,
    OrdinalVariance,
    Entropy,
    OrdinalEntropy,
}

impl UncertaintyMeasure {
    pub const ALL: [UncertaintyMeasure; 5] = [
        UncertaintyMeasure::MaxClassProbability,
        UncertaintyMeasure::MeanClassVariance,
        UncertaintyMeasure::OrdinalVariance,
        UncertaintyMeasure::Entropy,
        UncertaintyMeasure::OrdinalEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyMeasure::MaxClassProbability => "max-class-probability",
            UncertaintyMeasure::MeanClassVariance => "mean-class-variance",
            UncertaintyMeasure::OrdinalVariance => "ordinal-variance",
            UncertaintyMeasure::Entropy => "entropy",
            UncertaintyMeasure::OrdinalEntropy => "ordinal-entropy",
        }
    }

    /// Whether the measure weights disagreement by class distance.
    pub fn is_ordinal(self) -> bool {
        matches!(
            self,
            UncertaintyMeasure::OrdinalVariance | UncertaintyMeasure::OrdinalEntropy
        )
    }
}

impl fmt::Display for UncertaintyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertaintyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UncertaintyMeasure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!(
                    "unknown uncertainty measure '{s}' (expected one of: {})",
                    UncertaintyMeasure::ALL.map(|m| m.as_str()).join(", ")
                ),
            })
    }
}

/// Oriented instance uncertainty: larger always means more uncertain,
/// and the value is non-negative for every measure.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct UncertaintyScore(f64);

impl UncertaintyScore {
    pub fn new(value: f64) -> Self {
        Self(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Softmax of each ensemble member's logits, one row per member.
pub fn member_probabilities(inst: &InstanceLogits) -> Vec<ProbabilityVector> {
    inst.values()
        .iter()
        .map(|row| softmax(row).expect("instance logits are finite"))
        .collect()
}

fn mean_probabilities(members: &[ProbabilityVector]) -> Vec<f64> {
    let n_classes = members[0].len();
    let mut mu = vec![0.0f64; n_classes];
    for p in members {
        for (a, v) in mu.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    let m = members.len() as f64;
    for a in mu.iter_mut() {
        *a /= m;
    }
    mu
}

/// `x ln x` with the 0 log 0 := 0 convention.
fn x_ln_x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Literal value of the selected measure on member probabilities `p[m][c]`.
/// Natural logarithm throughout; variances are population variances
/// (divide by M). Maximum class probability is returned as-is, i.e. as a
/// confidence.
pub fn raw_score(measure: UncertaintyMeasure, members: &[ProbabilityVector]) -> f64 {
    debug_assert!(!members.is_empty());
    let n_models = members.len() as f64;
    let n_classes = members[0].len();
    match measure {
        UncertaintyMeasure::MaxClassProbability => mean_probabilities(members)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
        UncertaintyMeasure::MeanClassVariance => {
            let mu = mean_probabilities(members);
            let mut total = 0.0;
            for (c, mu_c) in mu.iter().enumerate() {
                let var_c: f64 = members
                    .iter()
                    .map(|p| {
                        let d = p.values()[c] - mu_c;
                        d * d
                    })
                    .sum::<f64>()
                    / n_models;
                total += var_c;
            }
            total / n_classes as f64
        }
        UncertaintyMeasure::OrdinalVariance => {
            // q_m = sum_c (c - 1) p[m][c], then the population variance of q.
            let q: Vec<f64> = members
                .iter()
                .map(|p| {
                    p.values()
                        .iter()
                        .enumerate()
                        .map(|(c, v)| c as f64 * v)
                        .sum()
                })
                .collect();
            let mean_q: f64 = q.iter().sum::<f64>() / n_models;
            q.iter().map(|v| (v - mean_q) * (v - mean_q)).sum::<f64>() / n_models
        }
        UncertaintyMeasure::Entropy => {
            -mean_probabilities(members).into_iter().map(x_ln_x).sum::<f64>()
        }
        UncertaintyMeasure::OrdinalEntropy => {
            // Sum of binary entropies over the C - 1 cumulative splits.
            let mu = mean_probabilities(members);
            let mut total = 0.0;
            let mut below = 0.0;
            for mu_c in &mu[..n_classes - 1] {
                below += mu_c;
                let above = 1.0 - below;
                total -= x_ln_x(below) + x_ln_x(above.max(0.0));
            }
            total
        }
    }
}

/// Oriented uncertainty of an instance. Maximum class probability is
/// flipped to `1 - confidence`; every other measure passes through, so
/// larger always means more uncertain.
pub fn uncertainty(measure: UncertaintyMeasure, inst: &InstanceLogits) -> UncertaintyScore {
    let members = member_probabilities(inst);
    let raw = raw_score(measure, &members);
    let oriented = match measure {
        UncertaintyMeasure::MaxClassProbability => 1.0 - raw,
        _ => raw,
    };
    // Guard against -0.0 and tiny negative rounding residue.
    UncertaintyScore::new(if oriented <= 0.0 { 0.0 } else { oriented })
}
