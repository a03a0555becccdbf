//! Domain types shared across the crate.
//!
//! Logit tensors follow the layout `[instance][ensemble member][class]`.
//! Class labels are 1-based ordinal stages; ensemble members and instances
//! are 0-based positions.

use crate::error::{Error, Result};
use std::fmt;

/// Tolerance for the "probabilities sum to one" invariant.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// A 1-based ordinal class label in `1..=C`. Stage `c + 1` is more severe
/// than stage `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassIndex(usize);

impl ClassIndex {
    pub fn new(value: usize, n_classes: usize) -> Result<Self> {
        if value < 1 || value > n_classes {
            return Err(Error::InvalidClass { value, n_classes });
        }
        Ok(Self(value))
    }

    /// The 1-based label value.
    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based position for indexing into `[C]`-shaped arrays.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_logit_matrix(values: &[Vec<f64>], context: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidShape {
            reason: format!("{context}: at least one ensemble member required"),
        });
    }
    let n_classes = values[0].len();
    if n_classes < 2 {
        return Err(Error::InvalidShape {
            reason: format!("{context}: at least two classes required, found {n_classes}"),
        });
    }
    for row in values {
        if row.len() != n_classes {
            return Err(Error::InvalidShape {
                reason: format!("{context}: ragged rows ({} vs {n_classes})", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

/// Per-instance logits `h[m][c]` for every ensemble member and class.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLogits {
    values: Vec<Vec<f64>>,
}

impl InstanceLogits {
    /// `values[m][c]`: rows are ensemble members, columns are classes.
    /// Requires `M >= 1`, `C >= 2`, rectangular and finite.
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        check_logit_matrix(&values, "instance logits")?;
        Ok(Self { values })
    }

    pub fn n_models(&self) -> usize {
        self.values.len()
    }

    pub fn n_classes(&self) -> usize {
        self.values[0].len()
    }

    pub fn member(&self, m: usize) -> &[f64] {
        &self.values[m]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// A labeled bag of instance logits: the only thing the core needs from a
/// classifier. `label` is the bag-level stage when known.
#[derive(Debug, Clone, PartialEq)]
pub struct BagLogits {
    bag_id: String,
    instances: Vec<InstanceLogits>,
    label: Option<ClassIndex>,
}

impl BagLogits {
    pub fn new(
        bag_id: impl Into<String>,
        instances: Vec<InstanceLogits>,
        label: Option<ClassIndex>,
    ) -> Result<Self> {
        let bag_id = bag_id.into();
        if instances.is_empty() {
            return Err(Error::EmptyBag { bag_id });
        }
        let (m, c) = (instances[0].n_models(), instances[0].n_classes());
        for inst in &instances[1..] {
            if inst.n_models() != m || inst.n_classes() != c {
                return Err(Error::ShapeMismatch {
                    context: format!("bag '{bag_id}'"),
                    expected_m: m,
                    expected_c: c,
                    found_m: inst.n_models(),
                    found_c: inst.n_classes(),
                });
            }
        }
        if let Some(label) = label {
            // Re-validate against this bag's class count.
            ClassIndex::new(label.get(), c)?;
        }
        Ok(Self {
            bag_id,
            instances,
            label,
        })
    }

    pub fn bag_id(&self) -> &str {
        &self.bag_id
    }

    pub fn instances(&self) -> &[InstanceLogits] {
        &self.instances
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn label(&self) -> Option<ClassIndex> {
        self.label
    }

    /// `(M, C)` shared by every instance in the bag.
    pub fn shape(&self) -> (usize, usize) {
        (self.instances[0].n_models(), self.instances[0].n_classes())
    }
}

/// A discrete distribution over the `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    values: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProbability {
                reason: "empty vector".to_string(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidProbability {
                reason: "entries must be finite and within [0, 1]".to_string(),
            });
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::InvalidProbability {
                reason: format!("entries sum to {sum}, expected 1"),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, class: ClassIndex) -> f64 {
        self.values[class.index()]
    }
}

/// Bag-level logits `z[m][c]` after MIL pooling: each entry is the maximum
/// of the corresponding instance entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledLogits {
    values: Vec<Vec<f64>>,
}

impl PooledLogits {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        check_logit_matrix(&values, "pooled logits")?;
        Ok(Self { values })
    }

    pub fn n_models(&self) -> usize {
        self.values.len()
    }

    pub fn n_classes(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Result of bag-level inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub probs: ProbabilityVector,
    pub predicted: ClassIndex,
    /// Oriented uncertainty per instance, in bag order.
    pub instance_uncertainties: Option<Vec<f64>>,
    /// Post-gating instance logits, populated by soft UBIX inference.
    pub instance_post_logits: Option<Vec<InstanceLogits>>,
}
