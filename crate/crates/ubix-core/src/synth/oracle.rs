//! Hand-crafted "oracle" ensemble that plays the role of a trained
//! classifier ensemble on the synthetic volumes.
//!
//! Each member scores an instance by distance to per-stage feature
//! prototypes (fitted from reference renders), with per-member prototype
//! jitter providing ensemble disagreement near stage boundaries.
//! Features are standardized by the pooled within-stage spread, so
//! distances read as "how many noise units from each stage". Instances
//! whose features leave the clean envelope (far from every prototype)
//! are blended towards "haywire" logits: a confidently wrong,
//! member-dependent draw keyed by the image content. That mimics how
//! real ensembles behave on corrupted inputs — confidently wrong
//! individually, mutually inconsistent — which is exactly the regime
//! instance exclusion must handle.

use super::{render_instance, Image, SyntheticVolume, BAND_FRAC_HI, BAND_FRAC_LO};
use crate::error::{Error, Result};
use crate::metrics::percentile_of_sorted;
use crate::rng::{fnv1a_64, sample_normal, substream, tags};
use crate::types::{BagLogits, InstanceLogits};
use rand::Rng;

/// Dimensionality of the instance feature vector.
pub const N_FEATURES: usize = 5;

const REFS_PER_STAGE: usize = 60;

/// Haywire favored-class logits sit above any clean pooled peak, so one
/// corrupted instance is enough to hijack plain max-pooling.
const HAYWIRE_BOOST_LO: f64 = 10.0;
const HAYWIRE_BOOST_HI: f64 = 14.0;
const HAYWIRE_NOISE: f64 = 2.0;

/// Summary features of an instance image: bright-weighted row centroid
/// of the band (normalized by height), p90-p10 pixel contrast, a bump
/// statistic (mean downward deflection of the per-column band centroid
/// from its calm baseline — grows with bump count and amplitude, so it
/// tracks the latent stage), pixel mean, and pixel standard deviation.
pub fn extract_features(image: &Image) -> [f64; N_FEATURES] {
    let (h, w) = (image.height(), image.width());
    let n = (h * w) as f64;
    let denom = (h.saturating_sub(1)).max(1) as f64;

    let mean = image.data().iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&p| {
            let d = f64::from(p) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();

    // Brightness-above-mean weights concentrate the centroids on the band.
    let weight = |p: f32| {
        let d = (f64::from(p) - mean).max(0.0);
        d * d
    };
    let mut wsum = 0.0;
    let mut wrow = 0.0;
    let mut col_centroids = Vec::with_capacity(w);
    for col in 0..w {
        let mut csum = 0.0;
        let mut crow = 0.0;
        for row in 0..h {
            let wt = weight(image.get(row, col));
            csum += wt;
            crow += wt * row as f64;
        }
        wsum += csum;
        wrow += crow;
        col_centroids.push(if csum > 0.0 {
            crow / csum
        } else {
            0.5 * denom
        });
    }
    let row_centroid = if wsum > 0.0 { wrow / wsum } else { 0.5 * denom } / denom;

    // Bumps push the band downward (towards larger rows), so the mean
    // column centroid sits below the calm baseline (10th percentile).
    let mut sorted_cols = col_centroids.clone();
    sorted_cols.sort_by(f64::total_cmp);
    let baseline = percentile_of_sorted(&sorted_cols, 10.0);
    let col_mean = col_centroids.iter().sum::<f64>() / w as f64;
    let bump_stat = (col_mean - baseline) / denom;

    let mut sorted: Vec<f64> = image.data().iter().map(|&p| f64::from(p)).collect();
    sorted.sort_by(f64::total_cmp);
    let contrast = percentile_of_sorted(&sorted, 90.0) - percentile_of_sorted(&sorted, 10.0);

    [row_centroid, contrast, bump_stat, mean, std]
}

fn image_hash(image: &Image) -> u64 {
    let mut bytes = Vec::with_capacity(image.data().len() * 4);
    for &p in image.data() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a_64(&bytes)
}

/// Oracle shape and behavior knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub n_classes: usize,
    pub n_models: usize,
    pub seed: u64,
    /// Linear preference for higher stages, ensuring pooled argmax tracks
    /// the maximum stage in a bag.
    pub stage_bias: f64,
    /// Weight on squared prototype distance in the logits.
    pub dist_scale: f64,
    /// Per-member prototype jitter, in within-stage noise units.
    pub member_jitter: f64,
    /// Envelope distance (max per-dim deviation from the nearest stage
    /// prototype) below which an instance is fully in distribution.
    pub ood_lo: f64,
    /// Envelope distance above which the logits are fully haywire.
    pub ood_hi: f64,
}

impl OracleConfig {
    pub fn new(n_classes: usize, n_models: usize, seed: u64) -> Self {
        Self {
            n_classes,
            n_models,
            seed,
            stage_bias: 0.8,
            dist_scale: 0.5,
            member_jitter: 0.5,
            ood_lo: 4.5,
            ood_hi: 6.5,
        }
    }
}

/// A fitted oracle ensemble. Logits are a pure function of the image
/// pixels and the config, so repeated scoring is bit-identical.
#[derive(Debug, Clone)]
pub struct OracleEnsemble {
    config: OracleConfig,
    feature_mean: [f64; N_FEATURES],
    /// Pooled within-stage standard deviation per feature.
    feature_std: [f64; N_FEATURES],
    /// Unjittered per-stage prototypes in standardized space; also the
    /// clean envelope used for the atypicality score.
    stage_prototypes: Vec<[f64; N_FEATURES]>,
    /// Indexed `[member][stage - 1]`.
    member_prototypes: Vec<Vec<[f64; N_FEATURES]>>,
}

impl OracleEnsemble {
    /// Fits stage prototypes from reference renders at the given image
    /// size, then derives the jittered per-member copies.
    pub fn fit(config: &OracleConfig, height: usize, width: usize) -> Result<Self> {
        if config.n_classes < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("oracle needs n_classes >= 2, got {}", config.n_classes),
            });
        }
        if config.n_models == 0 {
            return Err(Error::InvalidConfig {
                reason: "oracle needs n_models >= 1".into(),
            });
        }
        if config.ood_hi <= config.ood_lo {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "oracle ood thresholds must satisfy lo < hi, got [{}, {}]",
                    config.ood_lo, config.ood_hi
                ),
            });
        }

        let mut per_stage: Vec<Vec<[f64; N_FEATURES]>> = Vec::with_capacity(config.n_classes);
        for stage in 1..=config.n_classes {
            let feats = (0..REFS_PER_STAGE)
                .map(|rep| {
                    let mut rng =
                        substream(config.seed, &[tags::ORACLE_REF, stage as u64, rep as u64]);
                    let band_frac = rng.gen_range(BAND_FRAC_LO..BAND_FRAC_HI);
                    extract_features(&render_instance(&mut rng, stage, band_frac, height, width))
                })
                .collect();
            per_stage.push(feats);
        }

        // Raw per-stage means, global mean, and the pooled within-stage
        // spread that the feature space is normalized by.
        let total = (config.n_classes * REFS_PER_STAGE) as f64;
        let mut feature_mean = [0.0; N_FEATURES];
        let mut stage_means: Vec<[f64; N_FEATURES]> = Vec::with_capacity(config.n_classes);
        for feats in &per_stage {
            let mut mean = [0.0; N_FEATURES];
            for f in feats {
                for d in 0..N_FEATURES {
                    mean[d] += f[d] / feats.len() as f64;
                    feature_mean[d] += f[d] / total;
                }
            }
            stage_means.push(mean);
        }
        let mut feature_std = [0.0; N_FEATURES];
        for (feats, mean) in per_stage.iter().zip(&stage_means) {
            for f in feats {
                for d in 0..N_FEATURES {
                    let dev = f[d] - mean[d];
                    feature_std[d] += dev * dev / total;
                }
            }
        }
        for std in &mut feature_std {
            *std = std.sqrt().max(1e-9);
        }

        let stage_prototypes: Vec<[f64; N_FEATURES]> = stage_means
            .iter()
            .map(|mean| {
                let mut proto = [0.0; N_FEATURES];
                for d in 0..N_FEATURES {
                    proto[d] = (mean[d] - feature_mean[d]) / feature_std[d];
                }
                proto
            })
            .collect();

        let member_prototypes = (0..config.n_models)
            .map(|m| {
                stage_prototypes
                    .iter()
                    .enumerate()
                    .map(|(idx, proto)| {
                        let mut rng = substream(
                            config.seed,
                            &[tags::ORACLE_MEMBER, m as u64, (idx + 1) as u64],
                        );
                        let mut jittered = *proto;
                        for v in &mut jittered {
                            *v += config.member_jitter * sample_normal(&mut rng, 0.0, 1.0);
                        }
                        jittered
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            config: config.clone(),
            feature_mean,
            feature_std,
            stage_prototypes,
            member_prototypes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn n_models(&self) -> usize {
        self.config.n_models
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    fn standardize(&self, f: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut z = [0.0; N_FEATURES];
        for d in 0..N_FEATURES {
            z[d] = (f[d] - self.feature_mean[d]) / self.feature_std[d];
        }
        z
    }

    /// Distance from the clean envelope: the smallest, over stages, of
    /// the largest per-dimension deviation from that stage's prototype.
    /// Clean renders stay within a few noise units of their own stage;
    /// corrupted ones are far from every stage.
    fn atypicality(&self, z: &[f64; N_FEATURES]) -> f64 {
        self.stage_prototypes
            .iter()
            .map(|proto| {
                z.iter()
                    .zip(proto)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Confidently wrong, member-specific logits for far-out-of-
    /// distribution inputs, keyed by image content so repeated scoring
    /// stays deterministic.
    fn haywire_logits(&self, hash: u64, member: usize) -> Vec<f64> {
        let mut rng = substream(
            self.config.seed,
            &[tags::ORACLE_HAYWIRE, hash, member as u64],
        );
        let favored = rng.gen_range(0..self.config.n_classes);
        let boost = rng.gen_range(HAYWIRE_BOOST_LO..HAYWIRE_BOOST_HI);
        (0..self.config.n_classes)
            .map(|c| {
                if c == favored {
                    boost
                } else {
                    rng.gen_range(-HAYWIRE_NOISE..HAYWIRE_NOISE)
                }
            })
            .collect()
    }

    /// Per-member logits for one instance image.
    pub fn image_logits(&self, image: &Image) -> InstanceLogits {
        let z = self.standardize(&extract_features(image));
        let blend = ((self.atypicality(&z) - self.config.ood_lo)
            / (self.config.ood_hi - self.config.ood_lo))
            .clamp(0.0, 1.0);
        let hash = if blend > 0.0 {
            Some(image_hash(image))
        } else {
            None
        };

        let values = (0..self.config.n_models)
            .map(|m| {
                let in_dist: Vec<f64> = self.member_prototypes[m]
                    .iter()
                    .enumerate()
                    .map(|(idx, proto)| {
                        let dist2: f64 = z
                            .iter()
                            .zip(proto)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        self.config.stage_bias * idx as f64 - self.config.dist_scale * dist2
                    })
                    .collect();
                match hash {
                    Some(hash) => {
                        let haywire = self.haywire_logits(hash, m);
                        in_dist
                            .iter()
                            .zip(&haywire)
                            .map(|(i, h)| (1.0 - blend) * i + blend * h)
                            .collect()
                    }
                    None => in_dist,
                }
            })
            .collect();
        InstanceLogits::new(values).expect("oracle emits uniform M x C rows")
    }

    /// Scores every instance of a volume, carrying over bag id and label.
    pub fn volume_logits(&self, volume: &SyntheticVolume) -> Result<BagLogits> {
        let instances = volume.images.iter().map(|im| self.image_logits(im)).collect();
        BagLogits::new(volume.bag_id.clone(), instances, Some(volume.label))
    }
}
