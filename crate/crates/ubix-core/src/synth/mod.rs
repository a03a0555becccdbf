//! Synthetic volume benchmark.
//!
//! Generates small grayscale "volumes" that mimic the structure of retinal
//! OCT stacks closely enough to exercise the pipeline: each instance shows
//! a bright horizontal band over speckle background, and the number and
//! amplitude of bumps deforming the band encode the instance's latent
//! stage. Bag labels follow the MIL assumption (label = max latent stage).
//!
//! Everything is a pure function of [`GeneratorConfig`]: per-bag RNG
//! substreams make generation parallel yet bit-reproducible.

mod artifact;
mod oracle;

pub use artifact::{
    apply_artifact, apply_blinking, apply_flip, apply_noise, apply_shadow,
    select_artifact_groups, shadow_profile,
};
pub use oracle::{extract_features, OracleConfig, OracleEnsemble, N_FEATURES};

use crate::error::{Error, Result};
use crate::rng::{sample_normal, substream, tags};
use crate::types::ClassIndex;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Grayscale instance image, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape {
                reason: format!(
                    "image data has {} values, expected {height}x{width} = {}",
                    data.len(),
                    height * width
                ),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.width)
    }
}

/// The four artificial acquisition artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Blinking,
    Flip,
    Shadow,
    Noise,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Blinking,
        ArtifactKind::Flip,
        ArtifactKind::Shadow,
        ArtifactKind::Noise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Blinking => "blinking",
            ArtifactKind::Flip => "flip",
            ArtifactKind::Shadow => "shadow",
            ArtifactKind::Noise => "noise",
        }
    }

    /// Stable tag for RNG substream derivation.
    pub(crate) fn tag(self) -> u64 {
        match self {
            ArtifactKind::Blinking => 0x10,
            ArtifactKind::Flip => 0x11,
            ArtifactKind::Shadow => 0x12,
            ArtifactKind::Noise => 0x13,
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!(
                    "unknown artifact '{s}' (expected one of: {})",
                    ArtifactKind::ALL.map(|k| k.as_str()).join(", ")
                ),
            })
    }
}

/// One generated bag: instance images, their latent stages, and which
/// instances (if any) were corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVolume {
    pub bag_id: String,
    pub images: Vec<Image>,
    pub latent_stages: Vec<ClassIndex>,
    pub artifact_mask: Vec<Option<ArtifactKind>>,
    pub label: ClassIndex,
}

impl SyntheticVolume {
    pub fn n_instances(&self) -> usize {
        self.images.len()
    }
}

/// Settings for synthetic dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_bags: usize,
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub seed: u64,
    /// Fraction of bags that receive the artifact, in [0, 1].
    pub artifact_fraction: f64,
    pub artifact: Option<ArtifactKind>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_bags: 100,
            n_classes: 5,
            height: 64,
            width: 128,
            min_instances: 14,
            max_instances: 73,
            seed: 42,
            artifact_fraction: 0.0,
            artifact: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        if self.n_bags == 0 {
            return fail("n_bags must be >= 1".into());
        }
        if self.n_classes < 2 {
            return fail(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.height < 8 || self.width < 8 {
            return fail(format!(
                "image dimensions must be >= 8, got {}x{}",
                self.height, self.width
            ));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return fail(format!(
                "invalid instance-count range [{}, {}]",
                self.min_instances, self.max_instances
            ));
        }
        if !(0.0..=1.0).contains(&self.artifact_fraction) {
            return fail(format!(
                "artifact_fraction must lie in [0, 1], got {}",
                self.artifact_fraction
            ));
        }
        if self.artifact_fraction > 0.0 && self.artifact.is_none() {
            return fail("artifact_fraction > 0 requires an artifact kind".into());
        }
        Ok(())
    }
}

// Rendering constants. The band sits in the upper part of the image (so a
// vertical flip is a visible change), and bump count and amplitude both
// grow with the latent stage so the band's column-wise deformation
// separates the stages.
const BAND_FRAC_LO: f64 = 0.32;
const BAND_FRAC_HI: f64 = 0.42;
const BAND_LEVEL: f64 = 0.78;
const BAND_NOISE: f64 = 0.04;
const BACKGROUND_LEVEL: f64 = 0.06;
const BACKGROUND_NOISE: f64 = 0.025;

/// Renders a single instance of the given latent stage. Consumes RNG draws
/// in a fixed order (band jitter, bump parameters, then per-pixel noise).
pub(crate) fn render_instance(
    rng: &mut ChaCha12Rng,
    stage: usize,
    band_frac: f64,
    height: usize,
    width: usize,
) -> Image {
    let h = height as f64;
    let w = width as f64;
    let center = band_frac * h + rng.gen_range(-1.5..1.5);
    let half_thickness = (0.0625 * h).max(2.0);

    let n_bumps = stage - 1;
    let mut bumps = Vec::with_capacity(n_bumps);
    for k in 0..n_bumps {
        let spacing = w / n_bumps as f64;
        let jitter = spacing / 4.0;
        let position = (k as f64 + 0.5) * spacing + rng.gen_range(-jitter..jitter);
        let amplitude = 4.0 + 0.8 * stage as f64 + rng.gen_range(-0.5..0.5);
        let sigma = 4.0 + rng.gen_range(-0.8..0.8);
        bumps.push((position, amplitude, sigma));
    }

    // Band center per column, deformed downward by the bumps.
    let centers: Vec<f64> = (0..width)
        .map(|x| {
            let xf = x as f64;
            let dev: f64 = bumps
                .iter()
                .map(|&(p, a, s)| a * (-(xf - p) * (xf - p) / (2.0 * s * s)).exp())
                .sum();
            center + dev
        })
        .collect();

    let mut image = Image::new(height, width);
    for row in 0..height {
        for col in 0..width {
            let in_band = (row as f64 - centers[col]).abs() <= half_thickness;
            let value = if in_band {
                sample_normal(rng, BAND_LEVEL, BAND_NOISE)
            } else {
                sample_normal(rng, BACKGROUND_LEVEL, BACKGROUND_NOISE)
            };
            image.set(row, col, value.clamp(0.0, 1.0) as f32);
        }
    }
    image
}

/// Generates one clean (artifact-free) volume. Deterministic in
/// `(config.seed, bag_index)`; the bag label is drawn uniformly and the
/// latent stages are capped at the label with at least one instance
/// reaching it.
pub fn generate_clean_volume(config: &GeneratorConfig, bag_index: u64) -> SyntheticVolume {
    let mut rng = substream(config.seed, &[tags::BAG, bag_index]);
    let n_instances = rng.gen_range(config.min_instances..=config.max_instances);
    let label = rng.gen_range(1..=config.n_classes);
    let mut stages: Vec<usize> = (0..n_instances).map(|_| rng.gen_range(1..=label)).collect();
    let peak = rng.gen_range(0..n_instances);
    stages[peak] = label;

    let band_frac = rng.gen_range(BAND_FRAC_LO..BAND_FRAC_HI);
    let images: Vec<Image> = stages
        .iter()
        .map(|&s| render_instance(&mut rng, s, band_frac, config.height, config.width))
        .collect();

    let latent_stages = stages
        .iter()
        .map(|&s| ClassIndex::new(s, config.n_classes).expect("stage <= label <= C"))
        .collect();
    SyntheticVolume {
        bag_id: format!("bag-{bag_index:05}"),
        images,
        latent_stages,
        artifact_mask: vec![None; n_instances],
        label: ClassIndex::new(label, config.n_classes).expect("label <= C"),
    }
}

/// Corruption priority order over bag indices: a Fisher-Yates shuffle
/// seeded from the dataset seed. The bags corrupted at any fraction are a
/// prefix of this order, so raising the fraction only ever adds corrupted
/// bags — sweeps over the fraction stay nested.
pub fn corruption_order(n_bags: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, &[tags::SELECT]);
    let mut pool: Vec<usize> = (0..n_bags).collect();
    for j in 0..n_bags {
        let pick = rng.gen_range(j..n_bags);
        pool.swap(j, pick);
    }
    pool
}

/// Which bags receive artifacts: exactly `round(fraction * n_bags)` of
/// them, the head of the corruption order.
fn corrupted_bags(config: &GeneratorConfig) -> Vec<bool> {
    let n = config.n_bags;
    let k = ((config.artifact_fraction * n as f64).round() as usize).min(n);
    let order = corruption_order(n, config.seed);
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    mask
}

/// Generates the full dataset described by `config`, corrupting the
/// selected fraction of bags with the configured artifact. Bag ids are
/// `<prefix><index>`; generation is parallel across bags and
/// schedule-independent.
pub fn generate_dataset(config: &GeneratorConfig, id_prefix: &str) -> Result<Vec<SyntheticVolume>> {
    config.validate()?;
    let corrupted = corrupted_bags(config);
    let volumes = (0..config.n_bags)
        .into_par_iter()
        .map(|i| {
            let mut volume = generate_clean_volume(config, i as u64);
            volume.bag_id = format!("{id_prefix}{i:04}");
            if corrupted[i] {
                let kind = config.artifact.expect("validated: fraction > 0 has a kind");
                let mut rng = substream(config.seed, &[tags::ARTIFACT, i as u64, kind.tag()]);
                let indices = select_artifact_groups(volume.n_instances(), &mut rng);
                apply_artifact(&mut volume, kind, &indices, &mut rng);
            }
            volume
        })
        .collect();
    Ok(volumes)
}
