//! The four artificial artifact injectors and the contiguous-group
//! placement rule deciding which instances of a volume they hit.
//!
//! Volume-level statistics feeding the blinking and noise artifacts are
//! always computed from the volume as passed in (pristine, since a volume
//! receives at most one artifact kind), never from already-corrupted
//! pixels.

use super::{ArtifactKind, Image, SyntheticVolume};
use crate::rng::sample_normal;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Contiguous groups as `(start, len)` runs. One or two groups with equal
/// probability; each covers 2-15% of the instances (at least one). A
/// second group is re-placed up to 100 times if it overlaps the first,
/// then shrunk into the largest free run.
pub(crate) fn select_groups(i_count: usize, rng: &mut ChaCha12Rng) -> Vec<(usize, usize)> {
    debug_assert!(i_count >= 1);
    let draw_len = |rng: &mut ChaCha12Rng| -> usize {
        let u: f64 = rng.gen_range(0.02..0.15);
        ((u * i_count as f64).round() as usize).clamp(1, i_count)
    };

    let two_groups = rng.gen_bool(0.5);
    let len1 = draw_len(rng);
    let start1 = rng.gen_range(0..=i_count - len1);
    let mut groups = vec![(start1, len1)];

    if two_groups {
        let mut len2 = draw_len(rng);
        let mut placed = false;
        for _ in 0..100 {
            let start2 = rng.gen_range(0..=i_count - len2);
            if start2 + len2 <= start1 || start2 >= start1 + len1 {
                groups.push((start2, len2));
                placed = true;
                break;
            }
        }
        if !placed {
            // Deterministic fallback: shrink into the larger of the runs
            // before/after group one (the earlier one on ties).
            let before = start1;
            let after = i_count - (start1 + len1);
            let (gap_start, gap_len) = if before >= after {
                (0, before)
            } else {
                (start1 + len1, after)
            };
            if gap_len > 0 {
                len2 = len2.min(gap_len);
                groups.push((gap_start, len2));
            }
        }
    }
    groups
}

/// Sorted instance indices selected for corruption.
pub fn select_artifact_groups(i_count: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = select_groups(i_count, rng)
        .into_iter()
        .flat_map(|(start, len)| start..start + len)
        .collect();
    indices.sort_unstable();
    indices
}

/// Median and population standard deviation over every pixel of a volume.
fn volume_stats(images: &[Image]) -> (f64, f64) {
    let mut all: Vec<f64> = images
        .iter()
        .flat_map(|im| im.data().iter().map(|&p| f64::from(p)))
        .collect();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    let median = if n % 2 == 1 {
        all[n / 2]
    } else {
        (all[n / 2 - 1] + all[n / 2]) / 2.0
    };
    let mean = all.iter().sum::<f64>() / n as f64;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (median, var.sqrt())
}

/// Blinking: the affected instances are replaced wholesale by clamped
/// Gaussian noise whose mean is the volume's median pixel and whose
/// standard deviation is the volume's pixel standard deviation.
pub fn apply_blinking(volume: &mut SyntheticVolume, indices: &[usize], rng: &mut ChaCha12Rng) {
    let (median, std) = volume_stats(&volume.images);
    for &i in indices {
        for px in volume.images[i].data_mut() {
            *px = sample_normal(rng, median, std).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Vertical flip: row order reversed on the affected instances.
pub fn apply_flip(volume: &mut SyntheticVolume, indices: &[usize]) {
    for &i in indices {
        let image = &mut volume.images[i];
        let (h, w) = (image.height(), image.width());
        for row in 0..h / 2 {
            for col in 0..w {
                let top = image.get(row, col);
                let bottom = image.get(h - 1 - row, col);
                image.set(row, col, bottom);
                image.set(h - 1 - row, col, top);
            }
        }
    }
}

/// Column attenuation factors `1 - s(x)` with `s` a normal density over
/// the column axis. With `sigma >= width/4` the peak density stays below
/// one, so every factor is in (0, 1].
pub fn shadow_profile(width: usize, mu: f64, sigma: f64) -> Vec<f64> {
    let norm = sigma * (2.0 * std::f64::consts::PI).sqrt();
    (0..width)
        .map(|x| {
            let d = x as f64 - mu;
            1.0 - (-d * d / (2.0 * sigma * sigma)).exp() / norm
        })
        .collect()
}

/// Shadow: every column of every affected instance is attenuated by the
/// same profile; the shadow center and width are drawn once per volume
/// (center uniform over the width, sigma between a quarter and three
/// quarters of it).
pub fn apply_shadow(volume: &mut SyntheticVolume, indices: &[usize], rng: &mut ChaCha12Rng) {
    let width = volume.images[0].width();
    let a = width as f64;
    let mu = rng.gen_range(0.0..a);
    let sigma = rng.gen_range(a / 4.0..3.0 * a / 4.0);
    let profile = shadow_profile(width, mu, sigma);
    for &i in indices {
        let image = &mut volume.images[i];
        for row in 0..image.height() {
            for (col, &factor) in profile.iter().enumerate() {
                image.set(row, col, (f64::from(image.get(row, col)) * factor) as f32);
            }
        }
    }
}

/// Additive Gaussian noise with four times the volume's pixel standard
/// deviation, clamped back to [0, 1].
pub fn apply_noise(volume: &mut SyntheticVolume, indices: &[usize], rng: &mut ChaCha12Rng) {
    let (_, std) = volume_stats(&volume.images);
    for &i in indices {
        for px in volume.images[i].data_mut() {
            let noisy = f64::from(*px) + sample_normal(rng, 0.0, 4.0 * std);
            *px = noisy.clamp(0.0, 1.0) as f32;
        }
    }
}

/// Applies `kind` to the selected instances and records it in the
/// volume's artifact mask.
pub fn apply_artifact(
    volume: &mut SyntheticVolume,
    kind: ArtifactKind,
    indices: &[usize],
    rng: &mut ChaCha12Rng,
) {
    match kind {
        ArtifactKind::Blinking => apply_blinking(volume, indices, rng),
        ArtifactKind::Flip => apply_flip(volume, indices),
        ArtifactKind::Shadow => apply_shadow(volume, indices, rng),
        ArtifactKind::Noise => apply_noise(volume, indices, rng),
    }
    for &i in indices {
        volume.artifact_mask[i] = Some(kind);
    }
}
