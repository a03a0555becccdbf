//! On-disk formats.
//!
//! Logit fixtures and bag predictions are line-delimited JSON (one record
//! per line, blank lines ignored); parameter bundles are single JSON
//! documents; a dataset directory is a `manifest.json` plus one raw
//! binary file per bag with the instance images as little-endian f32,
//! row-major, instances concatenated.
//!
//! Parsers reject malformed input with the source line number where one
//! exists, and never trust lengths or file names from the input without
//! checking them.

use crate::error::{Error, Result};
use crate::synth::{ArtifactKind, GeneratorConfig, Image, SyntheticVolume};
use crate::types::{BagLogits, ClassIndex, InstanceLogits};
use crate::ubix::UbixParams;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One fixture line: per-bag logits with an optional 1-based label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRecord {
    pub bag_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Nested `[instance][member][class]` logits.
    pub logits: Vec<Vec<Vec<f64>>>,
}

fn line_error(line: usize, err: impl ToString) -> Error {
    Error::FixtureParse {
        line,
        message: err.to_string(),
    }
}

fn record_to_bag(record: FixtureRecord) -> Result<BagLogits> {
    let FixtureRecord {
        bag_id,
        label,
        logits,
    } = record;
    if logits.is_empty() {
        return Err(Error::EmptyBag { bag_id });
    }
    let instances: Vec<InstanceLogits> = logits
        .into_iter()
        .map(InstanceLogits::new)
        .collect::<Result<_>>()?;
    let n_classes = instances[0].n_classes();
    let label = label
        .map(|l| ClassIndex::new(l, n_classes))
        .transpose()?;
    BagLogits::new(bag_id, instances, label)
}

/// Parses and fully validates a single fixture line.
pub fn parse_fixture_line(line: &str, line_no: usize) -> Result<BagLogits> {
    let record: FixtureRecord =
        serde_json::from_str(line).map_err(|e| line_error(line_no, e))?;
    record_to_bag(record).map_err(|e| line_error(line_no, e))
}

/// Reads a whole fixture file, enforcing unique bag ids and a uniform
/// (M, C) shape across records. An empty file is an empty sequence; the
/// caller decides whether that deserves a warning.
pub fn read_fixture(path: impl AsRef<Path>) -> Result<Vec<BagLogits>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut bags: Vec<BagLogits> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bag = parse_fixture_line(&line, line_no)?;
        if !seen.insert(bag.bag_id().to_string()) {
            return Err(line_error(
                line_no,
                format!("duplicate bag_id '{}'", bag.bag_id()),
            ));
        }
        if let Some(first) = bags.first() {
            let (m, c) = first.shape();
            let (found_m, found_c) = bag.shape();
            if (found_m, found_c) != (m, c) {
                return Err(Error::ShapeMismatch {
                    context: format!("bag '{}' (line {line_no})", bag.bag_id()),
                    expected_m: m,
                    expected_c: c,
                    found_m,
                    found_c,
                });
            }
        }
        bags.push(bag);
    }
    Ok(bags)
}

pub fn write_fixture(bags: &[BagLogits], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for bag in bags {
        let record = FixtureRecord {
            bag_id: bag.bag_id().to_string(),
            label: bag.label().map(ClassIndex::get),
            logits: bag.instances().iter().map(|i| i.values().to_vec()).collect(),
        };
        let json = serde_json::to_string(&record).expect("fixture records serialize");
        writeln!(out, "{json}")?;
    }
    out.flush()?;
    Ok(())
}

/// One inference output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub bag_id: String,
    /// 1-based predicted class.
    pub predicted: usize,
    pub probs: Vec<f64>,
    /// One score per instance; absent in plain-MIL mode, where no
    /// uncertainty measure is consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_uncertainties: Option<Vec<f64>>,
}

fn validate_prediction(record: &PredictionRecord) -> Result<()> {
    if record.probs.is_empty() {
        return Err(Error::InvalidProbability {
            reason: format!("bag '{}' has an empty probs array", record.bag_id),
        });
    }
    let mut sum = 0.0;
    for &p in &record.probs {
        if !p.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&p) {
            return Err(Error::InvalidProbability {
                reason: format!("bag '{}' has probability {p}", record.bag_id),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidProbability {
            reason: format!("bag '{}' probs sum to {sum}", record.bag_id),
        });
    }
    ClassIndex::new(record.predicted, record.probs.len())?;
    if let Some(us) = &record.instance_uncertainties {
        if us.is_empty() {
            return Err(Error::InvalidShape {
                reason: format!("bag '{}' has an empty uncertainty array", record.bag_id),
            });
        }
        if us.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("instance uncertainties of bag '{}'", record.bag_id),
            });
        }
    }
    Ok(())
}

pub fn parse_prediction_line(line: &str, line_no: usize) -> Result<PredictionRecord> {
    let record: PredictionRecord =
        serde_json::from_str(line).map_err(|e| line_error(line_no, e))?;
    validate_prediction(&record).map_err(|e| line_error(line_no, e))?;
    Ok(record)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_prediction_line(&line, line_no)?;
        if !seen.insert(record.bag_id.clone()) {
            return Err(line_error(
                line_no,
                format!("duplicate bag_id '{}'", record.bag_id),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for record in records {
        let json = serde_json::to_string(record).expect("prediction records serialize");
        writeln!(out, "{json}")?;
    }
    out.flush()?;
    Ok(())
}

/// One ground-truth line for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub bag_id: String,
    /// 1-based reference label.
    pub label: usize,
    /// Size of the grading scale; inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
}

fn validate_truth(record: &TruthRecord) -> Result<()> {
    match record.n_classes {
        Some(c) if c < 2 => Err(Error::InvalidConfig {
            reason: format!("bag '{}' declares n_classes = {c}", record.bag_id),
        }),
        Some(c) => ClassIndex::new(record.label, c).map(|_| ()),
        None if record.label < 1 => Err(Error::InvalidClass {
            value: record.label,
            n_classes: 0,
        }),
        None => Ok(()),
    }
}

pub fn parse_truth_line(line: &str, line_no: usize) -> Result<TruthRecord> {
    let record: TruthRecord =
        serde_json::from_str(line).map_err(|e| line_error(line_no, e))?;
    validate_truth(&record).map_err(|e| line_error(line_no, e))?;
    Ok(record)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_truth_line(&line, line_no)?;
        if !seen.insert(record.bag_id.clone()) {
            return Err(line_error(
                line_no,
                format!("duplicate bag_id '{}'", record.bag_id),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_truth(records: &[TruthRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for record in records {
        let json = serde_json::to_string(record).expect("truth records serialize");
        writeln!(out, "{json}")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses and validates a parameter bundle from a JSON string.
pub fn parse_params(json: &str) -> Result<UbixParams> {
    let params: UbixParams = serde_json::from_str(json).map_err(|e| Error::InvalidParams {
        reason: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<UbixParams> {
    parse_params(&fs::read_to_string(path.as_ref())?)
}

pub fn save_params(params: &UbixParams, path: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let json = serde_json::to_string_pretty(params).expect("params serialize");
    fs::write(path.as_ref(), json + "\n")?;
    Ok(())
}

/// Manifest entry for one stored bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBag {
    pub bag_id: String,
    /// Plain file name (no directories) of the raw volume next to the
    /// manifest.
    pub file: String,
    pub label: usize,
    pub latent_stages: Vec<usize>,
    pub artifact_mask: Vec<Option<ArtifactKind>>,
}

/// `manifest.json`: the generator config echo, the seeds everything was
/// derived from, and one entry per stored bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: GeneratorConfig,
    pub oracle_seed: u64,
    pub n_models: usize,
    pub bags: Vec<ManifestBag>,
}

fn validate_manifest(manifest: &DatasetManifest) -> Result<()> {
    let fail = |reason: String| Err(Error::InvalidConfig { reason });
    manifest.config.validate()?;
    if manifest.n_models == 0 {
        return fail("manifest n_models must be >= 1".into());
    }
    let mut seen = HashSet::new();
    for bag in &manifest.bags {
        if !seen.insert(bag.bag_id.as_str()) {
            return fail(format!("duplicate bag_id '{}' in manifest", bag.bag_id));
        }
        if bag.file.is_empty()
            || bag.file.contains('/')
            || bag.file.contains('\\')
            || bag.file.contains("..")
        {
            return fail(format!(
                "bag '{}' has unsafe volume file name '{}'",
                bag.bag_id, bag.file
            ));
        }
        if bag.latent_stages.is_empty() {
            return Err(Error::EmptyBag {
                bag_id: bag.bag_id.clone(),
            });
        }
        if bag.latent_stages.len() != bag.artifact_mask.len() {
            return Err(Error::LengthMismatch {
                context: format!("manifest entry '{}'", bag.bag_id),
                left: bag.latent_stages.len(),
                right: bag.artifact_mask.len(),
            });
        }
        for &stage in &bag.latent_stages {
            ClassIndex::new(stage, manifest.config.n_classes)?;
        }
        ClassIndex::new(bag.label, manifest.config.n_classes)?;
        let max_stage = *bag.latent_stages.iter().max().expect("non-empty");
        if bag.label != max_stage {
            return fail(format!(
                "bag '{}' label {} != max latent stage {max_stage}",
                bag.bag_id, bag.label
            ));
        }
    }
    Ok(())
}

/// Parses and validates a dataset manifest from a JSON string.
pub fn parse_manifest(json: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(json).map_err(|e| Error::Decode {
        context: "dataset manifest".into(),
        message: e.to_string(),
    })?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

/// Builds the manifest describing `volumes`.
pub fn manifest_for(
    config: &GeneratorConfig,
    oracle_seed: u64,
    n_models: usize,
    volumes: &[SyntheticVolume],
) -> DatasetManifest {
    let bags = volumes
        .iter()
        .map(|v| ManifestBag {
            bag_id: v.bag_id.clone(),
            file: format!("{}.f32", v.bag_id),
            label: v.label.get(),
            latent_stages: v.latent_stages.iter().map(|s| s.get()).collect(),
            artifact_mask: v.artifact_mask.clone(),
        })
        .collect();
    DatasetManifest {
        config: config.clone(),
        oracle_seed,
        n_models,
        bags,
    }
}

pub fn encode_volume(images: &[Image]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(images.iter().map(|i| i.data().len() * 4).sum());
    for image in images {
        for &px in image.data() {
            bytes.extend_from_slice(&px.to_le_bytes());
        }
    }
    bytes
}

/// Decodes a raw volume of `n_instances` images at `height x width`.
/// The byte length must match exactly and every value must be finite.
pub fn decode_volume(
    bytes: &[u8],
    n_instances: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Image>> {
    let per_image = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(4))
        .ok_or_else(|| Error::Decode {
            context: "volume".into(),
            message: format!("image dimensions {height}x{width} overflow"),
        })?;
    let expected = n_instances.checked_mul(per_image).ok_or_else(|| Error::Decode {
        context: "volume".into(),
        message: format!("instance count {n_instances} overflows"),
    })?;
    if bytes.len() != expected {
        return Err(Error::Decode {
            context: "volume".into(),
            message: format!(
                "expected {expected} bytes for {n_instances}x{height}x{width} f32, got {}",
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(n_instances);
    for (idx, chunk) in bytes.chunks_exact(per_image).enumerate() {
        let data: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|p| !p.is_finite()) {
            return Err(Error::Decode {
                context: "volume".into(),
                message: format!("non-finite pixel in instance {idx}"),
            });
        }
        images.push(Image::from_data(height, width, data)?);
    }
    Ok(images)
}

pub fn read_volume(
    path: impl AsRef<Path>,
    n_instances: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Image>> {
    decode_volume(&fs::read(path.as_ref())?, n_instances, height, width)
}

/// Writes `manifest.json` plus one `.f32` file per bag into `dir`.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    volumes: &[SyntheticVolume],
) -> Result<()> {
    let dir = dir.as_ref();
    if manifest.bags.len() != volumes.len() {
        return Err(Error::LengthMismatch {
            context: "manifest entries vs volumes".into(),
            left: manifest.bags.len(),
            right: volumes.len(),
        });
    }
    validate_manifest(manifest)?;
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n")?;
    for (entry, volume) in manifest.bags.iter().zip(volumes) {
        fs::write(dir.join(&entry.file), encode_volume(&volume.images))?;
    }
    Ok(())
}

/// Loads a dataset directory back into memory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SyntheticVolume>)> {
    let dir = dir.as_ref();
    let manifest = parse_manifest(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let n_classes = manifest.config.n_classes;
    let mut volumes = Vec::with_capacity(manifest.bags.len());
    for bag in &manifest.bags {
        let images = read_volume(
            dir.join(&bag.file),
            bag.latent_stages.len(),
            manifest.config.height,
            manifest.config.width,
        )?;
        volumes.push(SyntheticVolume {
            bag_id: bag.bag_id.clone(),
            images,
            latent_stages: bag
                .latent_stages
                .iter()
                .map(|&s| ClassIndex::new(s, n_classes))
                .collect::<Result<_>>()?,
            artifact_mask: bag.artifact_mask.clone(),
            label: ClassIndex::new(bag.label, n_classes)?,
        });
    }
    Ok((manifest, volumes))
}
