//! Experiment runners: synthetic benchmark assembly, prediction/truth
//! evaluation, the artifact-fraction robustness sweep, and the
//! uncertainty-measure comparison.
//!
//! Everything here is deterministic given the seeds involved; parallel
//! sections use ordered collects so worker count never changes output.

use crate::error::{Error, Result};
use crate::io::{
    manifest_for, save_dataset, write_fixture, write_truth, DatasetManifest, PredictionRecord,
    TruthRecord,
};
use crate::metrics::{
    binarize_stage, bootstrap_ci, cohen_kappa, positive_score, quadratic_weighted_kappa, roc_auc,
    xie_beni, CiEntry, ClusterSeparationReport, EvalReport,
};
use crate::rng::{mix, substream, tags};
use crate::synth::{
    apply_artifact, corruption_order, generate_dataset, select_artifact_groups, ArtifactKind,
    GeneratorConfig, OracleConfig, OracleEnsemble, SyntheticVolume,
};
use crate::types::{BagLogits, ClassIndex};
use crate::ubix::{calibrate, infer, InferenceMode, UbixParams};
use crate::uncertainty::{uncertainty, UncertaintyMeasure};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

/// Treats an undefined metric as an omitted field; real errors propagate.
fn metric_or_none(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::MetricUndefined { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores every volume with the oracle, in order, in parallel.
fn score_volumes(oracle: &OracleEnsemble, volumes: &[SyntheticVolume]) -> Result<Vec<BagLogits>> {
    volumes
        .par_iter()
        .map(|v| oracle.volume_logits(v))
        .collect()
}

/// Runs inference over a fixture and packages the per-bag records.
pub fn infer_fixture(
    bags: &[BagLogits],
    params: &UbixParams,
    mode: InferenceMode,
) -> Result<Vec<PredictionRecord>> {
    bags.par_iter()
        .map(|bag| {
            let pred = infer(bag, params, mode)?;
            Ok(PredictionRecord {
                bag_id: bag.bag_id().to_string(),
                predicted: pred.predicted.get(),
                probs: pred.probs.values().to_vec(),
                instance_uncertainties: pred.instance_uncertainties,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic benchmark assembly

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// What `cmd_synth` builds: a generator config covering all splits
/// combined, plus the oracle shape.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// `n_bags` counts all splits together; the train/val/test split is
    /// roughly 50/25/25.
    pub config: GeneratorConfig,
    pub n_models: usize,
}

/// Top-level record of every seed involved in a synth run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub master_seed: u64,
    pub oracle_seed: u64,
    pub n_models: usize,
    pub config: GeneratorConfig,
    pub splits: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub seed: u64,
    pub n_bags: usize,
    pub dir: String,
    pub fixture: String,
    pub truth: String,
}

/// Split sizes: half train, a quarter val, remainder test.
pub fn split_sizes(n_bags: usize) -> [usize; 3] {
    let train = (n_bags as f64 * 0.5).round() as usize;
    let val = ((n_bags as f64 * 0.25).round() as usize).min(n_bags - train);
    [train, val, n_bags - train - val]
}

/// Generates the dataset directories, oracle logit fixtures, and truth
/// files for all three splits under `out_dir`, and records the seeds in
/// `synth.json`.
pub fn run_synth(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthManifest> {
    let out_dir = out_dir.as_ref();
    spec.config.validate()?;
    if spec.config.n_bags < 4 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "need at least 4 bags to form train/val/test splits, got {}",
                spec.config.n_bags
            ),
        });
    }
    if spec.n_models == 0 {
        return Err(Error::InvalidConfig {
            reason: "n_models must be >= 1".into(),
        });
    }

    let master_seed = spec.config.seed;
    let oracle_seed = mix(master_seed, &[tags::ORACLE]);
    let oracle = OracleEnsemble::fit(
        &OracleConfig::new(spec.config.n_classes, spec.n_models, oracle_seed),
        spec.config.height,
        spec.config.width,
    )?;

    fs::create_dir_all(out_dir)?;
    let sizes = split_sizes(spec.config.n_bags);
    let mut splits = Vec::with_capacity(3);
    for (k, (&name, &n_bags)) in SPLIT_NAMES.iter().zip(&sizes).enumerate() {
        let split_config = GeneratorConfig {
            n_bags,
            seed: mix(master_seed, &[tags::SPLIT, k as u64]),
            ..spec.config.clone()
        };
        let volumes = generate_dataset(&split_config, &format!("{name}-"))?;
        let manifest = manifest_for(&split_config, oracle_seed, spec.n_models, &volumes);
        save_dataset(out_dir.join(name), &manifest, &volumes)?;

        let bags = score_volumes(&oracle, &volumes)?;
        let fixture = format!("{name}.fixture.jsonl");
        write_fixture(&bags, out_dir.join(&fixture))?;

        let truth_records: Vec<TruthRecord> = volumes
            .iter()
            .map(|v| TruthRecord {
                bag_id: v.bag_id.clone(),
                label: v.label.get(),
                n_classes: Some(split_config.n_classes),
            })
            .collect();
        let truth = format!("{name}.truth.jsonl");
        write_truth(&truth_records, out_dir.join(&truth))?;

        splits.push(SplitEntry {
            name: name.to_string(),
            seed: split_config.seed,
            n_bags,
            dir: name.to_string(),
            fixture,
            truth,
        });
    }

    let manifest = SynthManifest {
        master_seed,
        oracle_seed,
        n_models: spec.n_models,
        config: spec.config.clone(),
        splits,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("synth manifest serializes");
    fs::write(out_dir.join("synth.json"), json + "\n")?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub bootstrap: Option<u32>,
    pub seed: u64,
}

/// Joins predictions with truth on bag id and computes the report.
/// Agreement uses quadratically weighted kappa for three or more classes
/// and plain kappa for two; AUC scores the referable split (stage >= 3).
pub fn evaluate(
    preds: &[PredictionRecord],
    truth: &[TruthRecord],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let pred_map: BTreeMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.bag_id.as_str(), p)).collect();
    let truth_map: BTreeMap<&str, &TruthRecord> =
        truth.iter().map(|t| (t.bag_id.as_str(), t)).collect();
    if pred_map.len() != preds.len() || truth_map.len() != truth.len() {
        return Err(Error::InvalidShape {
            reason: "duplicate bag ids in predictions or truth".into(),
        });
    }
    let unmatched: Vec<String> = pred_map
        .keys()
        .filter(|id| !truth_map.contains_key(*id))
        .chain(truth_map.keys().filter(|id| !pred_map.contains_key(*id)))
        .map(|id| id.to_string())
        .collect();
    if !unmatched.is_empty() {
        let mut unmatched = unmatched;
        unmatched.sort();
        return Err(Error::UnmatchedBags { bag_ids: unmatched });
    }
    if preds.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let width = preds[0].probs.len();
    if preds.iter().any(|p| p.probs.len() != width) {
        return Err(Error::InvalidShape {
            reason: "predictions disagree on the number of classes".into(),
        });
    }

    let n_classes = preds
        .iter()
        .map(|p| p.probs.len().max(p.predicted))
        .chain(truth.iter().map(|t| t.label.max(t.n_classes.unwrap_or(0))))
        .max()
        .expect("non-empty");

    // Canonical bag order for metrics and resampling.
    let mut rows: Vec<(ClassIndex, ClassIndex, f64)> = Vec::with_capacity(preds.len());
    for (id, t) in &truth_map {
        let p = pred_map[id];
        let probs = crate::types::ProbabilityVector::new(p.probs.clone())?;
        rows.push((
            ClassIndex::new(t.label, n_classes)?,
            ClassIndex::new(p.predicted, n_classes)?,
            positive_score(&probs),
        ));
    }
    let truth_ratings: Vec<ClassIndex> = rows.iter().map(|r| r.0).collect();
    let pred_ratings: Vec<ClassIndex> = rows.iter().map(|r| r.1).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let labels: Vec<bool> = truth_ratings.iter().map(|&t| binarize_stage(t)).collect();

    let kappa_w = if n_classes >= 3 {
        metric_or_none(quadratic_weighted_kappa(
            &truth_ratings,
            &pred_ratings,
            n_classes,
        ))?
    } else {
        None
    };
    let kappa = metric_or_none(cohen_kappa(&truth_ratings, &pred_ratings, n_classes))?;
    let auc = metric_or_none(roc_auc(&scores, &labels))?;

    let ci = match options.bootstrap {
        None => None,
        Some(0) => {
            return Err(Error::InvalidConfig {
                reason: "bootstrap iterations must be >= 1".into(),
            })
        }
        Some(iterations) => {
            let mut map = BTreeMap::new();
            let entry = |low: f64, high: f64| CiEntry {
                low,
                high,
                iterations,
                seed: options.seed,
            };
            let n = rows.len();
            if kappa_w.is_some() {
                let ci = bootstrap_ci(
                    |idx| {
                        let t: Vec<ClassIndex> = idx.iter().map(|&i| truth_ratings[i]).collect();
                        let p: Vec<ClassIndex> = idx.iter().map(|&i| pred_ratings[i]).collect();
                        quadratic_weighted_kappa(&t, &p, n_classes).ok()
                    },
                    n,
                    iterations,
                    options.seed,
                )?;
                map.insert("kappa_w".to_string(), entry(ci.low, ci.high));
            }
            if kappa.is_some() {
                let ci = bootstrap_ci(
                    |idx| {
                        let t: Vec<ClassIndex> = idx.iter().map(|&i| truth_ratings[i]).collect();
                        let p: Vec<ClassIndex> = idx.iter().map(|&i| pred_ratings[i]).collect();
                        cohen_kappa(&t, &p, n_classes).ok()
                    },
                    n,
                    iterations,
                    options.seed,
                )?;
                map.insert("kappa".to_string(), entry(ci.low, ci.high));
            }
            if auc.is_some() {
                let ci = bootstrap_ci(
                    |idx| {
                        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                        roc_auc(&s, &l).ok()
                    },
                    n,
                    iterations,
                    options.seed,
                )?;
                map.insert("auc".to_string(), entry(ci.low, ci.high));
            }
            Some(map)
        }
    };

    Ok(EvalReport {
        kappa_w,
        kappa,
        auc,
        n: rows.len(),
        ci,
    })
}

// ---------------------------------------------------------------------------
// Artifact-fraction sweep

/// Sweep definition: one artifact, a fraction grid, and the modes to
/// compare under a single uncertainty measure.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub artifact: ArtifactKind,
    /// Fractions of corrupted test bags, ascending, each in [0, 1].
    pub fractions: Vec<f64>,
    pub modes: Vec<InferenceMode>,
    pub measure: UncertaintyMeasure,
    /// Test-set generator settings; `n_bags` is the test-set size and
    /// the artifact fields are controlled by the sweep itself.
    pub base: GeneratorConfig,
    /// Size of the internal calibration split.
    pub n_val: usize,
    pub n_models: usize,
    pub bootstrap: u32,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        self.base.validate()?;
        if self.fractions.is_empty() {
            return fail("sweep needs at least one fraction".into());
        }
        if self
            .fractions
            .iter()
            .any(|f| !f.is_finite() || !(0.0..=1.0).contains(f))
        {
            return fail(format!("fractions must lie in [0, 1]: {:?}", self.fractions));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return fail("fractions must be strictly ascending".into());
        }
        if self.modes.is_empty() {
            return fail("sweep needs at least one mode".into());
        }
        let distinct: BTreeSet<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        if distinct.len() != self.modes.len() {
            return fail("duplicate modes in sweep".into());
        }
        if self.n_val == 0 {
            return fail("n_val must be >= 1".into());
        }
        if self.n_models == 0 {
            return fail("n_models must be >= 1".into());
        }
        if self.bootstrap == 0 {
            return fail("bootstrap iterations must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub artifact: ArtifactKind,
    pub mode: InferenceMode,
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_w_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_w_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub artifact: ArtifactKind,
    pub measure: UncertaintyMeasure,
    pub seed: u64,
    pub n_test: usize,
    pub n_val: usize,
    pub bootstrap: u32,
    /// Calibrated parameters per mode, keyed by mode name.
    pub params: BTreeMap<String, UbixParams>,
    pub rows: Vec<SweepRow>,
}

/// Runs the robustness sweep: calibrates each mode once on an internal
/// artifact-bearing validation split, then re-corrupts a fresh copy of
/// the same pristine test volumes at every fraction and measures each
/// mode's κ_w and AUC with bootstrap bands.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResults> {
    spec.validate()?;
    let master = spec.base.seed;
    let oracle_seed = mix(master, &[tags::ORACLE]);
    let oracle = OracleEnsemble::fit(
        &OracleConfig::new(spec.base.n_classes, spec.n_models, oracle_seed),
        spec.base.height,
        spec.base.width,
    )?;

    // Calibration split carries the artifact at fraction 0.5 so the
    // fitted uncertainty range and tau grid span both clean and corrupted
    // instances.
    let val_config = GeneratorConfig {
        n_bags: spec.n_val,
        seed: mix(master, &[tags::SPLIT, 1]),
        artifact_fraction: 0.5,
        artifact: Some(spec.artifact),
        ..spec.base.clone()
    };
    let val_bags = score_volumes(&oracle, &generate_dataset(&val_config, "val-")?)?;
    let params: Vec<(InferenceMode, UbixParams)> = spec
        .modes
        .iter()
        .map(|&mode| calibrate(&val_bags, spec.measure, mode).map(|p| (mode, p)))
        .collect::<Result<_>>()?;

    let test_config = GeneratorConfig {
        n_bags: spec.base.n_bags,
        seed: mix(master, &[tags::SPLIT, 2]),
        artifact_fraction: 0.0,
        artifact: None,
        ..spec.base.clone()
    };
    let pristine = generate_dataset(&test_config, "test-")?;
    let order = corruption_order(test_config.n_bags, test_config.seed);
    let truth: Vec<ClassIndex> = pristine.iter().map(|v| v.label).collect();
    let labels: Vec<bool> = truth.iter().map(|&t| binarize_stage(t)).collect();
    let n = pristine.len();

    let mut rows = Vec::with_capacity(spec.fractions.len() * spec.modes.len());
    for (fi, &fraction) in spec.fractions.iter().enumerate() {
        let k = ((fraction * n as f64).round() as usize).min(n);
        let mut hit = vec![false; n];
        for &i in &order[..k] {
            hit[i] = true;
        }
        let scored: Vec<BagLogits> = pristine
            .par_iter()
            .enumerate()
            .map(|(i, volume)| {
                if hit[i] {
                    let mut copy = volume.clone();
                    let mut rng = substream(
                        test_config.seed,
                        &[tags::ARTIFACT, i as u64, spec.artifact.tag()],
                    );
                    let indices = select_artifact_groups(copy.n_instances(), &mut rng);
                    apply_artifact(&mut copy, spec.artifact, &indices, &mut rng);
                    oracle.volume_logits(&copy)
                } else {
                    oracle.volume_logits(volume)
                }
            })
            .collect::<Result<_>>()?;

        for (mi, (mode, mode_params)) in params.iter().enumerate() {
            let preds: Vec<_> = scored
                .par_iter()
                .map(|bag| infer(bag, mode_params, *mode))
                .collect::<Result<_>>()?;
            let predicted: Vec<ClassIndex> = preds.iter().map(|p| p.predicted).collect();
            let scores: Vec<f64> = preds.iter().map(|p| positive_score(&p.probs)).collect();

            let kappa_w = metric_or_none(quadratic_weighted_kappa(
                &truth,
                &predicted,
                spec.base.n_classes,
            ))?;
            let auc = metric_or_none(roc_auc(&scores, &labels))?;

            let cell_seed = mix(master, &[tags::BOOTSTRAP, fi as u64, mi as u64]);
            let kappa_ci = match kappa_w {
                Some(_) => Some(bootstrap_ci(
                    |idx| {
                        let t: Vec<ClassIndex> = idx.iter().map(|&i| truth[i]).collect();
                        let p: Vec<ClassIndex> = idx.iter().map(|&i| predicted[i]).collect();
                        quadratic_weighted_kappa(&t, &p, spec.base.n_classes).ok()
                    },
                    n,
                    spec.bootstrap,
                    cell_seed,
                )?),
                None => None,
            };
            let auc_ci = match auc {
                Some(_) => Some(bootstrap_ci(
                    |idx| {
                        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                        roc_auc(&s, &l).ok()
                    },
                    n,
                    spec.bootstrap,
                    cell_seed,
                )?),
                None => None,
            };

            rows.push(SweepRow {
                artifact: spec.artifact,
                mode: *mode,
                fraction,
                kappa_w,
                kappa_w_lo: kappa_ci.as_ref().map(|c| c.low),
                kappa_w_hi: kappa_ci.as_ref().map(|c| c.high),
                auc,
                auc_lo: auc_ci.as_ref().map(|c| c.low),
                auc_hi: auc_ci.as_ref().map(|c| c.high),
            });
        }
    }

    Ok(SweepResults {
        artifact: spec.artifact,
        measure: spec.measure,
        seed: master,
        n_test: n,
        n_val: spec.n_val,
        bootstrap: spec.bootstrap,
        params: params
            .into_iter()
            .map(|(mode, p)| (mode.as_str().to_string(), p))
            .collect(),
        rows,
    })
}

/// Renders sweep rows as CSV with the fixed column set. Undefined
/// metrics become empty cells.
pub fn sweep_csv(results: &SweepResults) -> String {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("artifact,mode,fraction,kappa_w,kappa_w_lo,kappa_w_hi,auc,auc_lo,auc_hi\n");
    for row in &results.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.artifact,
            row.mode,
            row.fraction,
            cell(row.kappa_w),
            cell(row.kappa_w_lo),
            cell(row.kappa_w_hi),
            cell(row.auc),
            cell(row.auc_lo),
            cell(row.auc_hi),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Uncertainty-measure comparison

pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyComparison {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ArtifactKind>,
    pub n_clean: usize,
    pub n_corrupted: usize,
    /// Per-measure separation statistics, keyed by measure name.
    pub measures: BTreeMap<String, ClusterSeparationReport>,
}

#[derive(Debug, Clone)]
pub struct ComparisonOutput {
    pub report: UncertaintyComparison,
    /// Per-measure density histogram CSVs, keyed by measure name.
    pub histograms: BTreeMap<String, String>,
}

/// Density histogram of clean vs corrupted uncertainty values over a
/// shared binning.
pub fn histogram_csv(clean: &[f64], corrupted: &[f64], bins: usize) -> String {
    debug_assert!(bins >= 1);
    let all = clean.iter().chain(corrupted);
    let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let width = span / bins as f64;

    let count_bins = |values: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &v in values {
            let idx = if span == 0.0 {
                0
            } else {
                (((v - lo) / width) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        counts
    };
    let clean_counts = count_bins(clean);
    let corrupted_counts = count_bins(corrupted);

    let density = |count: usize, total: usize| {
        if total == 0 {
            0.0
        } else if width == 0.0 {
            count as f64 / total as f64
        } else {
            count as f64 / (total as f64 * width)
        }
    };

    let mut out = String::from("bin_lo,bin_hi,clean_count,corrupted_count,clean_density,corrupted_density\n");
    for b in 0..bins {
        let bin_lo = lo + b as f64 * width;
        let bin_hi = if b == bins - 1 { hi } else { lo + (b + 1) as f64 * width };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            bin_lo,
            bin_hi,
            clean_counts[b],
            corrupted_counts[b],
            density(clean_counts[b], clean.len()),
            density(corrupted_counts[b], corrupted.len()),
        ));
    }
    out
}

/// Compares all five uncertainty measures on a dataset with artifacts:
/// instance-level artifact-detection AUC and the Xie-Beni index between
/// the clean and corrupted uncertainty populations, plus density
/// histograms. Rejects datasets without any corrupted instance.
pub fn compare_uncertainty(
    manifest: &DatasetManifest,
    volumes: &[SyntheticVolume],
) -> Result<ComparisonOutput> {
    let corrupted_flags: Vec<bool> = volumes
        .iter()
        .flat_map(|v| v.artifact_mask.iter().map(Option::is_some))
        .collect();
    let n_corrupted = corrupted_flags.iter().filter(|&&c| c).count();
    if n_corrupted == 0 {
        return Err(Error::NoArtifacts);
    }
    let n_clean = corrupted_flags.len() - n_corrupted;

    let oracle = OracleEnsemble::fit(
        &OracleConfig::new(
            manifest.config.n_classes,
            manifest.n_models,
            manifest.oracle_seed,
        ),
        manifest.config.height,
        manifest.config.width,
    )?;
    let bags = score_volumes(&oracle, volumes)?;

    let mut measures = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    for measure in UncertaintyMeasure::ALL {
        let values: Vec<f64> = bags
            .par_iter()
            .flat_map_iter(|bag| {
                bag.instances()
                    .iter()
                    .map(move |inst| uncertainty(measure, inst).value())
            })
            .collect();
        let auc = roc_auc(&values, &corrupted_flags)?;
        let xb = xie_beni(&values, &corrupted_flags)?;
        let (clean_vals, corrupted_vals): (Vec<f64>, Vec<f64>) = {
            let mut cl = Vec::with_capacity(n_clean);
            let mut co = Vec::with_capacity(n_corrupted);
            for (&v, &hit) in values.iter().zip(&corrupted_flags) {
                if hit {
                    co.push(v);
                } else {
                    cl.push(v);
                }
            }
            (cl, co)
        };
        measures.insert(
            measure.as_str().to_string(),
            ClusterSeparationReport { xb, auc },
        );
        histograms.insert(
            measure.as_str().to_string(),
            histogram_csv(&clean_vals, &corrupted_vals, HISTOGRAM_BINS),
        );
    }

    Ok(ComparisonOutput {
        report: UncertaintyComparison {
            artifact: manifest.config.artifact,
            n_clean,
            n_corrupted,
            measures,
        },
        histograms,
    })
}

/// Writes the comparison report and its histograms into a directory.
pub fn write_comparison(output: &ComparisonOutput, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&output.report).expect("report serializes");
    let report_path = dir.join("uncertainty-report.json");
    fs::write(&report_path, json + "\n")?;
    for (measure, csv) in &output.histograms {
        fs::write(dir.join(format!("hist-{measure}.csv")), csv)?;
    }
    Ok(report_path)
}
