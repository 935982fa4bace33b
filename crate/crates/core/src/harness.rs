//! Experiment orchestration: dataset preparation, model training/loading,
//! batch explanation generation, and the two studies — explanation length
//! across relevance ranges (with one-way ANOVA) and explanation robustness
//! under augmentations (with paired t-tests per range).
//!
//! Per-instance work (forward pass, relevance attribution) runs in parallel;
//! all outputs are sorted deterministically afterwards, so reports do not
//! depend on scheduling.

use crate::augment::AugmentSpec;
use crate::config::{DatasetSource, ExperimentConfig};
use crate::contrastive::{
    best_match, explain, rank_and_partition, unique_difference, ConceptNames,
    ContrastiveExplanation, RankedConcepts, RelevanceRange,
};
use crate::crp::{concept_scores_from_trace, ConceptAttribution};
use crate::error::{Error, Result};
use crate::network::{Dataset, Network, Split, CLASS_COUNT};
use crate::pnm::load_dataset;
use crate::report;
use crate::stats::{anova_oneway, t_paired, StatTestResult};
use crate::synth::synthesize_dataset;
use crate::train::{accuracy, train};
use crate::weights::{load_weights, save_weights};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::PathBuf;

/// One explanation-length measurement: how many concepts differ between a
/// test instance and its best opposite-class match, within one relevance
/// range and one input condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthRecord {
    pub instance_id: String,
    pub range: RelevanceRange,
    pub condition: String,
    pub length: usize,
    pub match_id: String,
    pub similarity: f64,
}

/// Bookkeeping for one condition: how many instances produced records and
/// why the rest were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStats {
    pub condition: String,
    pub n_instances: usize,
    pub n_correct: usize,
    pub n_correct_per_class: [usize; CLASS_COUNT],
    pub n_dropped_misclassified: usize,
    pub n_dropped_degenerate: usize,
    pub n_dropped_no_contrast: usize,
    pub n_explained: usize,
}

/// Outcome of one paired comparison cell in the robustness table.
#[derive(Debug, Clone, PartialEq)]
pub enum R2Outcome {
    Test(StatTestResult),
    /// All paired differences were zero; the t statistic is undefined.
    ZeroVariance,
    /// Fewer than two instances were explainable in both conditions.
    TooFewPairs,
}

/// One row of the robustness table: a paired t-test of explanation lengths
/// (original vs augmented) within one relevance range.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Row {
    pub range: RelevanceRange,
    pub augmentation: String,
    pub outcome: R2Outcome,
    pub mean_orig: Option<f64>,
    pub mean_aug: Option<f64>,
    pub n: usize,
}

/// A prepared experiment: data loaded, model trained or loaded, names
/// resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub network: Network,
    pub train_data: Dataset,
    pub test_data: Dataset,
    pub class_names: Vec<String>,
    pub concept_names: ConceptNames,
    /// False when the model was loaded from `weights_file` instead of
    /// trained in this process.
    pub trained_here: bool,
}

/// Display names per label, recovered from the `class/…` instance ids.
pub fn class_names_of(data: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = (0..CLASS_COUNT).map(|l| format!("class{l}")).collect();
    for inst in data.instances() {
        if let Some((class, _)) = inst.id.split_once('/') {
            if !class.is_empty() {
                names[inst.label] = class.to_string();
            }
        }
    }
    names
}

fn load_splits(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match config.dataset {
        DatasetSource::Synthetic => {
            let train = synthesize_dataset(
                config.synth_per_class,
                config.synth_image_size,
                config.synth_seed(),
                Split::Train,
            )?;
            let test = synthesize_dataset(
                config.synth_test_per_class,
                config.synth_image_size,
                config.synth_seed(),
                Split::Test,
            )?;
            Ok((train, test))
        }
        DatasetSource::Directory => {
            let channels = config.architecture.input_shape[0];
            let train_dir = config.train_dir.as_ref().expect("validated");
            let test_dir = config.test_dir.as_ref().expect("validated");
            Ok((
                load_dataset(train_dir, Split::Train, channels)?,
                load_dataset(test_dir, Split::Test, channels)?,
            ))
        }
    }
}

impl Experiment {
    /// Loads or synthesizes both splits, then loads the model from
    /// `weights_file` when that file exists or trains it from scratch.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        let (train_data, test_data) = load_splits(&config)?;
        for data in [&train_data, &test_data] {
            if data.image_shape() != config.architecture.input_shape.as_slice() {
                return Err(Error::InconsistentShapes(format!(
                    "{:?} split images have shape {:?} but the model expects {:?}",
                    data.split(),
                    data.image_shape(),
                    config.architecture.input_shape
                )));
            }
        }
        let saved = config
            .weights_file
            .as_ref()
            .filter(|p| p.exists())
            .cloned();
        let (network, trained_here) = match saved {
            Some(path) => (load_weights(&path, &config.architecture)?, false),
            None => {
                let init = config.architecture.build(config.seed)?;
                (train(&init, &train_data, &config.train_config())?, true)
            }
        };
        let class_names = class_names_of(&train_data);
        let concept_names = match &config.names_file {
            Some(path) => ConceptNames::load(path, network.concept_channels())?,
            None => ConceptNames::unnamed(network.concept_channels()),
        };
        Ok(Experiment {
            config,
            network,
            train_data,
            test_data,
            class_names,
            concept_names,
            trained_here,
        })
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        accuracy(&self.network, &self.train_data)
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.network, &self.test_data)
    }

    /// Writes the model to `weights_file`, defaulting to
    /// `<out_dir>/model.cxai`.
    pub fn save_model(&self) -> Result<PathBuf> {
        let path = self
            .config
            .weights_file
            .clone()
            .unwrap_or_else(|| self.config.out_dir.join("model.cxai"));
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
        }
        save_weights(&self.network, &path)?;
        Ok(path)
    }
}

/// Builds the dataset for one augmentation condition by applying the same
/// transform to every test image (per-instance seeds keep this
/// reproducible).
pub fn augment_condition(
    test: &Dataset,
    token: &str,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Dataset> {
    let spec = match token {
        "rot180" => AugmentSpec::Rotation {
            angle_degrees: 180.0,
        },
        "rot10" => AugmentSpec::Rotation {
            angle_degrees: 10.0,
        },
        "noise" => AugmentSpec::GaussianNoise {
            sigma: noise_sigma,
            seed: noise_seed,
        },
        other => {
            return Err(Error::InvalidConfigValue {
                key: "augmentations".into(),
                details: format!("unknown augmentation {other:?}"),
            })
        }
    };
    spec.validate()?;
    let instances = test
        .instances()
        .iter()
        .map(|inst| crate::network::Instance {
            image: spec.apply(&inst.image, &inst.id),
            label: inst.label,
            id: inst.id.clone(),
        })
        .collect();
    Dataset::new(instances, test.split())
}

/// Per-instance artifacts for one condition.
struct PreparedInstance {
    id: String,
    label: usize,
    embedding: Vec<f64>,
    /// `None` when the attribution had no strictly positive concept score.
    ranked: Option<RankedConcepts>,
}

/// Generates all four-range explanation length records for one condition.
///
/// This produces, for every correctly classified instance, exactly the
/// lengths that [`explain`] would report instance by instance, but computes
/// each embedding and attribution once and reuses them across the matching.
pub fn condition_records(
    net: &Network,
    data: &Dataset,
    rule_epsilon: f64,
    condition: &str,
) -> Result<(Vec<LengthRecord>, ConditionStats)> {
    let evaluated: Vec<Result<Option<PreparedInstance>>> = data
        .instances()
        .par_iter()
        .map(|inst| {
            let trace = net.forward(&inst.image)?;
            if trace.predicted_class() != inst.label {
                return Ok(None);
            }
            let embedding = net.embedding_from_trace(&trace);
            let attr =
                concept_scores_from_trace(net, &trace, &inst.id, inst.label, rule_epsilon)?;
            let ranked = match rank_and_partition(&attr) {
                Ok(r) => Some(r),
                Err(Error::DegenerateAttribution) => None,
                Err(e) => return Err(e),
            };
            Ok(Some(PreparedInstance {
                id: inst.id.clone(),
                label: inst.label,
                embedding,
                ranked,
            }))
        })
        .collect();

    let mut stats = ConditionStats {
        condition: condition.to_string(),
        n_instances: data.len(),
        n_correct: 0,
        n_correct_per_class: [0; CLASS_COUNT],
        n_dropped_misclassified: 0,
        n_dropped_degenerate: 0,
        n_dropped_no_contrast: 0,
        n_explained: 0,
    };
    let mut prepared: Vec<PreparedInstance> = Vec::new();
    for item in evaluated {
        match item? {
            Some(p) => {
                stats.n_correct += 1;
                stats.n_correct_per_class[p.label] += 1;
                prepared.push(p);
            }
            None => stats.n_dropped_misclassified += 1,
        }
    }

    // Contrast pools: correctly classified instances per class, in dataset
    // order — identical to the pool explain() scans.
    let mut pools: Vec<Vec<(String, Vec<f64>)>> = vec![Vec::new(); CLASS_COUNT];
    for p in &prepared {
        pools[p.label].push((p.id.clone(), p.embedding.clone()));
    }
    let by_id: BTreeMap<&str, &PreparedInstance> =
        prepared.iter().map(|p| (p.id.as_str(), p)).collect();

    let mut records = Vec::new();
    for target in &prepared {
        let Some(target_ranked) = &target.ranked else {
            stats.n_dropped_degenerate += 1;
            continue;
        };
        let pool = &pools[1 - target.label];
        if pool.is_empty() {
            stats.n_dropped_no_contrast += 1;
            continue;
        }
        let matched = best_match(&target.id, &target.embedding, pool)?;
        let match_prep = by_id
            .get(matched.best_match_id.as_str())
            .expect("match came from the prepared pool");
        let Some(match_ranked) = &match_prep.ranked else {
            stats.n_dropped_degenerate += 1;
            continue;
        };
        for range in RelevanceRange::ALL {
            let (present, absent) = unique_difference(target_ranked, match_ranked, range);
            records.push(LengthRecord {
                instance_id: target.id.clone(),
                range,
                condition: condition.to_string(),
                length: present.len() + absent.len(),
                match_id: matched.best_match_id.clone(),
                similarity: matched.similarity,
            });
        }
        stats.n_explained += 1;
    }
    records.sort_by(|a, b| {
        a.instance_id
            .cmp(&b.instance_id)
            .then(a.range.cmp(&b.range))
            .then(a.condition.cmp(&b.condition))
    });
    Ok((records, stats))
}

/// Output of the explanation-length study.
#[derive(Debug, Clone)]
pub struct R1Output {
    pub records: Vec<LengthRecord>,
    pub anova: StatTestResult,
    pub stats: ConditionStats,
    pub test_accuracy: f64,
}

/// Runs the explanation-length study on the test split: explanations for
/// every correctly classified instance in all four ranges, then a one-way
/// ANOVA across the four length groups.
pub fn run_r1(exp: &Experiment) -> Result<R1Output> {
    let (records, stats) = condition_records(
        &exp.network,
        &exp.test_data,
        exp.config.rule_epsilon,
        "original",
    )?;
    for (label, &count) in stats.n_correct_per_class.iter().enumerate() {
        if count < 2 {
            return Err(Error::InsufficientData(format!(
                "only {count} correctly classified test instances for class {:?}",
                exp.class_names[label]
            )));
        }
    }
    let groups: Vec<Vec<f64>> = RelevanceRange::ALL
        .iter()
        .map(|&range| {
            records
                .iter()
                .filter(|r| r.range == range)
                .map(|r| r.length as f64)
                .collect()
        })
        .collect();
    let anova = anova_oneway(&groups)?;
    Ok(R1Output {
        records,
        anova,
        stats,
        test_accuracy: exp.test_accuracy()?,
    })
}

/// Writes `r1_lengths.csv`, `r1_anova.csv`, `r1_summary.csv`, and
/// `r1_conditions.csv` under the configured output directory, returning the
/// paths written.
pub fn write_r1_reports(exp: &Experiment, out: &R1Output) -> Result<Vec<PathBuf>> {
    let dir = &exp.config.out_dir;
    let lengths = dir.join("r1_lengths.csv");
    let anova = dir.join("r1_anova.csv");
    let summary = dir.join("r1_summary.csv");
    let conditions = dir.join("r1_conditions.csv");
    report::write_lengths_csv(&lengths, &out.records)?;
    report::write_anova_csv(&anova, &out.anova)?;
    report::write_summary_csv(&summary, &report::length_summaries(&out.records))?;
    report::write_conditions_csv(&conditions, std::slice::from_ref(&out.stats))?;
    Ok(vec![lengths, anova, summary, conditions])
}

/// Output of the robustness study.
#[derive(Debug, Clone)]
pub struct R2Output {
    /// Records for every condition including `original`, sorted by
    /// (instance, range, condition).
    pub records: Vec<LengthRecord>,
    /// One row per (augmentation, range), augmentations in config order.
    pub rows: Vec<R2Row>,
    pub conditions: Vec<ConditionStats>,
    pub test_accuracy: f64,
}

/// Runs the robustness study: re-runs the full explanation pipeline within
/// each augmentation condition (augmented targets matched against augmented
/// pools, correctness re-evaluated), pairs lengths with the original
/// condition by instance id, and runs a paired t-test per range.
pub fn run_r2(exp: &Experiment) -> Result<R2Output> {
    let eps = exp.config.rule_epsilon;
    let (orig_records, orig_stats) =
        condition_records(&exp.network, &exp.test_data, eps, "original")?;

    let mut all_records = orig_records.clone();
    let mut conditions = vec![orig_stats];
    let mut rows = Vec::new();

    for token in &exp.config.augmentations {
        let aug_data = augment_condition(
            &exp.test_data,
            token,
            exp.config.noise_sigma,
            exp.config.noise_seed(),
        )?;
        let (aug_records, aug_stats) = condition_records(&exp.network, &aug_data, eps, token)?;

        for range in RelevanceRange::ALL {
            let orig_by_id: BTreeMap<&str, usize> = orig_records
                .iter()
                .filter(|r| r.range == range)
                .map(|r| (r.instance_id.as_str(), r.length))
                .collect();
            // BTreeMap iteration pairs in ascending instance-id order
            let aug_by_id: BTreeMap<&str, usize> = aug_records
                .iter()
                .filter(|r| r.range == range)
                .map(|r| (r.instance_id.as_str(), r.length))
                .collect();
            let mut orig_lengths = Vec::new();
            let mut aug_lengths = Vec::new();
            for (id, aug_len) in &aug_by_id {
                if let Some(orig_len) = orig_by_id.get(id) {
                    orig_lengths.push(*orig_len as f64);
                    aug_lengths.push(*aug_len as f64);
                }
            }
            let n = orig_lengths.len();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let outcome = if n < 2 {
                R2Outcome::TooFewPairs
            } else {
                match t_paired(&orig_lengths, &aug_lengths) {
                    Ok(result) => R2Outcome::Test(result),
                    Err(Error::ZeroVariance) => R2Outcome::ZeroVariance,
                    Err(e) => return Err(e),
                }
            };
            rows.push(R2Row {
                range,
                augmentation: token.clone(),
                outcome,
                mean_orig: mean(&orig_lengths),
                mean_aug: mean(&aug_lengths),
                n,
            });
        }
        all_records.extend(aug_records);
        conditions.push(aug_stats);
    }

    all_records.sort_by(|a, b| {
        a.instance_id
            .cmp(&b.instance_id)
            .then(a.range.cmp(&b.range))
            .then(a.condition.cmp(&b.condition))
    });
    Ok(R2Output {
        records: all_records,
        rows,
        conditions,
        test_accuracy: exp.test_accuracy()?,
    })
}

/// Writes `r2_lengths.csv`, `r2_table.csv`, `r2_summary.csv`, and
/// `r2_conditions.csv` under the configured output directory, returning the
/// paths written.
pub fn write_r2_reports(exp: &Experiment, out: &R2Output) -> Result<Vec<PathBuf>> {
    let dir = &exp.config.out_dir;
    let lengths = dir.join("r2_lengths.csv");
    let table = dir.join("r2_table.csv");
    let summary = dir.join("r2_summary.csv");
    let conditions = dir.join("r2_conditions.csv");
    report::write_lengths_csv(&lengths, &out.records)?;
    report::write_r2_table_csv(&table, &out.rows)?;
    report::write_summary_csv(&summary, &report::length_summaries(&out.records))?;
    report::write_conditions_csv(&conditions, &out.conditions)?;
    Ok(vec![lengths, table, summary, conditions])
}

/// One fully rendered explanation plus the target's raw concept scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainReport {
    pub explanation: ContrastiveExplanation,
    pub concept_scores: Vec<f64>,
    pub concept_names: Vec<String>,
}

/// Explains a single test instance at one relevance range.
pub fn explain_one(
    exp: &Experiment,
    target_id: &str,
    range: RelevanceRange,
) -> Result<ExplainReport> {
    let explanation = explain(
        &exp.network,
        &exp.test_data,
        target_id,
        range,
        &exp.concept_names,
        &exp.class_names,
        exp.config.rule_epsilon,
    )?;
    let target = exp.test_data.get(target_id)?;
    let trace = exp.network.forward(&target.image)?;
    let attr: ConceptAttribution = concept_scores_from_trace(
        &exp.network,
        &trace,
        target_id,
        target.label,
        exp.config.rule_epsilon,
    )?;
    let concept_names = (0..attr.scores.len())
        .map(|c| exp.concept_names.name(c))
        .collect();
    Ok(ExplainReport {
        explanation,
        concept_scores: attr.scores,
        concept_names,
    })
}
