//! Experiment configuration: a flat UTF-8 `key = value` file with `#`
//! comments. Unknown and duplicate keys are errors (fail fast); every seed is
//! explicit so no run depends on wall-clock entropy.
//!
//! Recognized keys (all optional; defaults in parentheses):
//!
//! | key                   | meaning                                            |
//! |-----------------------|----------------------------------------------------|
//! | `input_shape`         | `CxHxW` model input (`1x32x32`)                    |
//! | `layers`              | layer DSL, see below (two conv/pool blocks + head) |
//! | `concept_layer`       | index of the concept conv layer (`3`)              |
//! | `embedding_layer`     | index of the embedding layer (`5`)                 |
//! | `epochs`              | training epochs (`2`)                              |
//! | `batch_size`          | minibatch size (`16`)                              |
//! | `learning_rate`       | SGD step size (`0.01`)                             |
//! | `seed`                | global seed (`42`)                                 |
//! | `rule_epsilon`        | relevance stabilizer (`1e-6`)                      |
//! | `dataset`             | `synthetic` or `directory` (`synthetic`)           |
//! | `train_dir`/`test_dir`| dataset roots (directory source only)              |
//! | `synth_per_class`     | synthetic train images per class (`200`)           |
//! | `synth_test_per_class`| synthetic test images per class (`50`)             |
//! | `synth_image_size`    | synthetic image side (`32`)                        |
//! | `synth_seed`          | synthetic data seed (defaults to `seed`)           |
//! | `names_file`          | optional concept-name map (TSV)                    |
//! | `weights_file`        | optional model weights path                        |
//! | `out_dir`             | report directory (`out`)                           |
//! | `augmentations`       | comma list of `rot180`,`rot10`,`noise` (all three) |
//! | `noise_sigma`         | noise augmentation sigma (`0.1`)                   |
//! | `noise_seed`          | noise seed (defaults to a value derived from seed) |
//!
//! The layer DSL is whitespace-separated: `conv(out,k,stride,pad)`, `relu`,
//! `maxpool(window,stride)`, `flatten`, `linear(units)`.

use crate::error::{Error, Result};
use crate::network::{Architecture, LayerSpec};
use crate::rng::derive_seed;
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Directory,
}

/// Augmentation conditions the robustness study may run. The token doubles
/// as the condition label in reports.
pub const AUGMENT_TOKENS: [&str; 3] = ["rot180", "rot10", "noise"];

/// Fully-resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub rule_epsilon: f64,
    pub dataset: DatasetSource,
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub synth_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_image_size: usize,
    synth_seed: Option<u64>,
    pub names_file: Option<PathBuf>,
    pub weights_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub augmentations: Vec<String>,
    pub noise_sigma: f64,
    noise_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            architecture: Architecture::default_toy(),
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 42,
            rule_epsilon: 1e-6,
            dataset: DatasetSource::Synthetic,
            train_dir: None,
            test_dir: None,
            synth_per_class: 200,
            synth_test_per_class: 50,
            synth_image_size: 32,
            synth_seed: None,
            names_file: None,
            weights_file: None,
            out_dir: PathBuf::from("out"),
            augmentations: AUGMENT_TOKENS.iter().map(|s| s.to_string()).collect(),
            noise_sigma: 0.1,
            noise_seed: None,
        }
    }
}

impl ExperimentConfig {
    /// Synthetic-data seed; defaults to the global seed.
    pub fn synth_seed(&self) -> u64 {
        self.synth_seed.unwrap_or(self.seed)
    }

    /// Base seed for the noise augmentation; defaults to a value derived
    /// from the global seed so it never collides with the synthetic-data
    /// generator streams.
    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
            .unwrap_or_else(|| derive_seed(self.seed, "noise"))
    }

    /// Training hyperparameters as a [`TrainConfig`].
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    /// Parses a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        text.parse()
    }

    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate", "must be finite and positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be nonzero"));
        }
        if self.rule_epsilon <= 0.0 || !self.rule_epsilon.is_finite() {
            return Err(invalid("rule_epsilon", "must be finite and positive"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(invalid("noise_sigma", "must be finite and nonnegative"));
        }
        if self.dataset == DatasetSource::Directory
            && (self.train_dir.is_none() || self.test_dir.is_none())
        {
            return Err(invalid(
                "dataset",
                "directory source requires train_dir and test_dir",
            ));
        }
        for token in &self.augmentations {
            if !AUGMENT_TOKENS.contains(&token.as_str()) {
                return Err(invalid(
                    "augmentations",
                    format!("unknown augmentation {token:?}, expected one of {AUGMENT_TOKENS:?}"),
                ));
            }
        }
        Ok(())
    }
}

fn invalid(key: &str, details: impl Into<String>) -> Error {
    Error::InvalidConfigValue {
        key: key.into(),
        details: details.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse {value:?}")))
}

/// Parses `CxHxW`.
fn parse_shape(value: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = value
        .split('x')
        .map(|d| parse_num("input_shape", d))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(invalid(
            "input_shape",
            format!("expected CxHxW, got {value:?}"),
        ));
    }
    Ok(dims)
}

/// Parses one layer token such as `conv(8,3,1,1)` or `relu`.
fn parse_layer(token: &str) -> Result<LayerSpec> {
    let (name, args) = match token.find('(') {
        Some(open) => {
            if !token.ends_with(')') {
                return Err(invalid("layers", format!("unbalanced parentheses in {token:?}")));
            }
            let inner = &token[open + 1..token.len() - 1];
            let args: Vec<usize> = inner
                .split(',')
                .map(|a| parse_num("layers", a))
                .collect::<Result<_>>()?;
            (&token[..open], args)
        }
        None => (token, Vec::new()),
    };
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(invalid(
                "layers",
                format!("{name} expects {n} arguments, got {} in {token:?}", args.len()),
            ))
        }
    };
    match name {
        "conv" => {
            arity(4)?;
            Ok(LayerSpec::Conv {
                out_channels: args[0],
                kernel: args[1],
                stride: args[2],
                padding: args[3],
            })
        }
        "relu" => {
            arity(0)?;
            Ok(LayerSpec::Relu)
        }
        "maxpool" => {
            arity(2)?;
            Ok(LayerSpec::MaxPool {
                window: args[0],
                stride: args[1],
            })
        }
        "flatten" => {
            arity(0)?;
            Ok(LayerSpec::Flatten)
        }
        "linear" => {
            arity(1)?;
            Ok(LayerSpec::Linear { units: args[0] })
        }
        other => Err(invalid("layers", format!("unknown layer kind {other:?}"))),
    }
}

fn parse_layers(value: &str) -> Result<Vec<LayerSpec>> {
    let layers: Vec<LayerSpec> = value
        .split_whitespace()
        .map(parse_layer)
        .collect::<Result<_>>()?;
    if layers.is_empty() {
        return Err(invalid("layers", "layer list is empty"));
    }
    Ok(layers)
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        // first pass: collect key/value pairs, rejecting unknown keys,
        // duplicates, and malformed lines
        const KNOWN: [&str; 22] = [
            "input_shape",
            "layers",
            "concept_layer",
            "embedding_layer",
            "epochs",
            "batch_size",
            "learning_rate",
            "seed",
            "rule_epsilon",
            "dataset",
            "train_dir",
            "test_dir",
            "synth_per_class",
            "synth_test_per_class",
            "synth_image_size",
            "synth_seed",
            "names_file",
            "weights_file",
            "out_dir",
            "augmentations",
            "noise_sigma",
            "noise_seed",
        ];
        let mut pairs: BTreeMap<&str, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                details: format!("expected 'key = value', got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim().to_string();
            let Some(&known) = KNOWN.iter().find(|&&k| k == key) else {
                return Err(Error::UnknownConfigKey {
                    line: line_no,
                    key: key.to_string(),
                });
            };
            if let Some((first_line, _)) = pairs.get(known) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    details: format!("duplicate key {key:?} (first set on line {first_line})"),
                });
            }
            pairs.insert(known, (line_no, value));
        }

        // second pass: apply values over the defaults
        let mut cfg = ExperimentConfig::default();
        let get = |key: &str| pairs.get(key).map(|(_, v)| v.as_str());
        if let Some(v) = get("input_shape") {
            cfg.architecture.input_shape = parse_shape(v)?;
        }
        if let Some(v) = get("layers") {
            cfg.architecture.layers = parse_layers(v)?;
        }
        if let Some(v) = get("concept_layer") {
            cfg.architecture.concept_layer = parse_num("concept_layer", v)?;
        }
        if let Some(v) = get("embedding_layer") {
            cfg.architecture.embedding_layer = parse_num("embedding_layer", v)?;
        }
        if let Some(v) = get("epochs") {
            cfg.epochs = parse_num("epochs", v)?;
        }
        if let Some(v) = get("batch_size") {
            cfg.batch_size = parse_num("batch_size", v)?;
        }
        if let Some(v) = get("learning_rate") {
            cfg.learning_rate = parse_num("learning_rate", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("rule_epsilon") {
            cfg.rule_epsilon = parse_num("rule_epsilon", v)?;
        }
        if let Some(v) = get("dataset") {
            cfg.dataset = match v {
                "synthetic" => DatasetSource::Synthetic,
                "directory" => DatasetSource::Directory,
                other => {
                    return Err(invalid(
                        "dataset",
                        format!("expected 'synthetic' or 'directory', got {other:?}"),
                    ))
                }
            };
        }
        if let Some(v) = get("train_dir") {
            cfg.train_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("test_dir") {
            cfg.test_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("synth_per_class") {
            cfg.synth_per_class = parse_num("synth_per_class", v)?;
        }
        if let Some(v) = get("synth_test_per_class") {
            cfg.synth_test_per_class = parse_num("synth_test_per_class", v)?;
        }
        if let Some(v) = get("synth_image_size") {
            cfg.synth_image_size = parse_num("synth_image_size", v)?;
        }
        if let Some(v) = get("synth_seed") {
            cfg.synth_seed = Some(parse_num("synth_seed", v)?);
        }
        if let Some(v) = get("names_file") {
            cfg.names_file = Some(PathBuf::from(v));
        }
        if let Some(v) = get("weights_file") {
            cfg.weights_file = Some(PathBuf::from(v));
        }
        if let Some(v) = get("out_dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = get("augmentations") {
            cfg.augmentations = v
                .split(',')
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect();
        }
        if let Some(v) = get("noise_sigma") {
            cfg.noise_sigma = parse_num("noise_sigma", v)?;
        }
        if let Some(v) = get("noise_seed") {
            cfg.noise_seed = Some(parse_num("noise_seed", v)?);
        }

        cfg.validate()?;
        Ok(cfg)
    }
}
