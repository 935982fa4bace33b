//! Contrastive explanations for small convolutional classifiers.
//!
//! The crate trains compact CNNs from scratch, attributes their decisions to
//! individual convolution channels ("concepts") via masked epsilon-rule
//! relevance propagation, and renders contrastive explanations of the form
//! "classified as A rather than B because it contains X and lacks Y".
//! Evaluation harnesses measure explanation length across relevance ranges
//! and its robustness under input augmentations, with the needed statistics
//! (ANOVA, paired t-tests) implemented in-crate.
//!
//! Everything is deterministic given the configured seeds: the same inputs
//! produce byte-identical reports across runs and platforms.

pub mod augment;
pub mod config;
pub mod contrastive;
pub mod crp;
pub mod error;
pub mod harness;
pub mod network;
pub mod pnm;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;

pub use augment::{gaussian_noise, rotate, AugmentSpec};
pub use config::{DatasetSource, ExperimentConfig, AUGMENT_TOKENS};
pub use contrastive::{
    best_match, explain, rank_and_partition, render, unique_difference, ConceptNames,
    ContrastiveExplanation, RankedConcept, RankedConcepts, RelevanceRange, SimilarityMatch,
};
pub use crp::{
    concept_scores, concept_scores_from_trace, heatmap, lrp_backward, ConceptAttribution,
    RelevanceTrace,
};
pub use error::{Error, ErrorClass, Result};
pub use harness::{
    augment_condition, class_names_of, condition_records, explain_one, run_r1, run_r2,
    write_r1_reports, write_r2_reports, ConditionStats, Experiment, ExplainReport, LengthRecord,
    R1Output, R2Outcome, R2Output, R2Row,
};
pub use network::{
    ActivationTrace, Architecture, Dataset, Instance, Layer, LayerSpec, Network, Split,
    CLASS_COUNT,
};
pub use pnm::{decode_pnm, encode_pgm, load_dataset, load_pnm, to_grayscale};
pub use report::{box_stats, length_summaries, quantile, BoxStats};
pub use rng::{derive_seed, fnv1a64, SplitMix64};
pub use stats::{
    anova_oneway, f_cdf, ln_gamma, reg_inc_beta, t_cdf, t_paired, StatTestResult, TestKind,
};
pub use synth::{synthesize_dataset, MIN_IMAGE_SIZE, SYNTH_CLASS_NAMES};
pub use tensor::{conv2d, cosine_similarity, linear, maxpool2d, relu, softmax, Tensor};
pub use train::{
    accuracy, cross_entropy, finite_diff_max_rel_err, gradients, loss_and_gradients, mean_loss,
    train, LayerGrads, ParamGrads, TrainConfig,
};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};
