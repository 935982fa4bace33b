//! `cxai` — train a small CNN image classifier, explain its decisions
//! contrastively at the concept level, and run the two statistics-backed
//! studies (explanation length across relevance ranges, robustness under
//! augmentations).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! error.

use clap::{Parser, Subcommand};
use cxai_core::{
    encode_pgm, explain_one, length_summaries, run_r1, run_r2, synthesize_dataset,
    write_r1_reports, write_r2_reports, Error, Experiment, ExperimentConfig, ExplainReport,
    R2Outcome, RelevanceRange, Result, Split,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cxai", version, about = "Concept-based contrastive explanations for a small CNN")]
struct Cli {
    /// Experiment config file (flat `key = value` lines, `#` comments);
    /// built-in defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's global seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the config's output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model from scratch and save its weights
    Train,
    /// Contrastively explain one correctly classified test instance
    Explain {
        /// Test-instance id, e.g. "teapot/te0003"
        #[arg(long, value_name = "ID")]
        target: String,

        /// Relevance range: very_strong, strong, low, or very_low
        #[arg(long, default_value = "very_strong", value_name = "NAME")]
        range: String,

        /// Emit one JSON object (keys: target_id, target_class, match_id,
        /// contrast_class, similarity, range, present, absent, length,
        /// explanation, concept_names, concept_scores)
        #[arg(long)]
        json: bool,
    },
    /// Explanation-length study across relevance ranges (one-way ANOVA)
    R1,
    /// Robustness study across augmentations (paired t-tests)
    R2,
    /// Materialize the synthetic dataset as PGM files under the out dir
    Synth,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.class().exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Train => train_cmd(cfg),
        Command::Explain {
            target,
            range,
            json,
        } => explain_cmd(cfg, &target, &range, json),
        Command::R1 => r1_cmd(cfg),
        Command::R2 => r2_cmd(cfg),
        Command::Synth => synth_cmd(cfg),
    }
}

fn train_cmd(mut cfg: ExperimentConfig) -> Result<()> {
    // `train` always retrains; an existing weights file is only a save target
    let weights_file = cfg.weights_file.take();
    let mut exp = Experiment::prepare(cfg)?;
    exp.config.weights_file = weights_file;
    let path = exp.save_model()?;
    println!(
        "trained {} epoch(s) on {} images (seed {})",
        exp.config.epochs,
        exp.train_data.len(),
        exp.config.seed
    );
    println!("train accuracy: {:.4}", exp.train_accuracy()?);
    println!("test accuracy:  {:.4}", exp.test_accuracy()?);
    println!("weights: {}", path.display());
    Ok(())
}

fn explain_cmd(cfg: ExperimentConfig, target: &str, range: &str, json: bool) -> Result<()> {
    let range: RelevanceRange = range.parse()?;
    let exp = Experiment::prepare(cfg)?;
    let report = explain_one(&exp, target, range)?;
    if json {
        let value = report_json(&report);
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("report serializes")
        );
    } else {
        print_report(&report);
    }
    Ok(())
}

fn report_json(report: &ExplainReport) -> serde_json::Value {
    let e = &report.explanation;
    serde_json::json!({
        "target_id": e.target_id,
        "target_class": e.target_class,
        "match_id": e.match_id,
        "contrast_class": e.contrast_class,
        "similarity": e.similarity,
        "range": e.range.label(),
        "present": e.present,
        "absent": e.absent,
        "length": e.length,
        "explanation": e.rendered,
        "concept_names": report.concept_names,
        "concept_scores": report.concept_scores,
    })
}

fn print_report(report: &ExplainReport) {
    let e = &report.explanation;
    println!("{}", e.rendered);
    println!();
    println!("target: {} ({})", e.target_id, e.target_class);
    println!(
        "match:  {} ({}), cosine similarity {:.4}",
        e.match_id, e.contrast_class, e.similarity
    );
    println!(
        "range:  {}   length: {} (present {:?}, absent {:?})",
        e.range, e.length, e.present, e.absent
    );
    println!();
    println!("concept relevance (descending):");
    let mut order: Vec<usize> = (0..report.concept_scores.len()).collect();
    order.sort_by(|&a, &b| {
        report.concept_scores[b]
            .total_cmp(&report.concept_scores[a])
            .then(a.cmp(&b))
    });
    for c in order {
        println!(
            "  {:>3}  {:<16} {:+.6}",
            c, report.concept_names[c], report.concept_scores[c]
        );
    }
}

fn r1_cmd(cfg: ExperimentConfig) -> Result<()> {
    let exp = Experiment::prepare(cfg)?;
    let out = run_r1(&exp)?;
    let files = write_r1_reports(&exp, &out)?;
    println!("test accuracy: {:.4}", out.test_accuracy);
    println!(
        "explained {} instances in all 4 ranges ({} records)",
        out.stats.n_explained,
        out.records.len()
    );
    println!("explanation length by range:");
    for (_, range, stats) in length_summaries(&out.records) {
        println!(
            "  {:<12} n={:<4} median={:<5} q1={:<5} q3={:<5} min={} max={}",
            range.label(),
            stats.n,
            stats.median,
            stats.q1,
            stats.q3,
            stats.min,
            stats.max
        );
    }
    println!(
        "anova: F = {:.4} (df {}, {}), p = {:.6e}",
        out.anova.statistic, out.anova.df.0, out.anova.df.1, out.anova.p_value
    );
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn r2_cmd(cfg: ExperimentConfig) -> Result<()> {
    let exp = Experiment::prepare(cfg)?;
    let out = run_r2(&exp)?;
    let files = write_r2_reports(&exp, &out)?;
    for cond in &out.conditions {
        println!(
            "condition {:<10} correct {:>4}  explained {:>4}  dropped: {} misclassified, {} degenerate, {} no-contrast",
            cond.condition,
            cond.n_correct,
            cond.n_explained,
            cond.n_dropped_misclassified,
            cond.n_dropped_degenerate,
            cond.n_dropped_no_contrast
        );
    }
    println!(
        "{:<14} {:<12} {:>10} {:>10} {:>10} {:>10} {:>5}",
        "augmentation", "range", "t", "p", "mean_orig", "mean_aug", "n"
    );
    for row in &out.rows {
        let (t, p) = match &row.outcome {
            R2Outcome::Test(result) => {
                (format!("{:.4}", result.statistic), format!("{:.4}", result.p_value))
            }
            R2Outcome::ZeroVariance | R2Outcome::TooFewPairs => ("n/a".into(), "n/a".into()),
        };
        let mean = |m: Option<f64>| match m {
            Some(v) => format!("{v:.4}"),
            None => "n/a".into(),
        };
        println!(
            "{:<14} {:<12} {:>10} {:>10} {:>10} {:>10} {:>5}",
            row.augmentation,
            row.range.label(),
            t,
            p,
            mean(row.mean_orig),
            mean(row.mean_aug),
            row.n
        );
    }
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn synth_cmd(cfg: ExperimentConfig) -> Result<()> {
    let mut written = [0usize; 2];
    let splits = [
        (Split::Train, cfg.synth_per_class, "train", 0usize),
        (Split::Test, cfg.synth_test_per_class, "test", 1usize),
    ];
    for (split, count, sub, slot) in splits {
        let data = synthesize_dataset(count, cfg.synth_image_size, cfg.synth_seed(), split)?;
        for inst in data.instances() {
            let (class, stem) = inst
                .id
                .split_once('/')
                .expect("synthetic ids are class-prefixed");
            let dir = cfg.out_dir.join(sub).join(class);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join(format!("{stem}.pgm"));
            let bytes = encode_pgm(&inst.image)?;
            std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            written[slot] += 1;
        }
    }
    println!(
        "wrote {} train and {} test images under {}",
        written[0],
        written[1],
        cfg.out_dir.display()
    );
    println!("note: PGM files are 8-bit; reloading them quantizes intensities to 1/255 steps");
    Ok(())
}
