//! Command-line entry point: gen | train | eval | noise-sweep |
//! grid-report. Configuration comes from an optional TOML file with
//! flag overrides (flags win); `--help` prints the full default config
//! so every key and default is visible. Exit codes: 0 success, 1
//! usage/config, 2 data, 3 training, 4 evaluation.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{self, PatientRecord, Schema};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::Variant;
use crate::report;
use crate::train::{self, Checkpoint, LabeledSet};

fn default_config_help() -> String {
    format!(
        "CONFIG KEYS AND DEFAULTS (TOML, overridden by flags):\n\n{}",
        RunConfig::default().canonical_toml()
    )
}

#[derive(Parser)]
#[command(
    name = "bayescnn",
    version,
    about = "1-D convolutional mortality classifier with a heteroscedastic \
             aleatoric-uncertainty head, plus the noise/uncertainty analyses",
    after_long_help = default_config_help()
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw-events corpus (events + labels files).
    Gen(GenArgs),
    /// Train the bayesian and/or benchmark ensembles.
    Train(TrainArgs),
    /// Model comparison and median-uncertainty split on the test set.
    Eval(AnalysisArgs),
    /// Retention sweep: uncertainty and AUC as raw data is removed.
    NoiseSweep(SweepArgs),
    /// 16-cell uncertainty×probability grid of AUC deltas.
    GridReport(GridArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every stream [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: runs]
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads, 0 = all cores [default: 0]
    #[arg(long)]
    threads: Option<usize>,
    /// Schema file; empty = embedded 17-feature reference schema
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Events file [default: events.csv, relative to output dir]
    #[arg(long)]
    events: Option<PathBuf>,
    /// Labels file [default: labels.csv, relative to output dir]
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Synthetic corpus size [default: 8000]
    #[arg(long)]
    patients: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ensemble size per variant [default: 5]
    #[arg(long)]
    ensemble: Option<usize>,
    /// Which variants to train: bayesian, benchmark, or both [default: both]
    #[arg(long)]
    variant: Option<String>,
    /// Maximum training epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Monte Carlo draws per instance [default: 100]
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Early-stopping patience in epochs [default: 10]
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct AnalysisArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ensemble size (checkpoints per variant) [default: 5]
    #[arg(long)]
    ensemble: Option<usize>,
    /// Which variants to evaluate: bayesian, benchmark, or both [default: both]
    #[arg(long)]
    variant: Option<String>,
}

impl AnalysisArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = self.common.resolve()?;
        if let Some(ensemble) = self.ensemble {
            config.train.ensemble = ensemble;
        }
        if let Some(variant) = &self.variant {
            config.train.variant = variant.clone();
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Comma-separated retention levels [default: 0.9,0.7,0.5,0.3,0.1]
    #[arg(long, value_delimiter = ',')]
    retentions: Option<Vec<f64>>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Baseline retention for the grid [default: 0.5]
    #[arg(long)]
    baseline_retention: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        if let Some(schema) = &self.schema {
            config.data.schema = schema.clone();
        }
        if let Some(events) = &self.events {
            config.data.events = events.clone();
        }
        if let Some(labels) = &self.labels {
            config.data.labels = labels.clone();
        }
        Ok(config)
    }
}

/// Parses the command line and runs the selected command.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.command {
        Command::Gen(args) => {
            let mut config = args.common.resolve()?;
            if let Some(patients) = args.patients {
                config.data.patients = patients;
            }
            config
        }
        Command::Train(args) => {
            let mut config = args.common.resolve()?;
            if let Some(ensemble) = args.ensemble {
                config.train.ensemble = ensemble;
            }
            if let Some(variant) = &args.variant {
                config.train.variant = variant.clone();
            }
            if let Some(epochs) = args.epochs {
                config.train.max_epochs = epochs;
            }
            if let Some(batch_size) = args.batch_size {
                config.train.batch_size = batch_size;
            }
            if let Some(mc) = args.mc_samples {
                config.train.mc_samples = mc;
            }
            if let Some(patience) = args.patience {
                config.train.patience = patience;
            }
            config
        }
        Command::Eval(args) => args.resolve()?,
        Command::NoiseSweep(args) => {
            let mut config = args.analysis.resolve()?;
            if let Some(retentions) = &args.retentions {
                config.eval.retentions = retentions.clone();
            }
            config
        }
        Command::GridReport(args) => {
            let mut config = args.analysis.resolve()?;
            if let Some(baseline) = args.baseline_retention {
                config.eval.grid_baseline_retention = baseline;
            }
            config
        }
    };
    config.validate()?;
    if config.threads > 0 {
        // Ignore the error if a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    match cli.command {
        Command::Gen(_) => cmd_gen(&config),
        Command::Train(_) => cmd_train(&config),
        Command::Eval(_) => cmd_eval(&config),
        Command::NoiseSweep(_) => cmd_noise_sweep(&config),
        Command::GridReport(_) => cmd_grid_report(&config),
    }
}

// ------------------------------------------------------------------ gen

pub fn cmd_gen(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let schema = config.load_schema()?;
    let records = data::generate_synthetic(
        config.data.patients,
        &schema,
        &config.data.gen,
        config.seed,
    )?;
    let positives = records.iter().filter(|r| r.label).count();
    let rate = positives as f64 / records.len() as f64;
    let provenance = vec![
        ("generator_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("patients".to_string(), records.len().to_string()),
        ("positive_count".to_string(), positives.to_string()),
        ("positive_rate".to_string(), format!("{rate:.6}")),
        ("config_hash".to_string(), config.hash()),
    ];
    data::write_events(&config.events_path(), &records, &schema, &provenance)?;
    data::write_labels(&config.labels_path(), &records, &provenance)?;
    println!(
        "generated {} patients ({} positive, rate {:.4}) -> {}",
        records.len(),
        positives,
        rate,
        config.events_path().display()
    );
    Ok(())
}

// ----------------------------------------------------------------- train

fn selected_variants(config: &RunConfig) -> Vec<Variant> {
    match config.train.variant.as_str() {
        "bayesian" => vec![Variant::Bayesian],
        "benchmark" => vec![Variant::Benchmark],
        _ => vec![Variant::Bayesian, Variant::Benchmark],
    }
}

fn variant_tag(variant: Variant) -> &'static str {
    match variant {
        Variant::Bayesian => "bayesian",
        Variant::Benchmark => "benchmark",
    }
}

/// Reads the corpus, splits it, and fits normalization on the training
/// split. Returns the fitted schema and the three record splits.
type PreparedRecords = (
    Schema,
    Vec<PatientRecord>,
    Vec<PatientRecord>,
    Vec<PatientRecord>,
);

fn prepare_records(config: &RunConfig) -> Result<PreparedRecords> {
    let mut schema = config.load_schema()?;
    let events = config.events_path();
    let labels = config.labels_path();
    if !events.exists() || !labels.exists() {
        return Err(Error::Data(format!(
            "missing {} or {} — run `bayescnn gen` first",
            events.display(),
            labels.display()
        )));
    }
    let records = data::read_records(&events, &labels, &schema)?;
    let (train_records, val_records, test_records) =
        data::split(records, config.data.split_fractions, config.seed)?;
    data::fit_normalization(&mut schema, &train_records)?;
    Ok((schema, train_records, val_records, test_records))
}

fn encode_split(
    records: &[PatientRecord],
    schema: &Schema,
    config: &RunConfig,
    tag: data::SplitTag,
) -> Result<LabeledSet> {
    use rayon::prelude::*;
    let cache_path = config.output_dir.join(format!(
        "matrices_{}.bin",
        match tag {
            data::SplitTag::Train => "train",
            data::SplitTag::Val => "val",
            data::SplitTag::Test => "test",
        }
    ));
    let provenance = format!("config_hash={}", config.hash());
    if config.data.cache_matrices && cache_path.exists() {
        if let Ok(cached) = data::Dataset::load_cache(&cache_path) {
            if cached.provenance == provenance {
                return Ok(LabeledSet::from_matrices(&cached.matrices));
            }
        }
    }
    let matrices: Result<Vec<data::FeatureMatrix>> = records
        .par_iter()
        .map(|r| data::bin_and_impute(r, schema))
        .collect();
    let matrices = matrices?;
    if config.data.cache_matrices {
        data::Dataset {
            matrices: matrices.clone(),
            split: tag,
            provenance,
        }
        .save_cache(&cache_path)?;
    }
    Ok(LabeledSet::from_matrices(&matrices))
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(config.checkpoint_dir())?;
    let logs_dir = config.output_dir.join("logs");
    std::fs::create_dir_all(&logs_dir)?;
    let (schema, train_records, val_records, _) = prepare_records(config)?;
    schema.save(&config.fitted_schema_path())?;
    let train_set = encode_split(&train_records, &schema, config, data::SplitTag::Train)?;
    let val_set = encode_split(&val_records, &schema, config, data::SplitTag::Val)?;
    println!(
        "training on {} instances, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let model_config = config.model_config(schema.total_channels());
    let train_config = config.train_config();
    let hash = config.hash();
    for variant in selected_variants(config) {
        for member in 0..config.train.ensemble {
            let member_seed = train::member_seed_for(config.seed, variant, member);
            let tag = variant_tag(variant);
            let mut outcome = train::train_with_progress(
                &train_set,
                &val_set,
                &model_config,
                &train_config,
                variant,
                member_seed,
                |record| {
                    println!(
                        "[{tag} {member}] epoch {:>3}  train_loss {:.5}  val_auc {:.4}",
                        record.epoch, record.train_loss, record.val_auc
                    );
                },
            )?;
            outcome.checkpoint.config_hash = hash.clone();
            let path = config.checkpoint_path(variant, member);
            outcome.checkpoint.save(&path)?;
            report::write_train_log(
                &logs_dir.join(format!("{tag}_{member}.jsonl")),
                &outcome.log,
                &hash,
            )?;
            println!(
                "[{tag} {member}] best epoch {} val_auc {:.4} -> {}",
                outcome.checkpoint.epoch,
                outcome.checkpoint.val_auc,
                path.display()
            );
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ eval

fn load_ensemble(config: &RunConfig, variant: Variant) -> Result<Vec<Checkpoint>> {
    let mut members = Vec::new();
    for member in 0..config.train.ensemble {
        let path = config.checkpoint_path(variant, member);
        if !path.exists() {
            return Err(Error::Evaluation(format!(
                "missing checkpoint {} — run `bayescnn train` first",
                path.display()
            )));
        }
        let checkpoint = Checkpoint::load(&path)?;
        if checkpoint.config_hash != config.hash() {
            println!(
                "warning: {} was trained under config hash {}, current is {}",
                path.display(),
                &checkpoint.config_hash[..12.min(checkpoint.config_hash.len())],
                &config.hash()[..12]
            );
        }
        members.push(checkpoint);
    }
    Ok(members)
}

fn load_fitted_schema(config: &RunConfig) -> Result<Schema> {
    let path = config.fitted_schema_path();
    if !path.exists() {
        return Err(Error::Evaluation(format!(
            "missing fitted schema {} — run `bayescnn train` first",
            path.display()
        )));
    }
    Schema::load(&path)
}

/// Re-derives the test split deterministically from the corpus files
/// and the config seed.
fn test_records(config: &RunConfig, schema: &Schema) -> Result<Vec<PatientRecord>> {
    let records = data::read_records(&config.events_path(), &config.labels_path(), schema)?;
    let (_, _, test) = data::split(records, config.data.split_fractions, config.seed)?;
    Ok(test)
}

pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let schema = load_fitted_schema(config)?;
    let test = test_records(config, &schema)?;
    let hash = config.hash();

    let mut variants = Vec::new();
    let mut median_split = None;
    for variant in selected_variants(config) {
        let members = load_ensemble(config, variant)?;
        let mut member_aucs = Vec::new();
        let mut splits = Vec::new();
        for (idx, member) in members.iter().enumerate() {
            let scored = eval::score_records(member, &test, &schema, config.seed)?;
            member_aucs.push(eval::auc(&scored)?);
            if config.eval.write_roc_points {
                let points = eval::roc_points(&scored)?;
                report::write_text(
                    &config
                        .output_dir
                        .join(format!("roc_{}_{idx}.csv", variant_tag(variant))),
                    &report::render_roc_csv(&points, &hash),
                )?;
                report::write_text(
                    &config
                        .output_dir
                        .join(format!("scores_{}_{idx}.csv", variant_tag(variant))),
                    &report::render_scores_csv(&scored, &hash),
                )?;
            }
            if variant == Variant::Bayesian && config.eval.median_split {
                splits.push((idx, eval::median_split_analysis(&scored)?));
            }
        }
        if !splits.is_empty() {
            median_split = Some(report::MedianSplitSummary::from_members(splits));
        }
        variants.push(report::VariantSummary::new(variant_tag(variant), member_aucs));
    }

    let eval_report = report::EvalReport {
        config_hash: hash,
        test_size: test.len(),
        test_positives: test.iter().filter(|r| r.label).count(),
        variants,
        median_split,
    };
    report::write_json(&config.output_dir.join("eval_report.json"), &eval_report)?;
    let text = eval_report.render_text();
    report::write_text(&config.output_dir.join("eval_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

// ----------------------------------------------------------- noise sweep

pub fn cmd_noise_sweep(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let schema = load_fitted_schema(config)?;
    let test = test_records(config, &schema)?;
    let members = load_ensemble(config, Variant::Bayesian)?;
    let sweep = eval::retention_sweep(
        &members,
        &test,
        &schema,
        &config.eval.retentions,
        config.seed,
    )?;
    let hash = config.hash();
    report::write_json(&config.output_dir.join("noise_sweep.json"), &sweep)?;
    let text = report::render_sweep_text(&sweep, &hash);
    report::write_text(&config.output_dir.join("noise_sweep.txt"), &text)?;
    report::write_text(
        &config.output_dir.join("noise_sweep.csv"),
        &report::render_sweep_csv(&sweep, &hash),
    )?;
    print!("{text}");
    Ok(())
}

// ------------------------------------------------------------------ grid

pub fn cmd_grid_report(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let schema = load_fitted_schema(config)?;
    let test = test_records(config, &schema)?;
    let members = load_ensemble(config, Variant::Bayesian)?;
    let grid = eval::quartile_grid_analysis(
        &members,
        &test,
        &schema,
        config.eval.grid_baseline_retention,
        config.seed,
    )?;
    let hash = config.hash();
    report::write_json(&config.output_dir.join("grid_report.json"), &grid)?;
    let text = report::render_grid_text(&grid, &hash);
    report::write_text(&config.output_dir.join("grid_report.txt"), &text)?;
    report::write_text(
        &config.output_dir.join("grid_report.csv"),
        &report::render_grid_csv(&grid, &hash),
    )?;
    print!("{text}");
    Ok(())
}
