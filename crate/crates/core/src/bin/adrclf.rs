//! Command-line entry point for the ADR few-shot classification toolkit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use adrclf::backend::svm::{fit_svm_baseline, EmbeddingSource, HashEmbedding, TableEmbedding};
use adrclf::backend::{FreezePolicy, TrainConfig, TrainSampler};
use adrclf::config::load_config;
use adrclf::corpus::{
    compute_stats, generate_synthetic, load_corpus_lenient, stratified_split, Corpus,
    CorpusFormat, SplitSide, SplitSpec,
};
use adrclf::error::Error;
use adrclf::metrics::{confusion, report};
use adrclf::pipeline::{assemble_aggregate, run_experiment, write_aggregate, RunOptions};
use adrclf::postprocess::{apply_med_rule, apply_wh_rule, load_lexicon, RuleKind, RuleOutcome};
use adrclf::report::{
    aggregate_md, corrected_csv, histogram_csv, read_hard_predictions, report_csv, report_md,
    rule_audit_csv, stats_csv, stats_md,
};
use adrclf::sampler::{build_fewshot_sets, manifest_to_jsonl, FewShotMode, FewShotSpec};

#[derive(Parser)]
#[command(
    name = "adrclf",
    about = "Cross-lingual few-shot classification of adverse-drug-reaction posts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file, reporting bad records with line numbers.
    Ingest(IngestArgs),
    /// Corpus statistics: counts, ratios, topic table, length histograms.
    Stats(StatsArgs),
    /// Label-stratified train/dev vs test split.
    Split(SplitArgs),
    /// Sample a few-shot train/dev pair and write its manifest.
    Sample(SampleArgs),
    /// Stage-1 fine-tuning on the source language only.
    TrainSource(ConfigArgs),
    /// Run the configured experiment pipeline end to end.
    Run(RunArgs),
    /// Apply stage-1 models to the target test set without stage 2.
    ZeroShot(ConfigArgs),
    /// Score a predictions file against gold labels.
    Evaluate(EvaluateArgs),
    /// Apply a lexicon rule to predictions, writing corrected labels + audit.
    Postprocess(PostprocessArgs),
    /// Rebuild aggregate.csv / aggregate.md from a run directory.
    Report(ReportArgs),
    /// Generate a synthetic corpus with a fixed class imbalance.
    Synth(SynthArgs),
    /// Train the averaged-embedding SVM baseline on a corpus.
    TrainSvm(TrainSvmArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus file (.jsonl or .csv).
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Write the valid records to this JSONL file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep going on invalid records instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus file.
    input: PathBuf,
    /// Optional train_dev and test files for per-split columns.
    #[arg(long, num_args = 2, value_names = ["TRAIN_DEV", "TEST"])]
    split: Option<Vec<PathBuf>>,
    /// Directory for stats.csv, stats.md and histogram files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Target pool (train/dev JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Source pool, required for add_source mode.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    mode: String,
    #[arg(long)]
    shots: usize,
    #[arg(long, default_value_t = 0)]
    n_neg: usize,
    #[arg(long, default_value_t = 0)]
    n_source: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only the named scenarios (repeatable).
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV (doc_id,label,score) or votes CSV.
    preds: PathBuf,
    /// Gold corpus JSONL.
    gold: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PostprocessArgs {
    /// Which rule to apply: med (flip positives without a drug mention) or
    /// wh (flip positives mentioning a women's-health term).
    #[arg(long)]
    rule: String,
    #[arg(long)]
    lexicon: PathBuf,
    /// Predictions CSV or votes CSV.
    #[arg(long)]
    preds: PathBuf,
    /// Corpus JSONL providing the document texts.
    #[arg(long)]
    docs: PathBuf,
    /// Corrected predictions CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flip audit CSV.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_pos: usize,
    #[arg(long)]
    n_neg: usize,
    #[arg(long, default_value = "de")]
    lang: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Topic weights as "name:weight,name:weight"; must sum to 1.
    #[arg(long)]
    topics: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSvmArgs {
    /// Training corpus JSONL.
    train: PathBuf,
    /// Test corpus JSONL to evaluate on.
    #[arg(long)]
    test: Option<PathBuf>,
    /// "hash" or a fastText .vec file.
    #[arg(long, default_value = "hash")]
    embedding: String,
    #[arg(long, default_value_t = 32)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Disable balanced class weights.
    #[arg(long)]
    unweighted: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_jsonl(path: &Path) -> Result<Corpus, Error> {
    adrclf::corpus::load_corpus(path, CorpusFormat::from_path(path))
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => {
            let format = match args.format.as_deref() {
                Some("jsonl") => CorpusFormat::Jsonl,
                Some("csv") => CorpusFormat::Csv,
                Some(other) => {
                    return Err(Error::Argument(format!(
                        "unknown format '{other}' (jsonl or csv)"
                    )))
                }
                None => CorpusFormat::from_path(&args.input),
            };
            let (corpus, issues) = load_corpus_lenient(&args.input, format)?;
            for issue in &issues {
                eprintln!("{}: {issue}", args.input.display());
            }
            let (pos, neg) = corpus.label_counts();
            println!(
                "{}: {} valid documents ({pos} positive, {neg} negative), {} rejected",
                args.input.display(),
                corpus.len(),
                issues.len()
            );
            if let Some(out) = &args.out {
                corpus.write_jsonl(out)?;
                println!("wrote {}", out.display());
            }
            if !issues.is_empty() && !args.lenient {
                return Err(Error::value(
                    args.input.display().to_string(),
                    format!(
                        "{} invalid record(s); rerun with --lenient to ignore",
                        issues.len()
                    ),
                ));
            }
            Ok(())
        }
        Command::Stats(args) => {
            let corpus = load_jsonl(&args.input)?;
            let split_map = match &args.split {
                Some(paths) => {
                    let train = load_jsonl(&paths[0])?;
                    let test = load_jsonl(&paths[1])?;
                    let mut map = BTreeMap::new();
                    for d in train.iter() {
                        map.insert(d.id.clone(), SplitSide::TrainDev);
                    }
                    for d in test.iter() {
                        map.insert(d.id.clone(), SplitSide::Test);
                    }
                    Some(map)
                }
                None => None,
            };
            let stats = compute_stats(&corpus, split_map.as_ref());
            println!("{}", stats_md(&stats));
            if let Some(ratio) = stats.pos_neg_ratio {
                println!(
                    "{} documents, {} positive / {} negative (1 : {ratio:.1})",
                    stats.n_total, stats.n_pos, stats.n_neg
                );
            }
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                std::fs::write(dir.join("stats.csv"), stats_csv(&stats))
                    .map_err(|e| Error::io(dir.join("stats.csv"), e))?;
                std::fs::write(dir.join("stats.md"), stats_md(&stats))
                    .map_err(|e| Error::io(dir.join("stats.md"), e))?;
                for label in [0u8, 1u8] {
                    let path = dir.join(format!("hist_label{label}.csv"));
                    std::fs::write(&path, histogram_csv(&stats, label))
                        .map_err(|e| Error::io(&path, e))?;
                }
                println!("wrote statistics to {}", dir.display());
            }
            Ok(())
        }
        Command::Split(args) => {
            let corpus = load_jsonl(&args.input)?;
            let (train_dev, test) = stratified_split(
                &corpus,
                &SplitSpec {
                    test_fraction: args.test_fraction,
                    seed: args.seed,
                },
            )?;
            std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
            let train_path = args.out_dir.join("train_dev.jsonl");
            let test_path = args.out_dir.join("test.jsonl");
            train_dev.write_jsonl(&train_path)?;
            test.write_jsonl(&test_path)?;
            let (tp, tn) = train_dev.label_counts();
            let (sp, sn) = test.label_counts();
            println!(
                "train/dev: {} ({tp} pos, {tn} neg) -> {}",
                train_dev.len(),
                train_path.display()
            );
            println!(
                "test: {} ({sp} pos, {sn} neg) -> {}",
                test.len(),
                test_path.display()
            );
            Ok(())
        }
        Command::Sample(args) => {
            let pool = load_jsonl(&args.pool)?;
            let source = args.source.as_deref().map(load_jsonl).transpose()?;
            let mode = match args.mode.as_str() {
                "per_class" => FewShotMode::PerClass,
                "add_neg" => FewShotMode::AddNeg,
                "add_source" => FewShotMode::AddSource,
                other => {
                    return Err(Error::Argument(format!(
                        "unknown mode '{other}' (per_class, add_neg, add_source)"
                    )))
                }
            };
            let spec = FewShotSpec {
                mode,
                shots: args.shots,
                n_neg: args.n_neg,
                n_source: args.n_source,
                sampling_seed: args.seed,
            };
            let sets = build_fewshot_sets(&pool, source.as_ref(), &spec)?;
            println!(
                "{}: train {} documents, dev {} documents",
                spec.scenario_label(),
                sets.train.len(),
                sets.dev.len()
            );
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                sets.train.write_jsonl(&dir.join("train.jsonl"))?;
                sets.dev.write_jsonl(&dir.join("dev.jsonl"))?;
                std::fs::write(
                    dir.join("manifest.jsonl"),
                    manifest_to_jsonl(&sets.manifest),
                )
                .map_err(|e| Error::io(dir.join("manifest.jsonl"), e))?;
                println!("wrote sets and manifest to {}", dir.display());
            } else {
                print!("{}", manifest_to_jsonl(&sets.manifest));
            }
            Ok(())
        }
        Command::TrainSource(args) => {
            let loaded = load_with_env(&args.config)?;
            let outcome = run_experiment(
                &loaded,
                &RunOptions {
                    scenario_filter: Vec::new(),
                    stage1_only: true,
                },
            )?;
            println!(
                "stage-1 complete: {} fits executed, {} resumed ({})",
                outcome.executed_jobs,
                outcome.skipped_jobs,
                outcome.run_dir.display()
            );
            Ok(())
        }
        Command::Run(args) => {
            let loaded = load_with_env(&args.config)?;
            let outcome = run_experiment(
                &loaded,
                &RunOptions {
                    scenario_filter: args.scenarios,
                    stage1_only: false,
                },
            )?;
            println!(
                "test set: {} documents before the length filter, {} after",
                outcome.test_size_pre_filter, outcome.test_size_post_filter
            );
            println!(
                "jobs: {} executed, {} resumed",
                outcome.executed_jobs, outcome.skipped_jobs
            );
            for (scenario, seed, message) in &outcome.seed_failures {
                eprintln!("degraded: {scenario} sampling seed {seed}: {message}");
            }
            println!("{}", aggregate_md(&outcome.rows));
            println!("run directory: {}", outcome.run_dir.display());
            Ok(())
        }
        Command::ZeroShot(args) => {
            let loaded = load_with_env(&args.config)?;
            let zero_shot: Vec<String> = loaded
                .config
                .scenarios
                .iter()
                .filter(|s| s.kind == adrclf::config::ScenarioKind::ZeroShot)
                .map(|s| s.name.clone())
                .collect();
            if zero_shot.is_empty() {
                return Err(Error::Config("no zero_shot scenario in the config".into()));
            }
            let outcome = run_experiment(
                &loaded,
                &RunOptions {
                    scenario_filter: zero_shot,
                    stage1_only: false,
                },
            )?;
            println!("{}", aggregate_md(&outcome.rows));
            Ok(())
        }
        Command::Evaluate(args) => {
            let preds = read_hard_predictions(&args.preds)?;
            let gold = load_jsonl(&args.gold)?;
            let by_id: BTreeMap<&str, u8> = gold.iter().map(|d| (d.id.as_str(), d.label)).collect();
            let mut pred_labels = Vec::with_capacity(preds.len());
            let mut gold_labels = Vec::with_capacity(preds.len());
            for (id, label) in &preds {
                match by_id.get(id.as_str()) {
                    Some(&g) => {
                        pred_labels.push(*label);
                        gold_labels.push(g);
                    }
                    None => {
                        return Err(Error::Alignment(format!(
                            "prediction for unknown document id '{id}'"
                        )))
                    }
                }
            }
            let cm = confusion(&pred_labels, &gold_labels)?;
            let rep = report(&cm);
            println!("{}", report_md(&rep));
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                std::fs::write(dir.join("report.csv"), report_csv(&rep))
                    .map_err(|e| Error::io(dir.join("report.csv"), e))?;
                std::fs::write(dir.join("report.md"), report_md(&rep))
                    .map_err(|e| Error::io(dir.join("report.md"), e))?;
                println!("wrote report.csv and report.md to {}", dir.display());
            }
            Ok(())
        }
        Command::Postprocess(args) => {
            let rule = match args.rule.as_str() {
                "med" => RuleKind::MedPresence,
                "wh" => RuleKind::WomensHealth,
                other => {
                    return Err(Error::Argument(format!(
                        "unknown rule '{other}' (med or wh)"
                    )))
                }
            };
            let lexicon = load_lexicon(&args.lexicon, &args.rule)?;
            let preds = read_hard_predictions(&args.preds)?;
            let docs = load_jsonl(&args.docs)?;
            let by_id: BTreeMap<&str, &adrclf::corpus::Document> =
                docs.iter().map(|d| (d.id.as_str(), d)).collect();
            let mut outcomes: Vec<RuleOutcome> = Vec::with_capacity(preds.len());
            for (id, label) in &preds {
                let doc = by_id.get(id.as_str()).ok_or_else(|| {
                    Error::Alignment(format!("prediction for unknown document id '{id}'"))
                })?;
                outcomes.push(match rule {
                    RuleKind::MedPresence => apply_med_rule(doc, *label, &lexicon),
                    RuleKind::WomensHealth => apply_wh_rule(doc, *label, &lexicon),
                });
            }
            let flips = outcomes.iter().filter(|o| o.flipped).count();
            println!(
                "{}: {} predictions, {flips} flipped to negative",
                rule.as_str(),
                outcomes.len()
            );
            let out = args.out.unwrap_or_else(|| PathBuf::from("corrected.csv"));
            std::fs::write(&out, corrected_csv(&outcomes)).map_err(|e| Error::io(&out, e))?;
            println!("wrote {}", out.display());
            if let Some(audit) = &args.audit {
                std::fs::write(audit, rule_audit_csv(&outcomes))
                    .map_err(|e| Error::io(audit, e))?;
                println!("wrote {}", audit.display());
            }
            Ok(())
        }
        Command::Report(args) => {
            let rows = assemble_aggregate(&args.run_dir)?;
            if rows.is_empty() {
                return Err(Error::value(
                    args.run_dir.display().to_string(),
                    "no scenario reports found under runs/",
                ));
            }
            write_aggregate(&args.run_dir, &rows)?;
            println!("{}", aggregate_md(&rows));
            println!(
                "wrote {} and {}",
                args.run_dir.join("aggregate.csv").display(),
                args.run_dir.join("aggregate.md").display()
            );
            Ok(())
        }
        Command::Synth(args) => {
            let weights = match &args.topics {
                Some(spec) => {
                    let mut map = BTreeMap::new();
                    for part in spec.split(',') {
                        let (name, weight) = part.rsplit_once(':').ok_or_else(|| {
                            Error::Argument(format!("bad topic weight '{part}' (name:weight)"))
                        })?;
                        let weight: f64 = weight
                            .parse()
                            .map_err(|_| Error::Argument(format!("bad weight in '{part}'")))?;
                        map.insert(name.trim().to_string(), weight);
                    }
                    map
                }
                None => BTreeMap::from([
                    ("women's health".to_string(), 0.76),
                    ("skin".to_string(), 0.12),
                    ("heart".to_string(), 0.12),
                ]),
            };
            let corpus =
                generate_synthetic(args.n_pos, args.n_neg, &weights, &args.lang, args.seed)?;
            corpus.write_jsonl(&args.out)?;
            println!(
                "wrote {} documents ({} positive, {} negative) to {}",
                corpus.len(),
                args.n_pos,
                args.n_neg,
                args.out.display()
            );
            Ok(())
        }
        Command::TrainSvm(args) => {
            let train = load_jsonl(&args.train)?;
            let embeddings: Arc<dyn EmbeddingSource> = if args.embedding == "hash" {
                Arc::new(HashEmbedding::new(args.embedding_dim, 13))
            } else {
                Arc::new(TableEmbedding::load_vec_file(
                    Path::new(&args.embedding),
                    true,
                )?)
            };
            let config = TrainConfig {
                learning_rate: args.learning_rate,
                batch_size: 1,
                freeze_policy: FreezePolicy::None,
                train_sampler: if args.unweighted {
                    TrainSampler::Random
                } else {
                    TrainSampler::ClassWeighted
                },
                max_epochs: args.epochs,
                patience: args.epochs,
                model_seed: args.seed,
                model_id: "svm".into(),
            };
            let model = fit_svm_baseline(&train, embeddings.clone(), &config)?;
            println!(
                "trained SVM on {} documents ({} epochs)",
                train.len(),
                model.log.len()
            );
            if let Some(test_path) = &args.test {
                let test = load_jsonl(test_path)?;
                let backend = adrclf::backend::svm::EmbeddingSvmBackend::new(embeddings);
                use adrclf::backend::ClassifierBackend as _;
                let docs: Vec<adrclf::preprocess::ProcessedDocument> = test
                    .iter()
                    .map(|d| adrclf::preprocess::ProcessedDocument {
                        id: d.id.clone(),
                        tokens: d.text.split_whitespace().map(str::to_string).collect(),
                        original_id: d.id.clone(),
                        dropped: false,
                    })
                    .collect();
                let preds = backend.predict_state(&model.state, &docs)?;
                let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
                let gold: Vec<u8> = test.iter().map(|d| d.label).collect();
                let rep = report(&confusion(&labels, &gold)?);
                println!("{}", report_md(&rep));
            }
            Ok(())
        }
    }
}

/// Load a config, honoring the ADR_RUN_DIR override.
fn load_with_env(path: &Path) -> Result<adrclf::config::LoadedConfig, Error> {
    let mut loaded = load_config(path)?;
    if let Ok(dir) = std::env::var("ADR_RUN_DIR") {
        if !dir.is_empty() {
            loaded.config.paths.run_dir = PathBuf::from(dir);
        }
    }
    Ok(loaded)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
