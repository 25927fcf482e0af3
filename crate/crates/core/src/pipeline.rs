//! Config-driven experiment orchestration over a run directory.
//!
//! The run-dir layout is a public contract:
//!
//! ```text
//! <run_dir>/
//!   config.toml                  verbatim config snapshot
//!   manifest.jsonl               one record per completed job / written file
//!   corpus/                      ingested corpora and their splits
//!   stage1/<model_id>/model_<seed>/{checkpoint.json, train_log.csv}
//!   runs/<scenario>/<sampling_seed>/model_<seed>/
//!        {checkpoint.json, train_log.csv, predictions.csv}
//!   runs/<scenario>/<sampling_seed>/{votes.csv, sets_manifest.jsonl}
//!   runs/<scenario>/reports.jsonl  per-group, per-variant metric reports
//!   reports/                     corpus statistics, source-side summaries
//!   aggregate.csv, aggregate.md  final table
//!   summary.md
//! ```
//!
//! Completed jobs are detected through the manifest (keyed by job id and
//! config hash) and skipped on re-runs; with the stub backend a finished run
//! directory reproduces byte-identical CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{
    fit_stage1, fit_stage2, ClassifierBackend, LabeledExample, Prediction, TrainConfig,
    TrainedModel,
};
use crate::backend::registry::ModelRegistry;
use crate::config::{LoadedConfig, ScenarioConfig, ScenarioKind, TrainParams};
use crate::corpus::{
    compute_stats, generate_synthetic, load_corpus, stratified_split, Corpus, CorpusFormat,
    Document, SplitSide, SplitSpec,
};
use crate::ensemble::{
    majority_vote, EnsembleSpec, GridInputs, JobResult, JobStore,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, MetricsReport};
use crate::postprocess::{
    builtin_medication_lexicon, builtin_womens_health_lexicon, evaluate_rules, load_lexicon,
    Lexicon, RuleKind,
};
use crate::preprocess::{preprocess, NormalizerConfig, ProcessedDocument};
use crate::report::{
    aggregate_csv, aggregate_md, histogram_csv, per_model_table_md, predictions_csv,
    read_predictions, stats_csv, stats_md, votes_csv, AggregateRow,
};
use crate::sampler::manifest_to_jsonl;

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub kind: String,
    pub key: String,
    pub command: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sampling_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_seed: Option<u64>,
}

/// Append-only job/file ledger backed by `manifest.jsonl`.
pub struct Manifest {
    path: PathBuf,
    seen: Mutex<std::collections::BTreeSet<(String, String)>>,
}

impl Manifest {
    pub fn open(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("manifest.jsonl");
        let mut seen = std::collections::BTreeSet::new();
        if path.exists() {
            let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for line in raw.lines().filter(|l| !l.trim().is_empty()) {
                let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                    Error::schema(path.display().to_string(), format!("manifest: {e}"))
                })?;
                seen.insert((record.key, record.config_hash));
            }
        }
        Ok(Self {
            path,
            seen: Mutex::new(seen),
        })
    }

    pub fn completed(&self, key: &str, config_hash: &str) -> bool {
        self.seen
            .lock()
            .unwrap()
            .contains(&(key.to_string(), config_hash.to_string()))
    }

    pub fn record(&self, record: ManifestRecord) -> Result<()> {
        let mut seen = self.seen.lock().unwrap();
        if seen.contains(&(record.key.clone(), record.config_hash.clone())) {
            return Ok(());
        }
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        seen.insert((record.key, record.config_hash));
        Ok(())
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// One (group, variant) metric report row, as persisted per scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    /// Aggregation group: a sampling seed, a model seed, or "vote".
    pub group: String,
    /// "raw" or a post-processing rule name.
    pub variant: String,
    pub report: MetricsReport,
}

/// Options for [`run_experiment`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run only these scenario names (all when empty).
    pub scenario_filter: Vec<String>,
    /// Stop after stage-1 source fine-tuning.
    pub stage1_only: bool,
    /// Fail the run when any sampling seed degrades (overrides the config).
    pub strict: bool,
}

/// Summary of one pipeline execution.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<AggregateRow>,
    pub test_size_pre_filter: usize,
    pub test_size_post_filter: usize,
    pub train_dev_size_pre_filter: usize,
    pub train_dev_size_post_filter: usize,
    pub executed_jobs: usize,
    pub skipped_jobs: usize,
    pub seed_failures: Vec<(String, u64, String)>,
}

struct JobCounters {
    executed: AtomicUsize,
    skipped: AtomicUsize,
}

/// Filesystem-backed job store under `runs/<scenario>/`.
struct FsJobStore<'a> {
    run_dir: &'a Path,
    scenario: String,
    manifest: &'a Manifest,
    config_hash: &'a str,
    counters: &'a JobCounters,
}

impl<'a> FsJobStore<'a> {
    fn job_key(&self, sampling_seed: u64, model_seed: u64) -> String {
        format!("runs/{}/{}/model_{}", self.scenario, sampling_seed, model_seed)
    }

    fn job_dir(&self, sampling_seed: u64, model_seed: u64) -> PathBuf {
        self.run_dir
            .join("runs")
            .join(&self.scenario)
            .join(sampling_seed.to_string())
            .join(format!("model_{model_seed}"))
    }
}

impl<'a> JobStore for FsJobStore<'a> {
    fn load(&self, sampling_seed: u64, model_seed: u64) -> Option<Vec<Prediction>> {
        let key = self.job_key(sampling_seed, model_seed);
        if !self.manifest.completed(&key, self.config_hash) {
            return None;
        }
        let path = self.job_dir(sampling_seed, model_seed).join("predictions.csv");
        match read_predictions(&path) {
            Ok(preds) => {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                Some(preds)
            }
            Err(_) => None,
        }
    }

    fn save(&self, job: &JobResult, sets: &crate::sampler::FewShotSets) -> Result<()> {
        let dir = self.job_dir(job.sampling_seed, job.model_seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if let Some(model) = &job.model {
            model.save_json(&dir.join("checkpoint.json"))?;
            write_file(&dir.join("train_log.csv"), &model.log_csv())?;
        }
        write_file(&dir.join("predictions.csv"), &predictions_csv(&job.predictions))?;
        let _ = sets;
        self.counters.executed.fetch_add(1, Ordering::Relaxed);
        self.manifest.record(ManifestRecord {
            kind: "job".into(),
            key: self.job_key(job.sampling_seed, job.model_seed),
            command: "run".into(),
            config_hash: self.config_hash.to_string(),
            scenario: Some(self.scenario.clone()),
            sampling_seed: Some(job.sampling_seed),
            model_seed: Some(job.model_seed),
        })
    }
}

fn corpus_format(path: &Path) -> CorpusFormat {
    CorpusFormat::from_path(path)
}

/// Examples for the kept documents of a corpus; dropped ids separately.
fn preprocess_corpus(
    corpus: &Corpus,
    normalizer: &NormalizerConfig,
) -> (Vec<LabeledExample>, Vec<String>) {
    let mut examples = Vec::with_capacity(corpus.len());
    let mut dropped = Vec::new();
    for doc in corpus.iter() {
        let processed = preprocess(doc, normalizer);
        if processed.dropped {
            dropped.push(processed.id);
        } else {
            examples.push(LabeledExample::from_processed(doc, &processed));
        }
    }
    (examples, dropped)
}

fn filter_to_kept(corpus: &Corpus, normalizer: &NormalizerConfig, name: &str) -> Result<Corpus> {
    let docs: Vec<Document> = corpus
        .iter()
        .filter(|d| !preprocess(d, normalizer).dropped)
        .cloned()
        .collect();
    Corpus::new(name, docs)
}

struct Prepared {
    target_train_pool: Corpus,
    source_pool: Option<Corpus>,
    test_docs_kept: Vec<Document>,
    test_processed: Vec<ProcessedDocument>,
    test_gold: Vec<u8>,
    source_stage1_train: Vec<LabeledExample>,
    source_stage1_dev: Vec<LabeledExample>,
    source_test: Vec<LabeledExample>,
    test_size_pre_filter: usize,
    train_dev_size_pre_filter: usize,
    train_dev_size_post_filter: usize,
}

struct Pipeline<'a> {
    loaded: &'a LoadedConfig,
    run_dir: PathBuf,
    manifest: Manifest,
    registry: ModelRegistry,
    counters: JobCounters,
    /// stage-1 models per (model_id, seed list) cache
    stage1_cache: BTreeMap<String, Vec<TrainedModel>>,
}

impl<'a> Pipeline<'a> {
    fn new(loaded: &'a LoadedConfig, run_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        write_file(&run_dir.join("config.toml"), &loaded.raw)?;
        let manifest = Manifest::open(&run_dir)?;
        let registry = match &loaded.config.paths.registry {
            Some(path) => ModelRegistry::load(path)?,
            None => ModelRegistry::builtin(),
        };
        Ok(Self {
            loaded,
            run_dir,
            manifest,
            registry,
            counters: JobCounters {
                executed: AtomicUsize::new(0),
                skipped: AtomicUsize::new(0),
            },
            stage1_cache: BTreeMap::new(),
        })
    }

    fn config(&self) -> &crate::config::ExperimentConfig {
        &self.loaded.config
    }

    /// Write a run-dir file and record it in the manifest.
    fn put_file(
        &self,
        relative: &str,
        content: &str,
        command: &str,
        scenario: Option<&str>,
        sampling_seed: Option<u64>,
        model_seed: Option<u64>,
    ) -> Result<()> {
        write_file(&self.run_dir.join(relative), content)?;
        self.manifest.record(ManifestRecord {
            kind: "file".into(),
            key: relative.to_string(),
            command: command.to_string(),
            config_hash: self.loaded.hash.clone(),
            scenario: scenario.map(str::to_string),
            sampling_seed,
            model_seed,
        })
    }

    fn load_target(&self) -> Result<Corpus> {
        if let Some(path) = &self.config().paths.target_corpus {
            return load_corpus(path, corpus_format(path));
        }
        let spec = self.config().synthetic.target.as_ref().expect("validated");
        generate_synthetic(spec.n_pos, spec.n_neg, &spec.weights(), &spec.lang, spec.seed)
    }

    fn load_source(&self) -> Result<Option<Corpus>> {
        if let Some(path) = &self.config().paths.source_corpus {
            return Ok(Some(load_corpus(path, corpus_format(path))?));
        }
        match &self.config().synthetic.source {
            Some(spec) => Ok(Some(generate_synthetic(
                spec.n_pos,
                spec.n_neg,
                &spec.weights(),
                &spec.lang,
                spec.seed,
            )?)),
            None => Ok(None),
        }
    }

    fn prepare(&self) -> Result<Prepared> {
        let cfg = self.config();
        let normalizer = &cfg.preprocess;
        let target = self.load_target()?;
        let source = self.load_source()?;

        let corpus_dir = self.run_dir.join("corpus");
        fs::create_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;
        target.write_jsonl(&corpus_dir.join("target.jsonl"))?;

        let split_spec = SplitSpec {
            test_fraction: cfg.split.test_fraction,
            seed: cfg.split.seed,
        };
        let (train_dev, test) = stratified_split(&target, &split_spec)?;
        train_dev.write_jsonl(&corpus_dir.join("target_train_dev.jsonl"))?;
        test.write_jsonl(&corpus_dir.join("target_test.jsonl"))?;

        // Table-2-style statistics over the split
        let mut split_map = BTreeMap::new();
        for d in train_dev.iter() {
            split_map.insert(d.id.clone(), SplitSide::TrainDev);
        }
        for d in test.iter() {
            split_map.insert(d.id.clone(), SplitSide::Test);
        }
        let stats = compute_stats(&target, Some(&split_map));
        write_file(&self.run_dir.join("reports/target_stats.md"), &stats_md(&stats))?;
        write_file(&self.run_dir.join("reports/target_stats.csv"), &stats_csv(&stats))?;
        for label in [0u8, 1u8] {
            write_file(
                &self.run_dir.join(format!("reports/target_hist_label{label}.csv")),
                &histogram_csv(&stats, label),
            )?;
        }

        // The length filter runs after the split; both sizes are reported.
        let test_size_pre_filter = test.len();
        let train_dev_size_pre_filter = train_dev.len();
        let target_train_pool = filter_to_kept(&train_dev, normalizer, "target_pool")?;
        let mut test_docs_kept = Vec::new();
        let mut test_processed = Vec::new();
        let mut test_gold = Vec::new();
        for doc in test.iter() {
            let processed = preprocess(doc, normalizer);
            if !processed.dropped {
                test_docs_kept.push(doc.clone());
                test_gold.push(doc.label);
                test_processed.push(processed);
            }
        }

        let mut source_pool = None;
        let mut source_stage1_train = Vec::new();
        let mut source_stage1_dev = Vec::new();
        let mut source_test = Vec::new();
        if let Some(source) = source {
            source.write_jsonl(&corpus_dir.join("source.jsonl"))?;
            let (src_train_dev, src_test) = stratified_split(&source, &split_spec)?;
            src_train_dev.write_jsonl(&corpus_dir.join("source_train_dev.jsonl"))?;
            src_test.write_jsonl(&corpus_dir.join("source_test.jsonl"))?;
            let inner_spec = SplitSpec {
                test_fraction: cfg.split.test_fraction,
                seed: cfg.split.seed.wrapping_add(1),
            };
            let (s1_train, s1_dev) = stratified_split(&src_train_dev, &inner_spec)?;
            source_stage1_train = preprocess_corpus(&s1_train, normalizer).0;
            source_stage1_dev = preprocess_corpus(&s1_dev, normalizer).0;
            source_test = preprocess_corpus(&src_test, normalizer).0;
            source_pool = Some(filter_to_kept(&src_train_dev, normalizer, "source_pool")?);
        }

        Ok(Prepared {
            train_dev_size_post_filter: target_train_pool.len(),
            target_train_pool,
            source_pool,
            test_size_pre_filter,
            train_dev_size_pre_filter,
            test_processed,
            test_gold,
            test_docs_kept,
            source_stage1_train,
            source_stage1_dev,
            source_test,
        })
    }

    /// Stage-1 models for a model id, fitted or restored per model seed.
    fn stage1_models(
        &mut self,
        model_id: &str,
        seeds: &[u64],
        prepared: &Prepared,
    ) -> Result<Vec<TrainedModel>> {
        if let Some(models) = self.stage1_cache.get(model_id) {
            if models.len() == seeds.len() {
                return Ok(models.clone());
            }
        }
        let backend = self.registry.create_backend(model_id)?;
        let params = &self.config().backend.stage1;
        let mut models = Vec::with_capacity(seeds.len());
        if backend.single_stage() {
            for &seed in seeds {
                let config = self.adjusted(params, model_id, seed, &*backend);
                let state = backend.init_state(&config)?;
                models.push(TrainedModel {
                    backend: backend.name().to_string(),
                    config,
                    state,
                    log: Vec::new(),
                    best_epoch: 0,
                    best_dev_macro_f1: 0.0,
                });
            }
            self.stage1_cache.insert(model_id.to_string(), models.clone());
            return Ok(models);
        }
        if prepared.source_stage1_train.is_empty() {
            return Err(Error::Config(format!(
                "backend '{model_id}' needs stage-1 source data; configure paths.source_corpus \
                 or synthetic.source"
            )));
        }
        let mut source_rows: Vec<(String, MetricsReport)> = Vec::new();
        for &seed in seeds {
            let key = format!("stage1/{model_id}/model_{seed}");
            let dir = self.run_dir.join(&key);
            let checkpoint = dir.join("checkpoint.json");
            let model = if self.manifest.completed(&key, &self.loaded.hash) && checkpoint.exists() {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                TrainedModel::load_json(&checkpoint)?
            } else {
                let config = self.adjusted(params, model_id, seed, &*backend);
                let model = fit_stage1(
                    &*backend,
                    &prepared.source_stage1_train,
                    &prepared.source_stage1_dev,
                    &config,
                )?;
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                model.save_json(&checkpoint)?;
                write_file(&dir.join("train_log.csv"), &model.log_csv())?;
                self.counters.executed.fetch_add(1, Ordering::Relaxed);
                self.manifest.record(ManifestRecord {
                    kind: "job".into(),
                    key: key.clone(),
                    command: "train-source".into(),
                    config_hash: self.loaded.hash.clone(),
                    scenario: None,
                    sampling_seed: None,
                    model_seed: Some(seed),
                })?;
                model
            };
            // source-side quality of this seed, on the held-out source test
            if !prepared.source_test.is_empty() {
                let docs: Vec<ProcessedDocument> = prepared
                    .source_test
                    .iter()
                    .map(|e| ProcessedDocument {
                        id: e.id.clone(),
                        tokens: e.tokens.clone(),
                        original_id: e.id.clone(),
                        dropped: false,
                    })
                    .collect();
                let preds = backend.predict_state(&model.state, &docs)?;
                let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
                let gold: Vec<u8> = prepared.source_test.iter().map(|e| e.label).collect();
                let cm = confusion(&labels, &gold)?;
                source_rows.push((format!("{model_id}_seed{seed}"), report(&cm)));
            }
            models.push(model);
        }
        if !source_rows.is_empty() {
            write_file(
                &self
                    .run_dir
                    .join(format!("reports/source_stage1_{model_id}.md")),
                &per_model_table_md(&source_rows),
            )?;
        }
        self.stage1_cache.insert(model_id.to_string(), models.clone());
        Ok(models)
    }

    /// Resolve train params to a config, downgrading the freeze policy for
    /// backends that cannot freeze.
    fn adjusted(
        &self,
        params: &TrainParams,
        model_id: &str,
        seed: u64,
        backend: &dyn ClassifierBackend,
    ) -> TrainConfig {
        let mut config = params.to_train_config(model_id, seed);
        if config.freeze_policy == crate::backend::FreezePolicy::AllButClassifier
            && !backend.capabilities().supports_freezing
        {
            log::info!(
                "backend '{model_id}' does not support freezing; training all parameters"
            );
            config.freeze_policy = crate::backend::FreezePolicy::None;
        }
        config
    }

    fn rule_lexicons(&self) -> Result<BTreeMap<RuleKind, Lexicon>> {
        let med = match &self.config().paths.med_lexicon {
            Some(path) => load_lexicon(path, "medications")?,
            None => builtin_medication_lexicon(),
        };
        let wh = match &self.config().paths.wh_lexicon {
            Some(path) => load_lexicon(path, "womens_health")?,
            None => builtin_womens_health_lexicon(),
        };
        Ok(BTreeMap::from([
            (RuleKind::MedPresence, med),
            (RuleKind::WomensHealth, wh),
        ]))
    }

    /// Raw + per-rule reports for one group of hard predictions.
    fn variant_rows(
        &self,
        scenario: &str,
        group: &str,
        preds: &[(String, u8)],
        gold_docs: &[Document],
        lexicons: &BTreeMap<RuleKind, Lexicon>,
    ) -> Result<Vec<ReportRow>> {
        let labels: Vec<u8> = preds.iter().map(|(_, l)| *l).collect();
        let gold: Vec<u8> = gold_docs.iter().map(|d| d.label).collect();
        let cm = confusion(&labels, &gold)?;
        let mut rows = vec![ReportRow {
            scenario: scenario.to_string(),
            group: group.to_string(),
            variant: "raw".into(),
            report: report(&cm),
        }];
        if self.config().report.postprocess {
            let evals = evaluate_rules(preds, gold_docs, lexicons)?;
            for (rule, eval) in evals {
                rows.push(ReportRow {
                    scenario: scenario.to_string(),
                    group: group.to_string(),
                    variant: rule.as_str().to_string(),
                    report: eval.report,
                });
            }
        }
        Ok(rows)
    }

    fn write_reports_jsonl(&self, scenario: &str, rows: &[ReportRow]) -> Result<()> {
        let path = self
            .run_dir
            .join("runs")
            .join(scenario)
            .join("reports.jsonl");
        let mut out = String::new();
        for row in rows {
            out.push_str(&serde_json::to_string(row).expect("report row serializes"));
            out.push('\n');
        }
        write_file(&path, &out)
    }

    fn scenario_model_seeds(&self, scenario: &ScenarioConfig) -> Vec<u64> {
        scenario
            .model_seeds
            .clone()
            .unwrap_or_else(|| self.config().ensemble.model_seeds.clone())
    }

    fn run_zero_shot(
        &mut self,
        scenario: &ScenarioConfig,
        prepared: &Prepared,
        lexicons: &BTreeMap<RuleKind, Lexicon>,
    ) -> Result<Vec<ReportRow>> {
        let model_id = scenario
            .model_id
            .as_deref()
            .unwrap_or(&self.config().backend.model_id)
            .to_string();
        let seeds = self.scenario_model_seeds(scenario);
        let stage1 = self.stage1_models(&model_id, &seeds, prepared)?;
        let backend = self.registry.create_backend(&model_id)?;
        let mut votes_per_doc: Vec<(String, Vec<u8>)> = prepared
            .test_processed
            .iter()
            .map(|d| (d.id.clone(), Vec::with_capacity(seeds.len())))
            .collect();
        for (&seed, model) in seeds.iter().zip(&stage1) {
            let key = format!("runs/{}/0/model_{}", scenario.name, seed);
            let dir = self
                .run_dir
                .join("runs")
                .join(&scenario.name)
                .join("0")
                .join(format!("model_{seed}"));
            let pred_path = dir.join("predictions.csv");
            let preds = if self.manifest.completed(&key, &self.loaded.hash) && pred_path.exists() {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                read_predictions(&pred_path)?
            } else {
                let preds = backend.predict_state(&model.state, &prepared.test_processed)?;
                write_file(&pred_path, &predictions_csv(&preds))?;
                self.counters.executed.fetch_add(1, Ordering::Relaxed);
                self.manifest.record(ManifestRecord {
                    kind: "job".into(),
                    key,
                    command: "zero-shot".into(),
                    config_hash: self.loaded.hash.clone(),
                    scenario: Some(scenario.name.clone()),
                    sampling_seed: Some(0),
                    model_seed: Some(seed),
                })?;
                preds
            };
            for (slot, pred) in votes_per_doc.iter_mut().zip(&preds) {
                slot.1.push(pred.label);
            }
        }
        let votes = majority_vote(&votes_per_doc, self.config().ensemble.tie_break)?;
        write_file(
            &self
                .run_dir
                .join("runs")
                .join(&scenario.name)
                .join("0")
                .join("votes.csv"),
            &votes_csv(&votes),
        )?;
        let finals: Vec<(String, u8)> = votes
            .iter()
            .map(|v| (v.doc_id.clone(), v.final_label))
            .collect();
        let rows = self.variant_rows(
            &scenario.name,
            "vote",
            &finals,
            &prepared.test_docs_kept,
            lexicons,
        )?;
        self.write_reports_jsonl(&scenario.name, &rows)?;
        Ok(rows)
    }

    fn run_full(
        &mut self,
        scenario: &ScenarioConfig,
        prepared: &Prepared,
        lexicons: &BTreeMap<RuleKind, Lexicon>,
    ) -> Result<Vec<ReportRow>> {
        let model_id = scenario
            .model_id
            .as_deref()
            .unwrap_or(&self.config().backend.model_id)
            .to_string();
        let params = scenario
            .train
            .clone()
            .unwrap_or_else(|| self.config().backend.full_params());
        let seeds = self.scenario_model_seeds(scenario);
        let stage1 = self.stage1_models(&model_id, &seeds, prepared)?;
        let backend = self.registry.create_backend(&model_id)?;
        // all target training data, with an internal dev split for epoch
        // selection
        let inner = SplitSpec {
            test_fraction: self.config().split.test_fraction,
            seed: self.config().split.seed.wrapping_add(2),
        };
        let (full_train, full_dev) = stratified_split(&prepared.target_train_pool, &inner)?;
        let train = preprocess_corpus(&full_train, &self.config().preprocess).0;
        let dev = preprocess_corpus(&full_dev, &self.config().preprocess).0;
        let mut rows = Vec::new();
        for (&seed, base) in seeds.iter().zip(&stage1) {
            let key = format!("runs/{}/0/model_{}", scenario.name, seed);
            let dir = self
                .run_dir
                .join("runs")
                .join(&scenario.name)
                .join("0")
                .join(format!("model_{seed}"));
            let pred_path = dir.join("predictions.csv");
            let preds = if self.manifest.completed(&key, &self.loaded.hash) && pred_path.exists() {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                read_predictions(&pred_path)?
            } else {
                let config = self.adjusted(&params, &model_id, seed, &*backend);
                let model = fit_stage2(&*backend, base, &train, &dev, &config).map_err(|e| {
                    Error::Job {
                        scenario: scenario.name.clone(),
                        sampling_seed: 0,
                        model_seed: seed,
                        message: e.to_string(),
                    }
                })?;
                let preds = backend.predict_state(&model.state, &prepared.test_processed)?;
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                model.save_json(&dir.join("checkpoint.json"))?;
                write_file(&dir.join("train_log.csv"), &model.log_csv())?;
                write_file(&pred_path, &predictions_csv(&preds))?;
                self.counters.executed.fetch_add(1, Ordering::Relaxed);
                self.manifest.record(ManifestRecord {
                    kind: "job".into(),
                    key,
                    command: "run".into(),
                    config_hash: self.loaded.hash.clone(),
                    scenario: Some(scenario.name.clone()),
                    sampling_seed: Some(0),
                    model_seed: Some(seed),
                })?;
                preds
            };
            let hard: Vec<(String, u8)> =
                preds.iter().map(|p| (p.doc_id.clone(), p.label)).collect();
            rows.extend(self.variant_rows(
                &scenario.name,
                &format!("model_{seed}"),
                &hard,
                &prepared.test_docs_kept,
                lexicons,
            )?);
        }
        self.write_reports_jsonl(&scenario.name, &rows)?;
        Ok(rows)
    }

    fn run_few_shot(
        &mut self,
        scenario: &ScenarioConfig,
        prepared: &Prepared,
        lexicons: &BTreeMap<RuleKind, Lexicon>,
    ) -> Result<(Vec<ReportRow>, Vec<(String, u64, String)>)> {
        let model_id = scenario
            .model_id
            .as_deref()
            .unwrap_or(&self.config().backend.model_id)
            .to_string();
        let fewshot = scenario.fewshot_spec()?;
        let seeds = self.scenario_model_seeds(scenario);
        let stage1 = self.stage1_models(&model_id, &seeds, prepared)?;
        let backend = self.registry.create_backend(&model_id)?;
        let cfg = self.config();
        let params = scenario.train.clone().unwrap_or_else(|| cfg.backend.stage2.clone());
        let stage2_config = self.adjusted(&params, &model_id, 0, &*backend);
        let spec = EnsembleSpec {
            model_seeds: seeds,
            sampling_seeds: cfg.ensemble.sampling_seeds.clone(),
            fewshot_spec: fewshot,
            tie_break: cfg.ensemble.tie_break,
            strict: cfg.ensemble.strict,
        };
        let store = FsJobStore {
            run_dir: &self.run_dir,
            scenario: scenario.name.clone(),
            manifest: &self.manifest,
            config_hash: &self.loaded.hash,
            counters: &self.counters,
        };
        let inputs = GridInputs {
            target_pool: &prepared.target_train_pool,
            source_pool: prepared.source_pool.as_ref().filter(|_| {
                fewshot.mode == crate::sampler::FewShotMode::AddSource
            }),
            test_docs: &prepared.test_processed,
            test_gold: &prepared.test_gold,
            backend: &*backend,
            stage1_models: &stage1,
            stage2_config: &stage2_config,
            normalizer: &cfg.preprocess,
        };
        let grid = crate::ensemble::run_grid(&inputs, &spec, &store)?;
        let mut rows = Vec::new();
        for outcome in &grid.per_seed {
            let seed_dir = self
                .run_dir
                .join("runs")
                .join(&scenario.name)
                .join(outcome.sampling_seed.to_string());
            write_file(&seed_dir.join("votes.csv"), &votes_csv(&outcome.votes))?;
            write_file(
                &seed_dir.join("sets_manifest.jsonl"),
                &manifest_to_jsonl(&outcome.manifest),
            )?;
            let finals: Vec<(String, u8)> = outcome
                .votes
                .iter()
                .map(|v| (v.doc_id.clone(), v.final_label))
                .collect();
            rows.extend(self.variant_rows(
                &scenario.name,
                &format!("seed_{}", outcome.sampling_seed),
                &finals,
                &prepared.test_docs_kept,
                lexicons,
            )?);
        }
        self.write_reports_jsonl(&scenario.name, &rows)?;
        let failures = grid
            .failures
            .iter()
            .map(|f| (scenario.name.clone(), f.sampling_seed, f.message.clone()))
            .collect();
        Ok((rows, failures))
    }
}

/// Variant display order in aggregate tables.
fn variant_rank(v: &str) -> usize {
    match v {
        "raw" => 0,
        "med_presence" => 1,
        "womens_health" => 2,
        _ => 3,
    }
}

/// Build aggregate rows from persisted per-scenario report files.
///
/// Groups with >= 2 reports aggregate into mean ± std cells; single groups
/// render plain values. Rows are ordered by scenario name so that `run` and
/// `report` produce identical bytes.
pub fn assemble_aggregate(run_dir: &Path) -> Result<Vec<AggregateRow>> {
    let runs_dir = run_dir.join("runs");
    let mut scenarios: Vec<String> = Vec::new();
    if runs_dir.exists() {
        for entry in fs::read_dir(&runs_dir).map_err(|e| Error::io(&runs_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&runs_dir, e))?;
            if entry.path().join("reports.jsonl").exists() {
                scenarios.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
    }
    scenarios.sort();
    let mut rows = Vec::new();
    for scenario in &scenarios {
        let path = runs_dir.join(scenario).join("reports.jsonl");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut by_variant: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let row: ReportRow = serde_json::from_str(line)
                .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
            by_variant.entry(row.variant).or_default().push(row.report);
        }
        let mut variants: Vec<(String, Vec<MetricsReport>)> = by_variant.into_iter().collect();
        variants.sort_by_key(|(v, _)| (variant_rank(v), v.clone()));
        for (variant, reports) in variants {
            if reports.len() >= 2 {
                let agg = crate::ensemble::aggregate_reports(&reports)?;
                rows.push(AggregateRow::mean_std(
                    scenario,
                    &variant,
                    &agg.mean_report,
                    &agg.std_report,
                ));
            } else if let Some(first) = reports.first() {
                rows.push(AggregateRow::single(scenario, &variant, first));
            }
        }
    }
    Ok(rows)
}

/// Write `aggregate.csv` / `aggregate.md` for a run directory.
pub fn write_aggregate(run_dir: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_file(&run_dir.join("aggregate.csv"), &aggregate_csv(rows))?;
    write_file(&run_dir.join("aggregate.md"), &aggregate_md(rows))
}

/// Execute the configured pipeline end to end.
pub fn run_experiment(loaded: &LoadedConfig, options: &RunOptions) -> Result<PipelineOutcome> {
    let run_dir = loaded.config.paths.run_dir.clone();
    let workers = loaded.config.ensemble.workers;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment_inner(loaded, options, run_dir))
}

fn run_experiment_inner(
    loaded: &LoadedConfig,
    options: &RunOptions,
    run_dir: PathBuf,
) -> Result<PipelineOutcome> {
    let mut pipeline = Pipeline::new(loaded, run_dir)?;
    let prepared = pipeline.prepare()?;
    let lexicons = pipeline.rule_lexicons()?;

    let mut failures: Vec<(String, u64, String)> = Vec::new();
    let scenario_names: Vec<String> = loaded
        .config
        .scenarios
        .iter()
        .map(|s| s.name.clone())
        .collect();
    let selected: Vec<ScenarioConfig> = loaded
        .config
        .scenarios
        .iter()
        .filter(|s| {
            options.scenario_filter.is_empty() || options.scenario_filter.contains(&s.name)
        })
        .cloned()
        .collect();
    if !options.scenario_filter.is_empty() {
        for name in &options.scenario_filter {
            if !scenario_names.contains(name) {
                return Err(Error::Config(format!(
                    "unknown scenario '{name}' (configured: {})",
                    scenario_names.join(", ")
                )));
            }
        }
    }

    if options.stage1_only {
        let model_id = loaded.config.backend.model_id.clone();
        let seeds = loaded.config.ensemble.model_seeds.clone();
        pipeline.stage1_models(&model_id, &seeds, &prepared)?;
    } else {
        for scenario in &selected {
            match scenario.kind {
                ScenarioKind::ZeroShot => {
                    pipeline.run_zero_shot(scenario, &prepared, &lexicons)?;
                }
                ScenarioKind::Full => {
                    pipeline.run_full(scenario, &prepared, &lexicons)?;
                }
                ScenarioKind::FewShot => {
                    let (_, fails) = pipeline.run_few_shot(scenario, &prepared, &lexicons)?;
                    failures.extend(fails);
                }
            }
        }
    }

    let rows = assemble_aggregate(&pipeline.run_dir)?;
    write_aggregate(&pipeline.run_dir, &rows)?;

    let mut summary = String::new();
    summary.push_str("# Run summary\n\n");
    summary.push_str(&format!(
        "- target train/dev: {} documents ({} after length filter)\n",
        prepared.train_dev_size_pre_filter, prepared.train_dev_size_post_filter
    ));
    summary.push_str(&format!(
        "- target test: {} documents ({} after length filter)\n",
        prepared.test_size_pre_filter,
        prepared.test_processed.len()
    ));
    summary.push_str(&format!(
        "- jobs: {} executed, {} resumed\n\n",
        pipeline.counters.executed.load(Ordering::Relaxed),
        pipeline.counters.skipped.load(Ordering::Relaxed)
    ));
    if !failures.is_empty() {
        summary.push_str("## Degraded sampling seeds\n\n");
        for (scenario, seed, message) in &failures {
            summary.push_str(&format!("- {scenario} seed {seed}: {message}\n"));
        }
        summary.push('\n');
    }
    summary.push_str(&aggregate_md(&rows));
    write_file(&pipeline.run_dir.join("summary.md"), &summary)?;

    Ok(PipelineOutcome {
        run_dir: pipeline.run_dir,
        rows,
        test_size_pre_filter: prepared.test_size_pre_filter,
        test_size_post_filter: prepared.test_processed.len(),
        train_dev_size_pre_filter: prepared.train_dev_size_pre_filter,
        train_dev_size_post_filter: prepared.train_dev_size_post_filter,
        executed_jobs: pipeline.counters.executed.load(Ordering::Relaxed),
        skipped_jobs: pipeline.counters.skipped.load(Ordering::Relaxed),
        seed_failures: failures,
    })
}
