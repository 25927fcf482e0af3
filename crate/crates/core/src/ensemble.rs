//! The seeded experiment grid: N model seeds x M sampling seeds, per-document
//! majority voting, and mean ± std aggregation across sampling seeds.
//!
//! All 10 x 5 stage-2 fits are independent and run on the rayon pool; a job
//! failure degrades its sampling seed rather than the whole run, and
//! aggregation requires at least two surviving seeds (all of them in strict
//! mode).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    fit_stage2, ClassifierBackend, LabeledExample, Prediction, TrainConfig, TrainedModel,
};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, MetricsReport};
use crate::preprocess::{preprocess, NormalizerConfig, ProcessedDocument};
use crate::sampler::{build_fewshot_sets, enumerate_seed_pools, FewShotSets, FewShotSpec};

/// Model-initialization seeds of the reference protocol.
pub const PAPER_MODEL_SEEDS: [u64; 10] = [78, 99, 227, 409, 422, 482, 485, 841, 857, 910];

/// How a tied vote (possible with an even voter count) is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    Positive,
    Negative,
}

impl Default for TieBreak {
    fn default() -> Self {
        TieBreak::Positive
    }
}

/// The full grid description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub model_seeds: Vec<u64>,
    pub sampling_seeds: Vec<u64>,
    pub fewshot_spec: FewShotSpec,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Require every sampling seed to survive.
    #[serde(default)]
    pub strict: bool,
}

impl EnsembleSpec {
    pub fn paper_defaults(fewshot_spec: FewShotSpec) -> Self {
        Self {
            model_seeds: PAPER_MODEL_SEEDS.to_vec(),
            sampling_seeds: vec![1, 2, 3, 4, 5],
            fewshot_spec,
            tie_break: TieBreak::Positive,
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_seeds.is_empty() {
            return Err(Error::Argument("at least one model seed required".into()));
        }
        if self.sampling_seeds.is_empty() {
            return Err(Error::Argument(
                "at least one sampling seed required".into(),
            ));
        }
        let mut seeds = self.model_seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.model_seeds.len() {
            return Err(Error::Argument("model seeds must be distinct".into()));
        }
        self.fewshot_spec.validate()
    }
}

/// Votes and outcome for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub doc_id: String,
    pub votes: Vec<u8>,
    #[serde(rename = "final")]
    pub final_label: u8,
    pub was_tie: bool,
}

/// Majority vote per document; ties resolved per `tie_break`.
///
/// Vote lists must all have the same positive length. The outcome is
/// invariant under any permutation of the voters.
pub fn majority_vote(
    votes_per_doc: &[(String, Vec<u8>)],
    tie_break: TieBreak,
) -> Result<Vec<VoteRecord>> {
    let n_models = match votes_per_doc.first() {
        Some((_, votes)) => votes.len(),
        None => return Ok(Vec::new()),
    };
    if n_models == 0 {
        return Err(Error::Argument("vote lists must be non-empty".into()));
    }
    votes_per_doc
        .iter()
        .map(|(doc_id, votes)| {
            if votes.len() != n_models {
                return Err(Error::Argument(format!(
                    "ragged vote lists: document '{doc_id}' has {} votes, expected {n_models}",
                    votes.len()
                )));
            }
            if votes.iter().any(|&v| v > 1) {
                return Err(Error::Argument(format!(
                    "votes must be 0 or 1 (document '{doc_id}')"
                )));
            }
            let ones = votes.iter().filter(|&&v| v == 1).count();
            let zeros = votes.len() - ones;
            let (final_label, was_tie) = if ones > zeros {
                (1, false)
            } else if zeros > ones {
                (0, false)
            } else {
                (
                    match tie_break {
                        TieBreak::Positive => 1,
                        TieBreak::Negative => 0,
                    },
                    true,
                )
            };
            Ok(VoteRecord {
                doc_id: doc_id.clone(),
                votes: votes.clone(),
                final_label,
                was_tie,
            })
        })
        .collect()
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Argument(format!(
            "std_dev needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().all(|v| v == &values[0]) {
        return Ok(0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Per-seed reports plus their field-wise mean and sample std.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateResult {
    pub per_seed_reports: Vec<MetricsReport>,
    pub mean_report: MetricsReport,
    pub std_report: MetricsReport,
}

/// Field-wise mean ± sample std over per-seed reports (needs >= 2).
pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<AggregateResult> {
    if reports.len() < 2 {
        return Err(Error::Argument(format!(
            "aggregation needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let mut means = [0.0f64; 10];
    let mut stds = [0.0f64; 10];
    for field in 0..10 {
        let values: Vec<f64> = reports.iter().map(|r| r.values()[field]).collect();
        means[field] = values.iter().sum::<f64>() / values.len() as f64;
        stds[field] = std_dev(&values)?;
    }
    let mut mean_report = MetricsReport::from_values(means);
    let mut flags: Vec<String> = reports
        .iter()
        .flat_map(|r| r.zero_division.iter().cloned())
        .collect();
    flags.sort();
    flags.dedup();
    mean_report.zero_division = flags;
    Ok(AggregateResult {
        per_seed_reports: reports.to_vec(),
        mean_report,
        std_report: MetricsReport::from_values(stds),
    })
}

/// One fitted-and-scored grid job.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub sampling_seed: u64,
    pub model_seed: u64,
    pub model: Option<TrainedModel>,
    pub predictions: Vec<Prediction>,
    /// True when the job was restored from a store instead of refit.
    pub resumed: bool,
}

/// Persistence/resume hook for grid jobs. The default does nothing.
pub trait JobStore: Sync {
    /// Cached predictions for a completed job, if any.
    fn load(&self, sampling_seed: u64, model_seed: u64) -> Option<Vec<Prediction>> {
        let _ = (sampling_seed, model_seed);
        None
    }

    /// Persist a completed job.
    fn save(&self, job: &JobResult, sets: &FewShotSets) -> Result<()> {
        let _ = (job, sets);
        Ok(())
    }
}

/// In-memory grid run without persistence.
pub struct NoStore;

impl JobStore for NoStore {}

/// Everything `run_grid` needs besides the spec.
pub struct GridInputs<'a> {
    /// Target train/dev pool, already filtered to preprocessing survivors.
    pub target_pool: &'a Corpus,
    /// Source pool for add_source mode.
    pub source_pool: Option<&'a Corpus>,
    /// Fixed test set (kept documents).
    pub test_docs: &'a [ProcessedDocument],
    pub test_gold: &'a [u8],
    pub backend: &'a dyn ClassifierBackend,
    /// One stage-1 model per model seed, same order as `spec.model_seeds`.
    pub stage1_models: &'a [TrainedModel],
    pub stage2_config: &'a TrainConfig,
    pub normalizer: &'a NormalizerConfig,
}

/// Outcome of one sampling seed: votes and the voted-prediction report.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub sampling_seed: u64,
    pub votes: Vec<VoteRecord>,
    pub report: MetricsReport,
    pub manifest: Vec<crate::sampler::ManifestEntry>,
}

/// A failed sampling seed and why.
#[derive(Debug, Clone)]
pub struct SeedFailure {
    pub sampling_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub per_seed: Vec<SeedOutcome>,
    pub aggregate: AggregateResult,
    pub failures: Vec<SeedFailure>,
}

fn examples_from_corpus(corpus: &Corpus, normalizer: &NormalizerConfig) -> Vec<LabeledExample> {
    corpus
        .iter()
        .map(|doc| {
            let processed = preprocess(doc, normalizer);
            LabeledExample::from_processed(doc, &processed)
        })
        .collect()
}

fn run_seed(
    inputs: &GridInputs<'_>,
    spec: &EnsembleSpec,
    sampling_seed: u64,
    store: &dyn JobStore,
) -> Result<SeedOutcome> {
    let pool = enumerate_seed_pools(inputs.target_pool, &[sampling_seed])?
        .pop()
        .expect("one pool per seed");
    let fewshot = FewShotSpec {
        sampling_seed,
        ..spec.fewshot_spec
    };
    let sets = build_fewshot_sets(&pool, inputs.source_pool, &fewshot)?;
    let train = examples_from_corpus(&sets.train, inputs.normalizer);
    let dev = examples_from_corpus(&sets.dev, inputs.normalizer);

    let jobs: Vec<JobResult> = spec
        .model_seeds
        .par_iter()
        .zip(inputs.stage1_models.par_iter())
        .map(|(&model_seed, stage1)| -> Result<JobResult> {
            if let Some(predictions) = store.load(sampling_seed, model_seed) {
                return Ok(JobResult {
                    sampling_seed,
                    model_seed,
                    model: None,
                    predictions,
                    resumed: true,
                });
            }
            let config = inputs.stage2_config.with_model_seed(model_seed);
            let model = fit_stage2(inputs.backend, stage1, &train, &dev, &config).map_err(
                |e| Error::Job {
                    scenario: spec.fewshot_spec.scenario_label(),
                    sampling_seed,
                    model_seed,
                    message: e.to_string(),
                },
            )?;
            let predictions = inputs
                .backend
                .predict_state(&model.state, inputs.test_docs)?;
            let job = JobResult {
                sampling_seed,
                model_seed,
                model: Some(model),
                predictions,
                resumed: false,
            };
            store.save(&job, &sets)?;
            Ok(job)
        })
        .collect::<Result<Vec<_>>>()?;

    let votes_per_doc: Vec<(String, Vec<u8>)> = inputs
        .test_docs
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let votes: Vec<u8> = jobs.iter().map(|j| j.predictions[i].label).collect();
            (doc.id.clone(), votes)
        })
        .collect();
    let votes = majority_vote(&votes_per_doc, spec.tie_break)?;
    let finals: Vec<u8> = votes.iter().map(|v| v.final_label).collect();
    let cm = confusion(&finals, inputs.test_gold)?;
    Ok(SeedOutcome {
        sampling_seed,
        votes,
        report: report(&cm),
        manifest: sets.manifest,
    })
}

/// Run the full grid: per sampling seed, fit all stage-2 models, predict the
/// fixed test set, vote, then aggregate the per-seed reports.
pub fn run_grid(
    inputs: &GridInputs<'_>,
    spec: &EnsembleSpec,
    store: &dyn JobStore,
) -> Result<GridResult> {
    spec.validate()?;
    if inputs.stage1_models.len() != spec.model_seeds.len() {
        return Err(Error::Argument(format!(
            "{} stage-1 models for {} model seeds",
            inputs.stage1_models.len(),
            spec.model_seeds.len()
        )));
    }
    if inputs.test_docs.len() != inputs.test_gold.len() {
        return Err(Error::Alignment(format!(
            "{} test documents vs {} gold labels",
            inputs.test_docs.len(),
            inputs.test_gold.len()
        )));
    }
    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for &sampling_seed in &spec.sampling_seeds {
        match run_seed(inputs, spec, sampling_seed, store) {
            Ok(outcome) => per_seed.push(outcome),
            Err(e) => failures.push(SeedFailure {
                sampling_seed,
                message: e.to_string(),
            }),
        }
    }
    if spec.strict && !failures.is_empty() {
        return Err(Error::Job {
            scenario: spec.fewshot_spec.scenario_label(),
            sampling_seed: failures[0].sampling_seed,
            model_seed: 0,
            message: format!("strict mode: {} sampling seed(s) failed", failures.len()),
        });
    }
    let reports: Vec<MetricsReport> = per_seed.iter().map(|s| s.report.clone()).collect();
    let aggregate = aggregate_reports(&reports).map_err(|_| {
        Error::Job {
            scenario: spec.fewshot_spec.scenario_label(),
            sampling_seed: 0,
            model_seed: 0,
            message: format!(
                "only {} sampling seed(s) succeeded; need at least 2 to aggregate",
                per_seed.len()
            ),
        }
    })?;
    Ok(GridResult {
        per_seed,
        aggregate,
        failures,
    })
}
