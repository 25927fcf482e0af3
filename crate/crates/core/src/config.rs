//! Experiment configuration: a TOML file binding corpora, preprocessing,
//! splits, backends, the seed grid, and the scenario list.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::backend::{FreezePolicy, TrainConfig, TrainSampler};
use crate::ensemble::{TieBreak, PAPER_MODEL_SEEDS};
use crate::error::{Error, Result};
use crate::preprocess::NormalizerConfig;
use crate::sampler::{FewShotMode, FewShotSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub target_corpus: Option<PathBuf>,
    #[serde(default)]
    pub source_corpus: Option<PathBuf>,
    /// Medication lexicon; the bundled synthetic list when omitted.
    #[serde(default)]
    pub med_lexicon: Option<PathBuf>,
    /// Women's-health lexicon; the bundled list when omitted.
    #[serde(default)]
    pub wh_lexicon: Option<PathBuf>,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub registry: Option<PathBuf>,
}

/// Inline synthetic-corpus request, an alternative to corpus paths.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub lang: String,
    pub seed: u64,
    #[serde(default)]
    pub topic_weights: Option<BTreeMap<String, f64>>,
}

impl SynthSpec {
    pub fn weights(&self) -> BTreeMap<String, f64> {
        self.topic_weights.clone().unwrap_or_else(|| {
            BTreeMap::from([
                ("women's health".to_string(), 0.76),
                ("cosmetic OPs".to_string(), 0.05),
                ("skin".to_string(), 0.04),
                ("bones".to_string(), 0.04),
                ("gen. med.".to_string(), 0.03),
                ("heart".to_string(), 0.03),
                ("nerves".to_string(), 0.02),
                ("sports".to_string(), 0.01),
                ("infections".to_string(), 0.01),
                ("nutrition".to_string(), 0.01),
            ])
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(default)]
    pub target: Option<SynthSpec>,
    #[serde(default)]
    pub source: Option<SynthSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Train hyper-parameters without identity fields; merged into [`TrainConfig`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_freeze")]
    pub freeze_policy: FreezePolicy,
    #[serde(default = "default_sampler")]
    pub train_sampler: TrainSampler,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_lr() -> f64 {
    0.1
}
fn default_batch() -> usize {
    8
}
fn default_freeze() -> FreezePolicy {
    FreezePolicy::AllButClassifier
}
fn default_sampler() -> TrainSampler {
    TrainSampler::Random
}
fn default_epochs() -> usize {
    10
}
fn default_patience() -> usize {
    3
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            freeze_policy: default_freeze(),
            train_sampler: default_sampler(),
            max_epochs: default_epochs(),
            patience: default_patience(),
        }
    }
}

impl TrainParams {
    pub fn to_train_config(&self, model_id: &str, model_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            freeze_policy: self.freeze_policy,
            train_sampler: self.train_sampler,
            max_epochs: self.max_epochs,
            patience: self.patience,
            model_seed,
            model_id: model_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub model_id: String,
    #[serde(default)]
    pub stage1: TrainParams,
    #[serde(default)]
    pub stage2: TrainParams,
    /// Overrides for the full-data scenario (freeze none + weighted sampler
    /// in the reference protocol).
    #[serde(default)]
    pub full: Option<TrainParams>,
}

impl BackendSection {
    pub fn full_params(&self) -> TrainParams {
        self.full.clone().unwrap_or(TrainParams {
            freeze_policy: FreezePolicy::None,
            train_sampler: TrainSampler::ClassWeighted,
            ..self.stage2.clone()
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_model_seeds")]
    pub model_seeds: Vec<u64>,
    #[serde(default = "default_sampling_seeds")]
    pub sampling_seeds: Vec<u64>,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub strict: bool,
    /// Worker threads for grid jobs; 0 = one per core.
    #[serde(default)]
    pub workers: usize,
}

fn default_model_seeds() -> Vec<u64> {
    PAPER_MODEL_SEEDS.to_vec()
}
fn default_sampling_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            model_seeds: default_model_seeds(),
            sampling_seeds: default_sampling_seeds(),
            tie_break: TieBreak::Positive,
            strict: false,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ZeroShot,
    Full,
    FewShot,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub mode: Option<FewShotMode>,
    #[serde(default)]
    pub shots: Option<usize>,
    #[serde(default)]
    pub n_neg: Option<usize>,
    #[serde(default)]
    pub n_source: Option<usize>,
    /// Backend override for this scenario (e.g. the SVM baseline).
    #[serde(default)]
    pub model_id: Option<String>,
    /// Model-seed override (the single-model baselines use one seed).
    #[serde(default)]
    pub model_seeds: Option<Vec<u64>>,
    /// Train-parameter override for this scenario's stage-2 fits.
    #[serde(default)]
    pub train: Option<TrainParams>,
}

impl ScenarioConfig {
    /// The few-shot spec (sampling seed filled per grid run).
    pub fn fewshot_spec(&self) -> Result<FewShotSpec> {
        if self.kind != ScenarioKind::FewShot {
            return Err(Error::Config(format!(
                "scenario '{}' is not a few-shot scenario",
                self.name
            )));
        }
        let mode = self.mode.ok_or_else(|| {
            Error::Config(format!("scenario '{}': missing 'mode'", self.name))
        })?;
        let shots = self.shots.ok_or_else(|| {
            Error::Config(format!("scenario '{}': missing 'shots'", self.name))
        })?;
        let spec = FewShotSpec {
            mode,
            shots,
            n_neg: self.n_neg.unwrap_or(0),
            n_source: self.n_source.unwrap_or(0),
            sampling_seed: 0,
        };
        spec.validate()
            .map_err(|e| Error::Config(format!("scenario '{}': {e}", self.name)))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Apply the lexicon rules to voted predictions and report all variants.
    #[serde(default = "default_true")]
    pub postprocess: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { postprocess: true }
    }
}

/// The full, validated experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub preprocess: NormalizerConfig,
    #[serde(default)]
    pub split: SplitSection,
    pub backend: BackendSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub report: ReportSection,
}

/// A parsed config plus the verbatim text and its hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: String,
    pub hash: String,
}

/// Parse and validate a config file.
///
/// Relative paths inside the config resolve against the working directory.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = toml::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate(Path::new("."))?;
    let mut hasher = Sha256::new();
    hasher.update(raw.as_bytes());
    Ok(LoadedConfig {
        config,
        raw,
        hash: format!("{:x}", hasher.finalize()),
    })
}

impl ExperimentConfig {
    /// Field-level validation; paths are resolved relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let exists = |label: &str, p: &Path| -> Result<()> {
            let resolved = if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            };
            if resolved.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{label}: path '{}' does not exist",
                    resolved.display()
                )))
            }
        };
        match (&self.paths.target_corpus, &self.synthetic.target) {
            (None, None) => {
                return Err(Error::Config(
                    "either paths.target_corpus or synthetic.target is required".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "paths.target_corpus and synthetic.target are mutually exclusive".into(),
                ))
            }
            (Some(p), None) => exists("paths.target_corpus", p)?,
            _ => {}
        }
        if let (Some(_), Some(_)) = (&self.paths.source_corpus, &self.synthetic.source) {
            return Err(Error::Config(
                "paths.source_corpus and synthetic.source are mutually exclusive".into(),
            ));
        }
        if let Some(p) = &self.paths.source_corpus {
            exists("paths.source_corpus", p)?;
        }
        for (label, p) in [
            ("paths.med_lexicon", &self.paths.med_lexicon),
            ("paths.wh_lexicon", &self.paths.wh_lexicon),
            ("paths.registry", &self.paths.registry),
        ] {
            if let Some(p) = p {
                exists(label, p)?;
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.test_fraction must be in (0, 1), got {}",
                self.split.test_fraction
            )));
        }
        self.preprocess
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one [[scenario]] required".into()));
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.scenarios.len() {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        let has_source = self.paths.source_corpus.is_some() || self.synthetic.source.is_some();
        for scenario in &self.scenarios {
            if scenario.name.is_empty() {
                return Err(Error::Config("scenario name must be non-empty".into()));
            }
            if scenario.kind == ScenarioKind::FewShot {
                let spec = scenario.fewshot_spec()?;
                if spec.mode == FewShotMode::AddSource && !has_source {
                    return Err(Error::Config(format!(
                        "scenario '{}' uses add_source but no source corpus is configured",
                        scenario.name
                    )));
                }
            }
        }
        let mut seeds = self.ensemble.model_seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.ensemble.model_seeds.len() || seeds.is_empty() {
            return Err(Error::Config("ensemble.model_seeds must be distinct and non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
[paths]
run_dir = "runs/test"

[synthetic.target]
n_pos = 20
n_neg = 80
lang = "de"
seed = 7

[synthetic.source]
n_pos = 50
n_neg = 20
lang = "en"
seed = 8

[backend]
model_id = "stub-small"

[[scenario]]
name = "per_class_10"
kind = "few_shot"
mode = "per_class"
shots = 10
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{}", minimal_toml()).unwrap();
        let loaded = load_config(f.path()).unwrap();
        let cfg = loaded.config;
        assert_eq!(cfg.preprocess.min_tokens, 4);
        assert_eq!(cfg.preprocess.max_tokens, 300);
        assert_eq!(cfg.split.test_fraction, 0.2);
        assert_eq!(cfg.ensemble.model_seeds, PAPER_MODEL_SEEDS.to_vec());
        assert_eq!(cfg.ensemble.sampling_seeds, vec![1, 2, 3, 4, 5]);
        assert!(cfg.report.postprocess);
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn duplicate_scenario_names_rejected() {
        let toml = minimal_toml()
            + r#"
[[scenario]]
name = "per_class_10"
kind = "zero_shot"
"#;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{toml}").unwrap();
        let err = load_config(f.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unique"));
    }

    #[test]
    fn add_source_without_source_corpus_rejected() {
        let toml = r#"
[paths]
run_dir = "runs/test"

[synthetic.target]
n_pos = 20
n_neg = 80
lang = "de"
seed = 7

[backend]
model_id = "stub-small"

[[scenario]]
name = "add_source"
kind = "few_shot"
mode = "add_source"
shots = 10
n_neg = 100
n_source = 100
"#;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{toml}").unwrap();
        let err = load_config(f.path()).unwrap_err();
        assert!(err.to_string().contains("add_source"));
    }

    #[test]
    fn missing_corpus_path_rejected() {
        let toml = r#"
[paths]
run_dir = "runs/test"
target_corpus = "does/not/exist.jsonl"

[backend]
model_id = "stub-small"

[[scenario]]
name = "zero_shot"
kind = "zero_shot"
"#;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{toml}").unwrap();
        let err = load_config(f.path()).unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }

    #[test]
    fn full_params_default_to_unfrozen_weighted() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{}", minimal_toml()).unwrap();
        let loaded = load_config(f.path()).unwrap();
        let full = loaded.config.backend.full_params();
        assert_eq!(full.freeze_policy, FreezePolicy::None);
        assert_eq!(full.train_sampler, TrainSampler::ClassWeighted);
    }
}
