//! The trainable-classifier contract and the two-stage fine-tuning protocol.
//!
//! A backend owns its parameterization but exposes it as a [`ModelState`]
//! split into encoder and classifier blocks, so the freeze policy can be
//! enforced from outside via parameter checksums: under
//! `all_but_classifier`, stage-2 fine-tuning must leave the encoder block
//! byte-identical.

pub mod encoder;
pub mod registry;
pub mod stub;
pub mod svm;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::metrics::{confusion, report};
use crate::preprocess::ProcessedDocument;

/// Which parameters stage-2 fine-tuning may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Encoder frozen, classifier head trainable.
    AllButClassifier,
    /// Everything trainable.
    None,
}

/// How training batches are drawn each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSampler {
    /// Shuffle the train set once per epoch.
    Random,
    /// Sample with replacement, probability inversely proportional to class
    /// frequency; epoch size equals the corpus size.
    ClassWeighted,
}

/// Hyper-parameters of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub freeze_policy: FreezePolicy,
    pub train_sampler: TrainSampler,
    pub max_epochs: usize,
    /// Early-stop after this many epochs without dev improvement.
    pub patience: usize,
    pub model_seed: u64,
    /// Name resolved through the model registry.
    pub model_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 8,
            freeze_policy: FreezePolicy::AllButClassifier,
            train_sampler: TrainSampler::Random,
            max_epochs: 10,
            patience: 3,
            model_seed: 0,
            model_id: "stub-small".to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_model_seed(&self, seed: u64) -> Self {
        Self {
            model_seed: seed,
            ..self.clone()
        }
    }
}

/// What a backend can honor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_freezing: bool,
    pub supports_class_weights: bool,
    pub is_multilingual: bool,
}

/// A named block of parameter vectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamBlock(pub BTreeMap<String, Vec<f64>>);

impl ParamBlock {
    /// SHA-256 over names, lengths, and little-endian float bits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, values) in &self.0 {
            hasher.update(name.as_bytes());
            hasher.update((values.len() as u64).to_le_bytes());
            for v in values {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }

    pub fn n_params(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }
}

/// Serializable parameters of a fitted (or freshly initialized) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub backend: String,
    pub encoder: ParamBlock,
    pub classifier: ParamBlock,
    /// Architecture metadata (dimensions etc.) the backend needs to rebuild.
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelState {
    pub fn encoder_checksum(&self) -> String {
        self.encoder.checksum()
    }

    pub fn classifier_checksum(&self) -> String {
        self.classifier.checksum()
    }
}

/// One row of the persisted training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
}

/// A fitted model: parameters plus the config and log that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub backend: String,
    pub config: TrainConfig,
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
}

impl TrainedModel {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Internal(format!("checkpoint serialization: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::schema(path.display().to_string(), format!("checkpoint: {e}")))
    }

    /// Training log as CSV (epoch, loss, dev macro F1).
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_macro_f1\n");
        for row in &self.log {
            out.push_str(&format!(
                "{},{},{}\n",
                row.epoch, row.train_loss, row.dev_macro_f1
            ));
        }
        out
    }
}

/// A hard prediction with its positive-class confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub label: u8,
    pub score: f64,
}

impl Prediction {
    /// Threshold at 0.5: label is 1 iff score >= 0.5.
    pub fn from_score(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            label: u8::from(score >= 0.5),
            score,
        }
    }
}

/// A preprocessed document paired with its label, ready for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    pub lang: String,
}

impl LabeledExample {
    pub fn from_processed(doc: &Document, processed: &ProcessedDocument) -> Self {
        Self {
            id: processed.id.clone(),
            tokens: processed.tokens.clone(),
            label: doc.label,
            lang: doc.lang.clone(),
        }
    }
}

/// Outcome of one fit: best-epoch parameters plus the full log.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
}

/// The trainable binary-classifier contract.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn capabilities(&self) -> Capabilities;

    /// True for backends that train in one stage (no source pretraining).
    fn single_stage(&self) -> bool {
        false
    }

    /// Fresh, seeded parameters for this backend.
    fn init_state(&self, config: &TrainConfig) -> Result<ModelState>;

    /// Train from `init`, honoring the freeze policy and train sampler.
    fn fit(
        &self,
        init: &ModelState,
        train: &[LabeledExample],
        dev: &[LabeledExample],
        config: &TrainConfig,
    ) -> Result<FitOutcome>;

    /// Deterministic scores for fixed parameters.
    fn predict_state(
        &self,
        state: &ModelState,
        docs: &[ProcessedDocument],
    ) -> Result<Vec<Prediction>>;
}

/// First fine-tuning stage: fit on source-language data from scratch.
pub fn fit_stage1(
    backend: &dyn ClassifierBackend,
    source_train: &[LabeledExample],
    source_dev: &[LabeledExample],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if source_train.is_empty() {
        return Err(Error::Argument("stage-1 train set is empty".into()));
    }
    let init = backend.init_state(config)?;
    let outcome = backend.fit(&init, source_train, source_dev, config)?;
    Ok(TrainedModel {
        backend: backend.name().to_string(),
        config: config.clone(),
        state: outcome.state,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        best_dev_macro_f1: outcome.best_dev_macro_f1,
    })
}

/// Second fine-tuning stage: continue from a stage-1 model on target sets.
///
/// Under `all_but_classifier` the encoder block is verified unchanged by
/// checksum; a violation is an internal invariant failure of the backend.
pub fn fit_stage2(
    backend: &dyn ClassifierBackend,
    base: &TrainedModel,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("stage-2 train set is empty".into()));
    }
    if config.freeze_policy == FreezePolicy::AllButClassifier
        && !backend.capabilities().supports_freezing
    {
        return Err(Error::Argument(format!(
            "backend '{}' does not support freezing; use freeze_policy = \"none\"",
            backend.name()
        )));
    }
    let encoder_before = base.state.encoder_checksum();
    let outcome = backend.fit(&base.state, train, dev, config)?;
    if config.freeze_policy == FreezePolicy::AllButClassifier {
        let encoder_after = outcome.state.encoder_checksum();
        if encoder_before != encoder_after {
            return Err(Error::Internal(format!(
                "frozen encoder changed during stage-2 fit ({} -> {})",
                &encoder_before[..12],
                &encoder_after[..12]
            )));
        }
    }
    Ok(TrainedModel {
        backend: backend.name().to_string(),
        config: config.clone(),
        state: outcome.state,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        best_dev_macro_f1: outcome.best_dev_macro_f1,
    })
}

/// Predict every kept document, skipping dropped ones.
///
/// Returns predictions in document order plus the ids that were skipped.
pub fn predict(
    backend: &dyn ClassifierBackend,
    model: &TrainedModel,
    docs: &[ProcessedDocument],
) -> Result<(Vec<Prediction>, Vec<String>)> {
    let kept: Vec<ProcessedDocument> = docs.iter().filter(|d| !d.dropped).cloned().collect();
    let skipped: Vec<String> = docs
        .iter()
        .filter(|d| d.dropped)
        .map(|d| d.id.clone())
        .collect();
    let predictions = backend.predict_state(&model.state, &kept)?;
    Ok((predictions, skipped))
}

/// Stable 64-bit FNV-1a hash used for feature bucketing.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Macro F1 (fraction, 0..1) of thresholded scores against example labels.
pub(crate) fn dev_macro_f1(scores: &[f64], examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
    let gold: Vec<u8> = examples.iter().map(|e| e.label).collect();
    match confusion(&preds, &gold) {
        Ok(cm) => report(&cm).f1_macro / 100.0,
        Err(_) => 0.0,
    }
}

/// Shared gradient-model interface for the SGD loop.
pub(crate) trait GradientModel {
    fn snapshot(&self) -> ModelState;
    /// Mean loss over the batch; applies the update in place.
    fn train_batch(
        &mut self,
        batch: &[&LabeledExample],
        lr: f64,
        freeze: FreezePolicy,
    ) -> f64;
    fn score(&self, tokens: &[String]) -> f64;
}

const BATCH_RNG_SALT: u64 = 0x5eed_ba7c_4e55_a001;

/// Epoch order per the configured train sampler.
fn epoch_order(
    train: &[LabeledExample],
    sampler: TrainSampler,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    use rand::seq::SliceRandom;
    match sampler {
        TrainSampler::Random => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(rng);
            order
        }
        TrainSampler::ClassWeighted => {
            let by_class: Vec<Vec<usize>> = [0u8, 1u8]
                .iter()
                .map(|&c| {
                    train
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| e.label == c)
                        .map(|(i, _)| i)
                        .collect::<Vec<_>>()
                })
                .filter(|v: &Vec<usize>| !v.is_empty())
                .collect();
            (0..train.len())
                .map(|_| {
                    let class = &by_class[rng.gen_range(0..by_class.len())];
                    class[rng.gen_range(0..class.len())]
                })
                .collect()
        }
    }
}

/// Mini-batch SGD with best-epoch selection on dev macro F1 and early stop.
pub(crate) fn sgd_fit(
    model: &mut dyn GradientModel,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    config: &TrainConfig,
) -> Result<FitOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed ^ BATCH_RNG_SALT);
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best_state = model.snapshot();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0usize;
    for epoch in 0..config.max_epochs {
        let order = epoch_order(train, config.train_sampler, &mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = model.train_batch(&batch, config.learning_rate, config.freeze_policy);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let scores: Vec<f64> = dev.iter().map(|e| model.score(&e.tokens)).collect();
        let f1 = dev_macro_f1(&scores, dev);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            dev_macro_f1: f1,
        });
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best_state = model.snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        state: best_state,
        log,
        best_epoch,
        best_dev_macro_f1: best_f1.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_changes_with_any_parameter() {
        let mut block = ParamBlock::default();
        block.0.insert("w".into(), vec![1.0, 2.0, 3.0]);
        let a = block.checksum();
        block.0.get_mut("w").unwrap()[1] = 2.0000000001;
        let b = block.checksum();
        assert_ne!(a, b);
        block.0.get_mut("w").unwrap()[1] = 2.0;
        assert_eq!(a, block.checksum());
    }

    #[test]
    fn prediction_threshold_is_half() {
        assert_eq!(Prediction::from_score("a", 0.5).label, 1);
        assert_eq!(Prediction::from_score("a", 0.4999).label, 0);
        assert_eq!(Prediction::from_score("a", 0.9).label, 1);
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn fnv_is_stable() {
        // frozen reference values; the bucketing must never silently change
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
