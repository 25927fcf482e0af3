//! Deterministic CI backend: hashed bag-of-words features, a seeded random
//! projection encoder, and a trainable logistic classifier head.
//!
//! Cheap enough to run the full seed grid in seconds, yet structurally a real
//! two-part model, so freeze policies, checkpoints, and the voting pipeline
//! are exercised exactly as with a large encoder.

use serde::Deserialize;
use serde_json::json;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::ProcessedDocument;

use super::{
    fnv1a64, sgd_fit, Capabilities, ClassifierBackend, FitOutcome, FreezePolicy, GradientModel,
    LabeledExample, ModelState, ParamBlock, Prediction, TrainConfig,
};

pub const STUB_BACKEND_NAME: &str = "stub";

/// Hashed bag-of-words + logistic head backend.
#[derive(Debug, Clone)]
pub struct HashedLogisticBackend {
    /// Feature-hashing buckets.
    pub hash_dim: usize,
    /// Width of the projection layer.
    pub hidden_dim: usize,
}

impl Default for HashedLogisticBackend {
    fn default() -> Self {
        Self {
            hash_dim: 1024,
            hidden_dim: 16,
        }
    }
}

impl HashedLogisticBackend {
    pub fn new(hash_dim: usize, hidden_dim: usize) -> Self {
        Self {
            hash_dim,
            hidden_dim,
        }
    }
}

fn hashed_features(tokens: &[String], dim: usize) -> Vec<(usize, f64)> {
    let mut counts: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for token in tokens {
        let bucket = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
        *counts.entry(bucket).or_default() += 1.0;
    }
    let norm = (counts.values().map(|v| v * v).sum::<f64>()).sqrt();
    if norm > 0.0 {
        for v in counts.values_mut() {
            *v /= norm;
        }
    }
    counts.into_iter().collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct StubModel {
    hash_dim: usize,
    hidden_dim: usize,
    /// Row-major [hidden_dim x hash_dim].
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    w_clf: Vec<f64>,
    b_clf: f64,
}

impl StubModel {
    fn from_state(state: &ModelState) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            hash_dim: usize,
            hidden_dim: usize,
        }
        let meta: Meta = serde_json::from_value(json!(state.meta))
            .map_err(|e| Error::Internal(format!("stub state meta: {e}")))?;
        let get = |block: &ParamBlock, key: &str| -> Result<Vec<f64>> {
            block
                .0
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Internal(format!("stub state missing '{key}'")))
        };
        let model = Self {
            hash_dim: meta.hash_dim,
            hidden_dim: meta.hidden_dim,
            w_enc: get(&state.encoder, "w_enc")?,
            b_enc: get(&state.encoder, "b_enc")?,
            w_clf: get(&state.classifier, "w_clf")?,
            b_clf: get(&state.classifier, "b_clf")?
                .first()
                .copied()
                .unwrap_or(0.0),
        };
        if model.w_enc.len() != model.hash_dim * model.hidden_dim
            || model.b_enc.len() != model.hidden_dim
            || model.w_clf.len() != model.hidden_dim
        {
            return Err(Error::Internal("stub state has inconsistent shapes".into()));
        }
        Ok(model)
    }

    fn hidden(&self, features: &[(usize, f64)]) -> Vec<f64> {
        let mut h = self.b_enc.clone();
        for &(bucket, value) in features {
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += self.w_enc[j * self.hash_dim + bucket] * value;
            }
        }
        for hj in h.iter_mut() {
            *hj = hj.tanh();
        }
        h
    }

    fn forward(&self, tokens: &[String]) -> (Vec<(usize, f64)>, Vec<f64>, f64) {
        let features = hashed_features(tokens, self.hash_dim);
        let hidden = self.hidden(&features);
        let z = self
            .w_clf
            .iter()
            .zip(&hidden)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + self.b_clf;
        (features, hidden, sigmoid(z))
    }
}

impl GradientModel for StubModel {
    fn snapshot(&self) -> ModelState {
        let mut encoder = ParamBlock::default();
        encoder.0.insert("w_enc".into(), self.w_enc.clone());
        encoder.0.insert("b_enc".into(), self.b_enc.clone());
        let mut classifier = ParamBlock::default();
        classifier.0.insert("w_clf".into(), self.w_clf.clone());
        classifier.0.insert("b_clf".into(), vec![self.b_clf]);
        ModelState {
            backend: STUB_BACKEND_NAME.to_string(),
            encoder,
            classifier,
            meta: [
                ("hash_dim".to_string(), json!(self.hash_dim)),
                ("hidden_dim".to_string(), json!(self.hidden_dim)),
            ]
            .into_iter()
            .collect(),
        }
    }

    fn train_batch(&mut self, batch: &[&LabeledExample], lr: f64, freeze: FreezePolicy) -> f64 {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad_w_clf = vec![0.0; self.hidden_dim];
        let mut grad_b_clf = 0.0;
        // sparse encoder gradient: (hidden unit, bucket) -> value
        let mut grad_w_enc: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        let mut grad_b_enc = vec![0.0; self.hidden_dim];
        let mut loss = 0.0;
        for example in batch {
            let (features, hidden, p) = self.forward(&example.tokens);
            let y = f64::from(example.label);
            loss -= (y * p.max(1e-12).ln()) + ((1.0 - y) * (1.0 - p).max(1e-12).ln());
            let dz = p - y;
            for j in 0..self.hidden_dim {
                grad_w_clf[j] += dz * hidden[j];
            }
            grad_b_clf += dz;
            if freeze == FreezePolicy::None {
                for j in 0..self.hidden_dim {
                    let dh = dz * self.w_clf[j];
                    let dpre = dh * (1.0 - hidden[j] * hidden[j]);
                    grad_b_enc[j] += dpre;
                    for &(bucket, value) in &features {
                        *grad_w_enc.entry((j, bucket)).or_default() += dpre * value;
                    }
                }
            }
        }
        for j in 0..self.hidden_dim {
            self.w_clf[j] -= lr * scale * grad_w_clf[j];
        }
        self.b_clf -= lr * scale * grad_b_clf;
        if freeze == FreezePolicy::None {
            for ((j, bucket), g) in grad_w_enc {
                self.w_enc[j * self.hash_dim + bucket] -= lr * scale * g;
            }
            for j in 0..self.hidden_dim {
                self.b_enc[j] -= lr * scale * grad_b_enc[j];
            }
        }
        loss * scale
    }

    fn score(&self, tokens: &[String]) -> f64 {
        self.forward(tokens).2
    }
}

impl ClassifierBackend for HashedLogisticBackend {
    fn name(&self) -> &'static str {
        STUB_BACKEND_NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_freezing: true,
            supports_class_weights: true,
            is_multilingual: true,
        }
    }

    fn init_state(&self, config: &TrainConfig) -> Result<ModelState> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed);
        let scale = 1.0 / (self.hash_dim as f64).sqrt();
        let w_enc: Vec<f64> = (0..self.hash_dim * self.hidden_dim)
            .map(|_| rng.gen_range(-1.0..1.0) * scale * 16.0)
            .collect();
        let b_enc = vec![0.0; self.hidden_dim];
        let w_clf: Vec<f64> = (0..self.hidden_dim)
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        let model = StubModel {
            hash_dim: self.hash_dim,
            hidden_dim: self.hidden_dim,
            w_enc,
            b_enc,
            w_clf,
            b_clf: 0.0,
        };
        Ok(model.snapshot())
    }

    fn fit(
        &self,
        init: &ModelState,
        train: &[LabeledExample],
        dev: &[LabeledExample],
        config: &TrainConfig,
    ) -> Result<FitOutcome> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Argument("train set is empty".into()));
        }
        let mut model = StubModel::from_state(init)?;
        sgd_fit(&mut model, train, dev, config)
    }

    fn predict_state(
        &self,
        state: &ModelState,
        docs: &[ProcessedDocument],
    ) -> Result<Vec<Prediction>> {
        let model = StubModel::from_state(state)?;
        Ok(docs
            .iter()
            .map(|d| Prediction::from_score(d.id.clone(), model.forward(&d.tokens).2))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{fit_stage1, fit_stage2, predict};

    fn example(id: &str, words: &[&str], label: u8) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            tokens: words.iter().map(|w| w.to_string()).collect(),
            label,
            lang: "de".into(),
        }
    }

    /// A 20-document corpus where bag-of-words linearly separates the labels.
    fn separable_fixture() -> (Vec<LabeledExample>, Vec<LabeledExample>) {
        let pos_words = ["schlecht", "uebel", "schwindel", "ausschlag"];
        let neg_words = ["gut", "bestens", "zufrieden", "froh"];
        let mut train = Vec::new();
        let mut dev = Vec::new();
        for i in 0..10 {
            let w = pos_words[i % pos_words.len()];
            let w2 = pos_words[(i + 1) % pos_words.len()];
            let ex = example(&format!("p{i}"), &["mir", "ist", w, w2], 1);
            if i < 5 {
                train.push(ex);
            } else {
                dev.push(ex);
            }
            let w = neg_words[i % neg_words.len()];
            let w2 = neg_words[(i + 1) % neg_words.len()];
            let ex = example(&format!("n{i}"), &["mir", "geht", "es", w, w2], 0);
            if i < 5 {
                train.push(ex);
            } else {
                dev.push(ex);
            }
        }
        (train, dev)
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.8,
            batch_size: 4,
            freeze_policy: FreezePolicy::None,
            train_sampler: super::super::TrainSampler::Random,
            max_epochs: 30,
            patience: 10,
            model_seed: 42,
            model_id: "stub-small".into(),
        }
    }

    #[test]
    fn separable_corpus_reaches_perfect_dev_f1() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let model = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        assert!(
            (model.best_dev_macro_f1 - 1.0).abs() < 1e-9,
            "dev macro F1 = {}",
            model.best_dev_macro_f1
        );
    }

    #[test]
    fn frozen_stage2_keeps_encoder_changes_classifier() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let stage1 = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        let cfg2 = TrainConfig {
            freeze_policy: FreezePolicy::AllButClassifier,
            learning_rate: 0.5,
            max_epochs: 5,
            ..config()
        };
        let stage2 = fit_stage2(&backend, &stage1, &train, &dev, &cfg2).unwrap();
        assert_eq!(
            stage1.state.encoder_checksum(),
            stage2.state.encoder_checksum()
        );
        assert_ne!(
            stage1.state.classifier_checksum(),
            stage2.state.classifier_checksum()
        );
    }

    #[test]
    fn unfrozen_stage2_changes_encoder() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let stage1 = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        let stage2 = fit_stage2(&backend, &stage1, &train, &dev, &config()).unwrap();
        assert_ne!(
            stage1.state.encoder_checksum(),
            stage2.state.encoder_checksum()
        );
    }

    #[test]
    fn predictions_are_deterministic() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let a = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        let b = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        assert_eq!(a.state, b.state);
        let docs: Vec<crate::preprocess::ProcessedDocument> = dev
            .iter()
            .map(|e| crate::preprocess::ProcessedDocument {
                id: e.id.clone(),
                tokens: e.tokens.clone(),
                original_id: e.id.clone(),
                dropped: false,
            })
            .collect();
        let (p1, _) = predict(&backend, &a, &docs).unwrap();
        let (p2, _) = predict(&backend, &b, &docs).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn predict_skips_dropped_documents() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let model = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        let docs = vec![
            crate::preprocess::ProcessedDocument {
                id: "keep".into(),
                tokens: vec!["mir".into(), "ist".into(), "uebel".into(), "heute".into()],
                original_id: "keep".into(),
                dropped: false,
            },
            crate::preprocess::ProcessedDocument {
                id: "drop".into(),
                tokens: vec!["kurz".into()],
                original_id: "drop".into(),
                dropped: true,
            },
        ];
        let (preds, skipped) = predict(&backend, &model, &docs).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].doc_id, "keep");
        assert_eq!(skipped, vec!["drop".to_string()]);
    }

    #[test]
    fn empty_prediction_input_gives_empty_output() {
        let (train, dev) = separable_fixture();
        let backend = HashedLogisticBackend::default();
        let model = fit_stage1(&backend, &train, &dev, &config()).unwrap();
        let (preds, skipped) = predict(&backend, &model, &[]).unwrap();
        assert!(preds.is_empty() && skipped.is_empty());
    }

    #[test]
    fn empty_train_set_is_an_argument_error() {
        let backend = HashedLogisticBackend::default();
        let err = fit_stage1(&backend, &[], &[], &config()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn class_weighted_sampler_trains() {
        let (mut train, dev) = separable_fixture();
        // heavy imbalance: drop most positives from train
        train.retain(|e| e.label == 0 || e.id == "p0");
        let cfg = TrainConfig {
            train_sampler: super::super::TrainSampler::ClassWeighted,
            ..config()
        };
        let backend = HashedLogisticBackend::default();
        let model = fit_stage1(&backend, &train, &dev, &cfg).unwrap();
        assert!(model.best_dev_macro_f1 > 0.4);
    }
}
