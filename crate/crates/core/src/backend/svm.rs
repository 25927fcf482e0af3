//! Averaged-word-embedding linear SVM baseline.
//!
//! A document vector is the unweighted mean of its word vectors; the
//! classifier is a linear SVM trained by SGD on the hinge loss. "Balanced"
//! class weights follow the n_total / (2 * n_class) convention and are
//! selected via `TrainSampler::ClassWeighted` (this backend weights the loss
//! rather than resampling). Cross-lingual training data requires an aligned
//! embedding source.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::preprocess::ProcessedDocument;

use super::{
    fnv1a64, Capabilities, ClassifierBackend, EpochLog, FitOutcome, LabeledExample, ModelState,
    ParamBlock, Prediction, TrainConfig, TrainSampler, TrainedModel,
};

pub const SVM_BACKEND_NAME: &str = "svm";

/// Word-vector lookup.
pub trait EmbeddingSource: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn vector(&self, word: &str) -> Option<Vec<f64>>;
    /// True when vectors for different languages live in one aligned space.
    fn is_aligned(&self) -> bool;
}

/// Deterministic pseudo-embeddings derived from a word hash.
///
/// Language-agnostic by construction (the same surface form always maps to
/// the same vector), which makes it trivially "aligned"; useful for demos
/// and CI, not a substitute for real vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedding {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl EmbeddingSource for HashEmbedding {
    fn name(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(word.as_bytes()) ^ self.seed);
        Some((0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn is_aligned(&self) -> bool {
        true
    }
}

/// Explicit word -> vector table, for fixtures and loaded files.
#[derive(Debug, Clone)]
pub struct TableEmbedding {
    name: String,
    dim: usize,
    aligned: bool,
    table: BTreeMap<String, Vec<f64>>,
}

impl TableEmbedding {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        aligned: bool,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let table: BTreeMap<String, Vec<f64>> = entries.into_iter().collect();
        for (word, v) in &table {
            if v.len() != dim {
                return Err(Error::Argument(format!(
                    "embedding for '{word}' has dim {}, expected {dim}",
                    v.len()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            aligned,
            table,
        })
    }

    /// Parse fastText `.vec` text format (optional "count dim" header line).
    pub fn load_vec_file(path: &Path, aligned: bool) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut dim: Option<usize> = None;
        for (i, line) in content.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields[0].parse::<usize>().is_ok() {
                continue; // header
            }
            let word = fields[0].to_string();
            let values: std::result::Result<Vec<f64>, _> =
                fields[1..].iter().map(|f| f.parse::<f64>()).collect();
            let values = values.map_err(|e| {
                Error::schema(format!("{}:{}", path.display(), i + 1), e.to_string())
            })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::schema(
                        format!("{}:{}", path.display(), i + 1),
                        format!("dim {} != {}", values.len(), d),
                    ))
                }
                _ => {}
            }
            entries.push((word, values));
        }
        let dim = dim.ok_or_else(|| {
            Error::value(path.display().to_string(), "no vectors in file")
        })?;
        Self::new(
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("vec")
                .to_string(),
            dim,
            aligned,
            entries,
        )
    }
}

impl EmbeddingSource for TableEmbedding {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.table
            .get(word)
            .or_else(|| self.table.get(&word.to_lowercase()))
            .cloned()
    }

    fn is_aligned(&self) -> bool {
        self.aligned
    }
}

/// Mean of the known word vectors; all-unknown documents fall back to zero.
pub fn document_vector(tokens: &[String], embeddings: &dyn EmbeddingSource) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; embeddings.dim()];
    let mut known = 0usize;
    for token in tokens {
        if let Some(v) = embeddings.vector(token) {
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
            known += 1;
        }
    }
    if known == 0 {
        return (sum, true);
    }
    for s in sum.iter_mut() {
        *s /= known as f64;
    }
    (sum, false)
}

/// Balanced class weight: n_total / (2 * n_class).
pub fn balanced_weight(n_total: usize, n_class: usize) -> f64 {
    n_total as f64 / (2.0 * n_class as f64)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear SVM over averaged embeddings.
pub struct EmbeddingSvmBackend {
    embeddings: Arc<dyn EmbeddingSource>,
    /// L2 regularization strength.
    pub lambda: f64,
}

impl EmbeddingSvmBackend {
    pub fn new(embeddings: Arc<dyn EmbeddingSource>) -> Self {
        Self {
            embeddings,
            lambda: 1e-4,
        }
    }

    pub fn embeddings(&self) -> &dyn EmbeddingSource {
        self.embeddings.as_ref()
    }

    fn weights_from_state(state: &ModelState) -> Result<(Vec<f64>, f64)> {
        let w = state
            .classifier
            .0
            .get("w")
            .cloned()
            .ok_or_else(|| Error::Internal("svm state missing 'w'".into()))?;
        let b = state
            .classifier
            .0
            .get("b")
            .and_then(|v| v.first().copied())
            .unwrap_or(0.0);
        Ok((w, b))
    }

    fn state_from_weights(&self, w: Vec<f64>, b: f64) -> ModelState {
        let mut classifier = ParamBlock::default();
        classifier.0.insert("w".into(), w);
        classifier.0.insert("b".into(), vec![b]);
        ModelState {
            backend: SVM_BACKEND_NAME.to_string(),
            encoder: ParamBlock::default(),
            classifier,
            meta: [
                ("dim".to_string(), json!(self.embeddings.dim())),
                ("embedding".to_string(), json!(self.embeddings.name())),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl ClassifierBackend for EmbeddingSvmBackend {
    fn name(&self) -> &'static str {
        SVM_BACKEND_NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_freezing: false,
            supports_class_weights: true,
            is_multilingual: self.embeddings.is_aligned(),
        }
    }

    fn single_stage(&self) -> bool {
        true
    }

    fn init_state(&self, _config: &TrainConfig) -> Result<ModelState> {
        Ok(self.state_from_weights(vec![0.0; self.embeddings.dim()], 0.0))
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
        let langs: BTreeSet<&str> = train.iter().map(|e| e.lang.as_str()).collect();
        if langs.len() > 1 && !self.embeddings.is_aligned() {
            return Err(Error::Argument(format!(
                "training data spans languages {langs:?} but embedding source '{}' is not aligned",
                self.embeddings.name()
            )));
        }

        let vectors: Vec<(Vec<f64>, f64)> = train
            .iter()
            .map(|e| {
                let (v, oov) = document_vector(&e.tokens, self.embeddings.as_ref());
                if oov {
                    log::warn!(
                        "document '{}' has no in-vocabulary words; using zero vector",
                        e.id
                    );
                }
                (v, if e.label == 1 { 1.0 } else { -1.0 })
            })
            .collect();

        let n = train.len();
        let n_pos = train.iter().filter(|e| e.label == 1).count();
        let n_neg = n - n_pos;
        let (w_pos, w_neg) = match config.train_sampler {
            TrainSampler::ClassWeighted => (
                if n_pos > 0 { balanced_weight(n, n_pos) } else { 0.0 },
                if n_neg > 0 { balanced_weight(n, n_neg) } else { 0.0 },
            ),
            TrainSampler::Random => (1.0, 1.0),
        };

        let (mut w, mut b) = Self::weights_from_state(init)?;
        if w.len() != self.embeddings.dim() {
            return Err(Error::Internal(format!(
                "svm state dim {} != embedding dim {}",
                w.len(),
                self.embeddings.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed ^ 0x5711_c0de);
        let mut order: Vec<usize> = (0..n).collect();
        let mut log = Vec::with_capacity(config.max_epochs);
        let mut best: Option<(f64, Vec<f64>, f64, usize)> = None;
        let mut stale = 0usize;
        for epoch in 0..config.max_epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for &i in &order {
                let (x, y) = &vectors[i];
                let cw = if *y > 0.0 { w_pos } else { w_neg };
                let margin = y * (x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b);
                loss_sum += cw * (1.0 - margin).max(0.0);
                for wi in w.iter_mut() {
                    *wi -= config.learning_rate * self.lambda * *wi;
                }
                if margin < 1.0 {
                    for (wi, xi) in w.iter_mut().zip(x) {
                        *wi += config.learning_rate * cw * y * xi;
                    }
                    b += config.learning_rate * cw * y;
                }
            }
            let loss = loss_sum / n as f64;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let dev_f1 = if dev.is_empty() {
                0.0
            } else {
                let scores: Vec<f64> = dev
                    .iter()
                    .map(|e| {
                        let (x, _) = document_vector(&e.tokens, self.embeddings.as_ref());
                        sigmoid(x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b)
                    })
                    .collect();
                super::dev_macro_f1(&scores, dev)
            };
            log.push(EpochLog {
                epoch,
                train_loss: loss,
                dev_macro_f1: dev_f1,
            });
            if dev.is_empty() {
                best = Some((0.0, w.clone(), b, epoch));
                continue;
            }
            match &best {
                Some((best_f1, ..)) if dev_f1 <= *best_f1 => {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((dev_f1, w.clone(), b, epoch));
                    stale = 0;
                }
            }
        }
        let (best_f1, w, b, best_epoch) = best.expect("at least one epoch ran");
        Ok(FitOutcome {
            state: self.state_from_weights(w, b),
            log,
            best_epoch,
            best_dev_macro_f1: best_f1,
        })
    }

    fn predict_state(
        &self,
        state: &ModelState,
        docs: &[ProcessedDocument],
    ) -> Result<Vec<Prediction>> {
        let (w, b) = Self::weights_from_state(state)?;
        Ok(docs
            .iter()
            .map(|d| {
                let (x, _) = document_vector(&d.tokens, self.embeddings.as_ref());
                let margin = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                Prediction::from_score(d.id.clone(), sigmoid(margin))
            })
            .collect())
    }
}

/// Train the SVM baseline on a corpus, with balanced class weights.
///
/// Convenience wrapper matching the experiment protocol: whitespace tokens,
/// averaged vectors, class-weighted hinge loss, fixed epoch budget.
pub fn fit_svm_baseline(
    train: &Corpus,
    embeddings: Arc<dyn EmbeddingSource>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let backend = EmbeddingSvmBackend::new(embeddings);
    let examples: Vec<LabeledExample> = train
        .iter()
        .map(|d| LabeledExample {
            id: d.id.clone(),
            tokens: d.text.split_whitespace().map(str::to_string).collect(),
            label: d.label,
            lang: d.lang.clone(),
        })
        .collect();
    let init = backend.init_state(config)?;
    let outcome = backend.fit(&init, &examples, &[], config)?;
    Ok(TrainedModel {
        backend: SVM_BACKEND_NAME.to_string(),
        config: config.clone(),
        state: outcome.state,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        best_dev_macro_f1: outcome.best_dev_macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FreezePolicy;

    fn ex(id: &str, words: &[&str], label: u8, lang: &str) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            tokens: words.iter().map(|w| w.to_string()).collect(),
            label,
            lang: lang.into(),
        }
    }

    fn svm_config(balanced: bool) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 1,
            freeze_policy: FreezePolicy::None,
            train_sampler: if balanced {
                TrainSampler::ClassWeighted
            } else {
                TrainSampler::Random
            },
            max_epochs: 60,
            patience: 60,
            model_seed: 7,
            model_id: "svm".into(),
        }
    }

    #[test]
    fn constant_word_document_vector_is_that_vector() {
        let emb = TableEmbedding::new(
            "fixture",
            2,
            true,
            [("v".to_string(), vec![0.25, -0.5])],
        )
        .unwrap();
        let tokens = vec!["v".to_string(); 7];
        let (vec2, oov) = document_vector(&tokens, &emb);
        assert!(!oov);
        assert_eq!(vec2, vec![0.25, -0.5]);
    }

    #[test]
    fn document_vector_is_word_order_invariant() {
        let emb = TableEmbedding::new(
            "fixture",
            2,
            true,
            [
                ("a".to_string(), vec![1.0, 0.0]),
                ("b".to_string(), vec![0.0, 1.0]),
                ("c".to_string(), vec![0.5, 0.5]),
            ],
        )
        .unwrap();
        let fwd: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let rev: Vec<String> = ["c", "b", "a"].iter().map(|s| s.to_string()).collect();
        assert_eq!(document_vector(&fwd, &emb).0, document_vector(&rev, &emb).0);
    }

    #[test]
    fn all_oov_document_falls_back_to_zero_vector() {
        let emb =
            TableEmbedding::new("fixture", 2, true, [("x".to_string(), vec![1.0, 1.0])]).unwrap();
        let tokens = vec!["unknown".to_string(), "words".to_string()];
        let (v, oov) = document_vector(&tokens, &emb);
        assert!(oov);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn balanced_weights_match_formula_on_table3_counts() {
        let w_pos = balanced_weight(4169, 101);
        let w_neg = balanced_weight(4169, 4068);
        assert!((w_pos / w_neg - 40.277).abs() < 0.01, "{}", w_pos / w_neg);
    }

    fn separable_embedding() -> Arc<TableEmbedding> {
        Arc::new(
            TableEmbedding::new(
                "fixture",
                2,
                true,
                [
                    ("posa".to_string(), vec![1.0, 0.8]),
                    ("posb".to_string(), vec![0.9, 1.1]),
                    ("nega".to_string(), vec![-1.0, -0.9]),
                    ("negb".to_string(), vec![-1.1, -0.8]),
                    ("fill".to_string(), vec![0.05, -0.05]),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn separable_fixture_reaches_perfect_f1() {
        let emb = separable_embedding();
        let backend = EmbeddingSvmBackend::new(emb);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for i in 0..20 {
            let p = ex(&format!("p{i}"), &["posa", "fill", "posb"], 1, "de");
            let n = ex(&format!("n{i}"), &["nega", "fill", "negb"], 0, "de");
            if i < 10 {
                train.push(p);
                train.push(n);
            } else {
                test.push(p);
                test.push(n);
            }
        }
        let cfg = svm_config(true);
        let init = backend.init_state(&cfg).unwrap();
        let fitted = backend.fit(&init, &train, &[], &cfg).unwrap();
        let docs: Vec<ProcessedDocument> = test
            .iter()
            .map(|e| ProcessedDocument {
                id: e.id.clone(),
                tokens: e.tokens.clone(),
                original_id: e.id.clone(),
                dropped: false,
            })
            .collect();
        let preds = backend.predict_state(&fitted.state, &docs).unwrap();
        let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
        let gold: Vec<u8> = test.iter().map(|e| e.label).collect();
        let cm = crate::metrics::confusion(&labels, &gold).unwrap();
        let rep = crate::metrics::report(&cm);
        assert!((rep.f1_1 - 100.0).abs() < 1e-9, "F1_1 = {}", rep.f1_1);
    }

    #[test]
    fn unaligned_embeddings_reject_multilingual_training() {
        let emb = Arc::new(
            TableEmbedding::new("mono", 2, false, [("w".to_string(), vec![1.0, 0.0])]).unwrap(),
        );
        let backend = EmbeddingSvmBackend::new(emb);
        let train = vec![ex("a", &["w"], 1, "de"), ex("b", &["w"], 0, "en")];
        let cfg = svm_config(true);
        let init = backend.init_state(&cfg).unwrap();
        assert!(matches!(
            backend.fit(&init, &train, &[], &cfg),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn svm_baseline_on_corpus_is_deterministic() {
        let corpus = crate::corpus::generate_synthetic(
            20,
            80,
            &BTreeMap::from([("general".to_string(), 1.0)]),
            "de",
            5,
        )
        .unwrap();
        let emb: Arc<dyn EmbeddingSource> = Arc::new(HashEmbedding::new(16, 3));
        let a = fit_svm_baseline(&corpus, emb.clone(), &svm_config(true)).unwrap();
        let b = fit_svm_baseline(&corpus, emb, &svm_config(true)).unwrap();
        assert_eq!(a.state, b.state);
    }
}
