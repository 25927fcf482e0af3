//! Resolution of `model_id` strings to concrete backends.
//!
//! A registry file maps names to backend constructions: local checkpoint
//! paths, architecture parameters, or hub identifiers. Hub identifiers are
//! recognized but not fetchable; resolving one asks for a local checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::encoder::{AttentionEncoderBackend, EncoderDims};
use super::stub::HashedLogisticBackend;
use super::svm::{EmbeddingSvmBackend, HashEmbedding, TableEmbedding};
use super::{ClassifierBackend, TrainedModel};

fn default_hash_dim() -> usize {
    1024
}
fn default_hidden_dim() -> usize {
    16
}
fn default_embedding_dim() -> usize {
    32
}
fn default_d_model() -> usize {
    32
}
fn default_n_heads() -> usize {
    2
}
fn default_n_layers() -> usize {
    1
}
fn default_ff_dim() -> usize {
    64
}
fn default_max_len() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_lambda() -> f64 {
    1e-4
}

/// One registry entry, tagged by backend kind.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ModelEntry {
    Stub {
        #[serde(default = "default_hash_dim")]
        hash_dim: usize,
        #[serde(default = "default_hidden_dim")]
        hidden_dim: usize,
    },
    Encoder {
        #[serde(default = "default_hash_dim")]
        vocab_dim: usize,
        #[serde(default = "default_d_model")]
        d_model: usize,
        #[serde(default = "default_n_heads")]
        n_heads: usize,
        #[serde(default = "default_n_layers")]
        n_layers: usize,
        #[serde(default = "default_ff_dim")]
        ff_dim: usize,
        #[serde(default = "default_max_len")]
        max_len: usize,
        /// Local checkpoint (a saved model JSON) to start stage 1 from.
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
    Svm {
        /// "hash" or a path to a fastText-format .vec file.
        #[serde(default = "default_embedding")]
        embedding: String,
        #[serde(default = "default_embedding_dim")]
        embedding_dim: usize,
        #[serde(default)]
        embedding_seed: u64,
        #[serde(default = "default_true")]
        aligned: bool,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Hub {
        hub_id: String,
    },
}

fn default_embedding() -> String {
    "hash".to_string()
}

#[derive(Debug, Clone, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    models: BTreeMap<String, ModelEntry>,
}

/// Named backend constructions; file entries shadow builtins.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<String, ModelEntry>,
}

impl ModelRegistry {
    /// The bundled defaults: a stub, a mini attention encoder, and the
    /// hash-embedding SVM.
    pub fn builtin() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            "stub-small".to_string(),
            ModelEntry::Stub {
                hash_dim: default_hash_dim(),
                hidden_dim: default_hidden_dim(),
            },
        );
        entries.insert(
            "mini-encoder".to_string(),
            ModelEntry::Encoder {
                vocab_dim: default_hash_dim(),
                d_model: default_d_model(),
                n_heads: default_n_heads(),
                n_layers: default_n_layers(),
                ff_dim: default_ff_dim(),
                max_len: default_max_len(),
                checkpoint: None,
            },
        );
        entries.insert(
            "hash-svm".to_string(),
            ModelEntry::Svm {
                embedding: default_embedding(),
                embedding_dim: default_embedding_dim(),
                embedding_seed: 13,
                aligned: true,
                lambda: default_lambda(),
            },
        );
        Self { entries }
    }

    /// Load a registry file on top of the builtins.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RegistryFile = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("registry {}: {e}", path.display())))?;
        let mut registry = Self::builtin();
        registry.entries.extend(file.models);
        Ok(registry)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelEntry> {
        self.entries.get(model_id).ok_or_else(|| {
            Error::Config(format!(
                "unknown model_id '{model_id}' (known: {})",
                self.entries
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }

    /// Construct the backend a model id names.
    pub fn create_backend(&self, model_id: &str) -> Result<Box<dyn ClassifierBackend>> {
        match self.get(model_id)? {
            ModelEntry::Stub {
                hash_dim,
                hidden_dim,
            } => Ok(Box::new(HashedLogisticBackend::new(*hash_dim, *hidden_dim))),
            ModelEntry::Encoder {
                vocab_dim,
                d_model,
                n_heads,
                n_layers,
                ff_dim,
                max_len,
                checkpoint,
            } => {
                let dims = EncoderDims {
                    vocab_dim: *vocab_dim,
                    d_model: *d_model,
                    n_heads: *n_heads,
                    n_layers: *n_layers,
                    ff_dim: *ff_dim,
                    max_len: *max_len,
                };
                match checkpoint {
                    Some(path) => {
                        let model = TrainedModel::load_json(path)?;
                        Ok(Box::new(AttentionEncoderBackend::with_pretrained(
                            dims,
                            model.state,
                        )))
                    }
                    None => Ok(Box::new(AttentionEncoderBackend::new(dims))),
                }
            }
            ModelEntry::Svm {
                embedding,
                embedding_dim,
                embedding_seed,
                aligned,
                lambda,
            } => {
                let source: Arc<dyn super::svm::EmbeddingSource> = if embedding == "hash" {
                    Arc::new(HashEmbedding::new(*embedding_dim, *embedding_seed))
                } else {
                    Arc::new(TableEmbedding::load_vec_file(
                        Path::new(embedding),
                        *aligned,
                    )?)
                };
                let mut backend = EmbeddingSvmBackend::new(source);
                backend.lambda = *lambda;
                Ok(Box::new(backend))
            }
            ModelEntry::Hub { hub_id } => Err(Error::Config(format!(
                "model '{model_id}' resolves to hub identifier '{hub_id}'; remote checkpoints \
                 are not fetchable here — point the registry entry at a local checkpoint instead"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn builtin_ids_resolve() {
        let registry = ModelRegistry::builtin();
        for id in ["stub-small", "mini-encoder", "hash-svm"] {
            assert!(registry.create_backend(id).is_ok(), "{id}");
        }
    }

    #[test]
    fn unknown_id_names_known_models() {
        let registry = ModelRegistry::builtin();
        let err = match registry.create_backend("nope") {
            Err(e) => e,
            Ok(_) => panic!("expected error"),
        };
        assert!(err.to_string().contains("stub-small"));
    }

    #[test]
    fn file_entries_shadow_builtins() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "[models.stub-small]\nbackend = \"stub\"\nhash_dim = 64\nhidden_dim = 4\n\n\
             [models.xlm-roberta-base]\nbackend = \"hub\"\nhub_id = \"xlm-roberta-base\""
        )
        .unwrap();
        let registry = ModelRegistry::load(f.path()).unwrap();
        assert!(registry.create_backend("stub-small").is_ok());
        let err = match registry.create_backend("xlm-roberta-base") {
            Err(e) => e,
            Ok(_) => panic!("expected error"),
        };
        assert!(err.to_string().contains("local checkpoint"));
        assert_eq!(err.exit_code(), 2);
    }
}
