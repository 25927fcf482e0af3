//! Normalization of raw posts: entity masking, length filtering, truncation.
//!
//! Token thresholds are counted on whitespace tokens of the masked text, so
//! filtering is independent of any backend's subword tokenizer.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Entity classes replaced by placeholder tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskClass {
    Url,
    Email,
    User,
    Date,
    NumberLike,
}

impl MaskClass {
    pub const ALL: [MaskClass; 5] = [
        MaskClass::Url,
        MaskClass::Email,
        MaskClass::User,
        MaskClass::Date,
        MaskClass::NumberLike,
    ];

    pub fn placeholder(&self) -> &'static str {
        match self {
            MaskClass::Url => "<URL>",
            MaskClass::Email => "<EMAIL>",
            MaskClass::User => "<USER>",
            MaskClass::Date => "<DATE>",
            MaskClass::NumberLike => "<NUMBER>",
        }
    }

    fn pattern(&self) -> &'static Regex {
        // Masking order matters: URLs before dates/numbers (they contain
        // digits and dots), emails before user handles (they contain '@').
        // None of the patterns can match a placeholder, which makes masking
        // idempotent.
        static URL: OnceLock<Regex> = OnceLock::new();
        static EMAIL: OnceLock<Regex> = OnceLock::new();
        static USER: OnceLock<Regex> = OnceLock::new();
        static DATE: OnceLock<Regex> = OnceLock::new();
        static NUMBER: OnceLock<Regex> = OnceLock::new();
        match self {
            MaskClass::Url => URL.get_or_init(|| {
                Regex::new(r"(?i)\b(?:https?://|www\.)[^\s<>]+").expect("url regex")
            }),
            MaskClass::Email => EMAIL.get_or_init(|| {
                Regex::new(r"\b[[:alnum:]._%+-]+@[[:alnum:].-]+\.[[:alpha:]]{2,}\b")
                    .expect("email regex")
            }),
            MaskClass::User => USER.get_or_init(|| Regex::new(r"@\w+").expect("user regex")),
            MaskClass::Date => DATE.get_or_init(|| {
                Regex::new(r"\b(?:\d{1,2}[./]\d{1,2}[./]\d{2,4}|\d{4}-\d{2}-\d{2})\b")
                    .expect("date regex")
            }),
            MaskClass::NumberLike => {
                NUMBER.get_or_init(|| Regex::new(r"\b\d+(?:[.,]\d+)*\b").expect("number regex"))
            }
        }
    }
}

/// Settings controlling masking and the length gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizerConfig {
    /// Documents with fewer masked tokens than this are dropped.
    pub min_tokens: usize,
    /// Longer documents are head-truncated to this many tokens.
    pub max_tokens: usize,
    pub mask_classes: BTreeSet<MaskClass>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            min_tokens: 4,
            max_tokens: 300,
            mask_classes: MaskClass::ALL.into_iter().collect(),
        }
    }
}

impl NormalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens < 1 {
            return Err(Error::Argument("min_tokens must be >= 1".into()));
        }
        if self.max_tokens <= self.min_tokens {
            return Err(Error::Argument(format!(
                "max_tokens ({}) must exceed min_tokens ({})",
                self.max_tokens, self.min_tokens
            )));
        }
        Ok(())
    }
}

/// A masked, tokenized document ready for a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub original_id: String,
    /// True when the document fell below the minimum token count.
    pub dropped: bool,
}

impl ProcessedDocument {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Replace every match of the configured entity classes by its placeholder.
///
/// Total and idempotent: placeholders never re-match any pattern.
pub fn mask_entities(text: &str, config: &NormalizerConfig) -> String {
    let mut out = text.to_string();
    for class in MaskClass::ALL {
        if config.mask_classes.contains(&class) {
            out = class
                .pattern()
                .replace_all(&out, class.placeholder())
                .into_owned();
        }
    }
    out
}

/// Mask, tokenize, and apply the length gate to one document.
pub fn preprocess(doc: &Document, config: &NormalizerConfig) -> ProcessedDocument {
    let masked = mask_entities(&doc.text, config);
    let mut tokens: Vec<String> = masked.split_whitespace().map(str::to_string).collect();
    let dropped = tokens.len() < config.min_tokens;
    if tokens.len() > config.max_tokens {
        tokens.truncate(config.max_tokens);
    }
    ProcessedDocument {
        id: doc.id.clone(),
        tokens,
        original_id: doc.id.clone(),
        dropped,
    }
}

/// Preprocess a batch, returning (kept, dropped ids).
pub fn preprocess_all(
    docs: &[Document],
    config: &NormalizerConfig,
) -> (Vec<ProcessedDocument>, Vec<String>) {
    let mut kept = Vec::with_capacity(docs.len());
    let mut dropped = Vec::new();
    for doc in docs {
        let processed = preprocess(doc, config);
        if processed.dropped {
            dropped.push(processed.id);
        } else {
            kept.push(processed);
        }
    }
    (kept, dropped)
}
