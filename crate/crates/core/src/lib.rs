//! Cross-lingual few-shot document classification toolkit for adverse drug
//! reaction (ADR) detection in patient-forum posts.
//!
//! The library covers the full experiment pipeline: corpus handling,
//! entity-masking preprocessing, few-shot train/dev sampling, two-stage
//! fine-tuning behind a pluggable classifier backend, seeded ensembles with
//! majority voting, lexicon-based post-processing, and the metric suite for
//! severely imbalanced binary tasks.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod backend;
pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod report;
pub mod preprocess;
pub mod sampler;

pub use error::{Error, Result};
