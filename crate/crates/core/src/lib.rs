//! Trains executable time-series anomaly detection rules with an LLM agent
//! loop, fuses rule output with an existing base detector, and scores the
//! result with event-aware F1 metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: series and label types, CSV ingestion, train/test splitting
//! - [`preprocess`]: significant-figure scaling, re-indexing, chunking, prompt rendering
//! - [`eval`]: segment extraction and the four F1 definitions
//! - [`rule`]: rule artifacts, the native threshold DSL, the script sandbox, the registry
//! - [`llm`]: chat backends (HTTP and scripted mock), prompt templates, code extraction
//! - [`train`]: the propose / repair / review / select loop and chunk-size calibration
//! - [`fusion`]: false-negative / false-positive sample collection and label aggregation
//! - [`selector`]: dataset modes and contrastive example retrieval

pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod llm;
pub mod preprocess;
pub mod rule;
pub mod selector;
pub mod train;

pub use error::{Error, ErrorKind, Result};
