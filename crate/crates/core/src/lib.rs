//! Uncertain knowledge-graph fusion for prosopography.
//!
//! Mentions captured from sources of varying reliability are fused into
//! factoids by two taxonomy-aware composition rules, promoted to facts above
//! a threshold, tested against hypotheses, and verdicts flow back into the
//! source reliabilities.

pub mod audit;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod service;
pub mod similarity;
pub mod store;
pub mod taxonomy;

pub use error::{Error, Result};
pub use graph::KnowledgeGraph;
pub use pipeline::FusionConfig;
