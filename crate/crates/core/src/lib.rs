//! Multi-query conversational search pipeline.
//!
//! Each dialogue turn is expanded into up to `phi` search queries by an LLM,
//! every query retrieves candidates from a BM25 inverted index, an optional
//! reranker reorders each candidate list, and the per-query lists are fused
//! into one ranking per turn (round-robin interleaving, or reranking the
//! interleaved pool with the generated answer as the query). Run files are
//! scored against graded judgments with trec_eval-compatible metrics,
//! including a per-turn oracle over the number of generated queries.
//!
//! The crate is organized as a library plus a thin `mq4cs` binary; every CLI
//! stage (`index`, `generate`, `run`, `eval`, `oracle`, `sweep`) is a plain
//! function in [`cli`] so integration tests can drive it directly.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod conversation;
pub mod corpus;
pub mod error;
pub mod fsio;
pub mod fusion;
pub mod index;
pub mod llm;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
pub mod querygen;
pub mod rerank;
pub mod stats;
pub mod trec;

pub use error::{Error, Result};
