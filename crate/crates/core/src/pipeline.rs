//! Per-turn retrieval flow: one first-stage ranked list per generated
//! query, optional per-query reranking, then fusion into a single list.
//!
//! Each framework variant wires the same pieces differently. `mq4cs` and
//! `mq4cs_ans` rerank every per-query list before interleaving; the
//! `mq4cs_ans_rerank` variant skips per-query reranking and instead reranks
//! the interleaved pool against the generated answer; `qr` and `aq` are the
//! single-query degenerate cases. Per-query branches are independent, so
//! permuting the queries permutes the per-query lists identically.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conversation::turn_key;
use crate::error::{Error, Result};
use crate::fusion::{answer_rerank_fuse, interleave, FusedList};
use crate::index::{InvertedIndex, RankedList};
use crate::querygen::{GenVariant, QuerySet};
use crate::rerank::{Reranker, TextLookup};

/// End-to-end framework variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Single rewritten query, retrieve + rerank.
    Qr,
    /// Generated answer used as the single query, retrieve + rerank.
    Aq,
    /// Multi-aspect queries, per-query rerank, interleave.
    Mq4cs,
    /// Answer-conditioned multi-aspect queries, per-query rerank, interleave.
    Mq4csAns,
    /// Answer-conditioned queries, first-stage only per query, interleave,
    /// then rerank the pool against the answer.
    Mq4csAnsRerank,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Qr,
        Variant::Aq,
        Variant::Mq4cs,
        Variant::Mq4csAns,
        Variant::Mq4csAnsRerank,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Qr => "qr",
            Variant::Aq => "aq",
            Variant::Mq4cs => "mq4cs",
            Variant::Mq4csAns => "mq4cs_ans",
            Variant::Mq4csAnsRerank => "mq4cs_ans_rerank",
        }
    }

    /// Which query-generation flow feeds this variant.
    pub fn generation(&self) -> GenVariant {
        match self {
            Variant::Qr => GenVariant::Qr,
            Variant::Aq => GenVariant::Aq,
            Variant::Mq4cs => GenVariant::Mq4cs,
            Variant::Mq4csAns | Variant::Mq4csAnsRerank => GenVariant::Mq4csAns,
        }
    }

    /// Whether each per-query list is reranked before fusion.
    pub fn per_query_rerank(&self) -> bool {
        !matches!(self, Variant::Mq4csAnsRerank)
    }

    pub fn fusion(&self) -> FusionKind {
        match self {
            Variant::Mq4csAnsRerank => FusionKind::AnswerRerank,
            _ => FusionKind::Interleave,
        }
    }

    /// Whether the flow produces (and may later need) a generated answer.
    pub fn needs_answer(&self) -> bool {
        matches!(self, Variant::Aq | Variant::Mq4csAns | Variant::Mq4csAnsRerank)
    }

    /// qr and aq issue exactly one query regardless of the budget.
    pub fn forces_single_query(&self) -> bool {
        matches!(self, Variant::Qr | Variant::Aq)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the per-query lists are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Interleave,
    AnswerRerank,
}

impl FusionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionKind::Interleave => "interleave",
            FusionKind::AnswerRerank => "answer_rerank",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resolved per-run retrieval settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub phi: u32,
    /// Passages pulled from the index per query.
    pub first_stage_depth: usize,
    /// Maximum fused list length.
    pub fusion_limit: usize,
}

impl PipelineConfig {
    pub fn new(variant: Variant, phi: u32) -> Result<PipelineConfig> {
        let config = PipelineConfig {
            variant,
            phi,
            first_stage_depth: 1000,
            fusion_limit: 1000,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi == 0 {
            return Err(Error::InvalidArgument(
                "query budget phi must be at least 1".to_string(),
            ));
        }
        if self.variant.forces_single_query() && self.phi != 1 {
            return Err(Error::InvalidArgument(format!(
                "variant {} issues a single query; phi must be 1, got {}",
                self.variant, self.phi
            )));
        }
        if self.first_stage_depth == 0 || self.fusion_limit == 0 {
            return Err(Error::InvalidArgument(
                "retrieval depth and fusion limit must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Wall-clock stage durations for one turn, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StageTimings {
    /// Set by the caller that ran query generation; zero inside `run_turn`.
    pub generation_ms: f64,
    pub retrieval_ms: f64,
    pub rerank_ms: f64,
    pub fusion_ms: f64,
}

/// Output of the retrieval flow for one turn.
#[derive(Debug, Clone)]
pub struct TurnRun {
    pub turn_key: String,
    /// One list per query, in query order; reranked when the variant says so.
    pub lists: Vec<RankedList>,
    pub fused: FusedList,
    pub per_query_rerank: bool,
    pub fusion: FusionKind,
    pub timings: StageTimings,
}

fn check_query_set(config: &PipelineConfig, query_set: &QuerySet) -> Result<()> {
    if query_set.queries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no queries for turn {}",
            turn_key(&query_set.conv_id, query_set.turn_id)
        )));
    }
    let budget = if config.variant.forces_single_query() {
        1
    } else {
        config.phi as usize
    };
    if query_set.queries.len() > budget {
        return Err(Error::InvalidArgument(format!(
            "{} queries for turn {} exceed the budget of {}",
            query_set.queries.len(),
            turn_key(&query_set.conv_id, query_set.turn_id),
            budget
        )));
    }
    Ok(())
}

/// Runs retrieval, optional per-query reranking, and fusion for one turn.
pub fn run_turn(
    config: &PipelineConfig,
    index: &InvertedIndex,
    reranker: &Reranker,
    query_set: &QuerySet,
    texts: &dyn TextLookup,
) -> Result<TurnRun> {
    config.validate()?;
    check_query_set(config, query_set)?;
    let key = turn_key(&query_set.conv_id, query_set.turn_id);

    let mut timings = StageTimings::default();
    let mut lists = Vec::with_capacity(query_set.queries.len());
    for (idx, query) in query_set.queries.iter().enumerate() {
        let started = Instant::now();
        let first_stage = index.retrieve(query, config.first_stage_depth);
        timings.retrieval_ms += started.elapsed().as_secs_f64() * 1000.0;

        if config.variant.per_query_rerank() {
            let started = Instant::now();
            let reranked = reranker
                .rerank(query, &first_stage, texts)
                .map_err(|e| Error::Rerank(format!("query {idx} of turn {key}: {e}")))?;
            timings.rerank_ms += started.elapsed().as_secs_f64() * 1000.0;
            lists.push(reranked);
        } else {
            lists.push(first_stage);
        }
    }

    let started = Instant::now();
    let fused = match config.variant.fusion() {
        FusionKind::Interleave => interleave(&key, &lists, config.fusion_limit),
        FusionKind::AnswerRerank => {
            let answer = query_set.answer.as_deref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "variant {} needs a generated answer for turn {key}",
                    config.variant
                ))
            })?;
            answer_rerank_fuse(&key, &lists, config.fusion_limit, reranker, answer, texts)?
        }
    };
    timings.fusion_ms += started.elapsed().as_secs_f64() * 1000.0;

    Ok(TurnRun {
        turn_key: key,
        lists,
        fused,
        per_query_rerank: config.variant.per_query_rerank(),
        fusion: config.variant.fusion(),
        timings,
    })
}
