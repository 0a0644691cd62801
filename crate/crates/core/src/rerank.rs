//! Second-stage reranking of candidate lists.
//!
//! A reranker rescores the `(query, passage text)` pairs of one ranked list
//! and reorders it. Three implementations cover the pluggable contract: a
//! passthrough that keeps first-stage order, a cheap lexical-overlap scorer,
//! and an HTTP client for external cross-encoder services. All of them obey
//! the same contract: the output is a permutation of the input ids with
//! non-increasing scores, and ties keep first-stage order.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analyze::tokenize;
use crate::corpus::PassageCollection;
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Source of passage texts during reranking.
pub trait TextLookup: Sync {
    fn text_of(&self, id: &str) -> Option<&str>;
}

impl TextLookup for PassageCollection {
    fn text_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|p| p.text.as_str())
    }
}

impl TextLookup for BTreeMap<String, String> {
    fn text_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

/// Which reranker implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankerKind {
    Passthrough,
    Lexical,
    Http,
}

impl FromStr for RerankerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passthrough" => Ok(RerankerKind::Passthrough),
            "lexical" => Ok(RerankerKind::Lexical),
            "http" => Ok(RerankerKind::Http),
            other => Err(Error::InvalidArgument(format!(
                "unknown reranker kind {other:?}, expected \"passthrough\", \"lexical\" or \"http\""
            ))),
        }
    }
}

/// Truncates text to its first `max_tokens` whitespace tokens, normalizing
/// runs of whitespace to single spaces. Rerankers see this view so very long
/// passages cannot blow past model input limits.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Checks the reranker contract: `reranked` must hold exactly the ids of
/// `original` (as a multiset) with non-increasing scores.
pub fn validate_rerank(original: &RankedList, reranked: &RankedList) -> Result<()> {
    if original.entries.len() != reranked.entries.len() {
        return Err(Error::Rerank(format!(
            "reranker changed list length from {} to {}",
            original.entries.len(),
            reranked.entries.len()
        )));
    }
    let mut before: Vec<&str> = original.entries.iter().map(|(id, _)| id.as_str()).collect();
    let mut after: Vec<&str> = reranked.entries.iter().map(|(id, _)| id.as_str()).collect();
    before.sort_unstable();
    after.sort_unstable();
    if before != after {
        return Err(Error::Rerank(
            "reranked list is not a permutation of its input".to_string(),
        ));
    }
    if reranked
        .entries
        .windows(2)
        .any(|w| w[0].1 < w[1].1)
    {
        return Err(Error::Rerank(
            "reranked scores are not non-increasing".to_string(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScorePair<'a> {
    query: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<ScorePair<'a>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// HTTP reranker speaking a simple batch scoring protocol: POST
/// `{"pairs": [{"query", "text"}, ...]}`, answer `{"scores": [...]}` in the
/// same order. Transport failures, 5xx, and 429 are retried.
pub struct HttpReranker {
    client: reqwest::blocking::Client,
    endpoint: String,
    batch_size: usize,
    max_retries: u32,
}

impl HttpReranker {
    pub fn new(
        endpoint: impl Into<String>,
        batch_size: usize,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self> {
        assert!(batch_size >= 1, "batch size must be at least 1");
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Rerank(format!("building http client: {e}")))?;
        Ok(HttpReranker {
            client,
            endpoint: endpoint.into(),
            batch_size,
            max_retries,
        })
    }

    fn send_batch_once(&self, pairs: &[ScorePair<'_>]) -> std::result::Result<Vec<f64>, (String, bool)> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&ScoreRequest {
                pairs: pairs.iter().map(|p| ScorePair { query: p.query, text: p.text }).collect(),
            })
            .send()
            .map_err(|e| (format!("request failed: {e}"), true))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err((format!("server returned {status}"), true));
        }
        if !status.is_success() {
            return Err((format!("server returned {status}"), false));
        }
        let parsed: ScoreResponse = response
            .json()
            .map_err(|e| (format!("unparseable response body: {e}"), false))?;
        if parsed.scores.len() != pairs.len() {
            return Err((
                format!(
                    "server returned {} scores for {} pairs",
                    parsed.scores.len(),
                    pairs.len()
                ),
                false,
            ));
        }
        Ok(parsed.scores)
    }

    fn send_batch(&self, pairs: &[ScorePair<'_>]) -> Result<Vec<f64>> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            match self.send_batch_once(pairs) {
                Ok(scores) => return Ok(scores),
                Err((msg, retryable)) => {
                    if !retryable {
                        return Err(Error::Rerank(msg));
                    }
                    last = msg;
                }
            }
        }
        Err(Error::Rerank(format!(
            "giving up after {} attempts: {last}",
            self.max_retries + 1
        )))
    }
}

/// A configured reranker instance.
pub enum Reranker {
    Passthrough,
    Lexical { max_text_length: usize },
    Http {
        service: HttpReranker,
        max_text_length: usize,
    },
}

impl Reranker {
    pub fn kind(&self) -> RerankerKind {
        match self {
            Reranker::Passthrough => RerankerKind::Passthrough,
            Reranker::Lexical { .. } => RerankerKind::Lexical,
            Reranker::Http { .. } => RerankerKind::Http,
        }
    }

    /// Reorders `list` by relevance of each passage to `query`.
    ///
    /// Output scores are the reranker's own; sorting is stable, so pairs the
    /// reranker cannot distinguish keep their first-stage order. Fails if a
    /// passage id has no text in `texts`.
    pub fn rerank(
        &self,
        query: &str,
        list: &RankedList,
        texts: &dyn TextLookup,
    ) -> Result<RankedList> {
        if matches!(self, Reranker::Passthrough) {
            return Ok(list.clone());
        }
        let max_text_length = match self {
            Reranker::Lexical { max_text_length } | Reranker::Http { max_text_length, .. } => {
                *max_text_length
            }
            Reranker::Passthrough => unreachable!(),
        };
        let mut passages = Vec::with_capacity(list.entries.len());
        for (id, _) in &list.entries {
            let text = texts
                .text_of(id)
                .ok_or_else(|| Error::Rerank(format!("no text available for passage {id:?}")))?;
            passages.push(truncate_tokens(text, max_text_length));
        }

        let scores = match self {
            Reranker::Passthrough => unreachable!(),
            Reranker::Lexical { .. } => passages
                .iter()
                .map(|text| lexical_overlap(query, text))
                .collect::<Vec<f64>>(),
            Reranker::Http { service, .. } => {
                let mut scores = Vec::with_capacity(passages.len());
                for chunk in passages.chunks(service.batch_size) {
                    let pairs: Vec<ScorePair<'_>> = chunk
                        .iter()
                        .map(|text| ScorePair { query, text })
                        .collect();
                    scores.extend(service.send_batch(&pairs)?);
                }
                scores
            }
        };

        let mut entries: Vec<(String, f64)> = list
            .entries
            .iter()
            .zip(scores)
            .map(|((id, _), score)| (id.clone(), score))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("scores are finite"));
        let reranked = RankedList {
            query_label: list.query_label.clone(),
            entries,
        };
        validate_rerank(list, &reranked)?;
        Ok(reranked)
    }
}

/// Fraction of distinct query terms that also occur in the text, under the
/// index analyzer. A query with no tokens scores zero everywhere.
fn lexical_overlap(query: &str, text: &str) -> f64 {
    let query_terms: HashSet<String> = tokenize(query).into_iter().collect();
    if query_terms.is_empty() {
        return 0.0;
    }
    let text_terms: HashSet<String> = tokenize(text).into_iter().collect();
    let overlap = query_terms.intersection(&text_terms).count();
    overlap as f64 / query_terms.len() as f64
}
