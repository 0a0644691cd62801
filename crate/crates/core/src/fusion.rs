//! Fusing per-query ranked lists into one list per turn.
//!
//! The baseline fusion is positional round-robin interleaving: position
//! slots are filled by visiting the lists in query order, each list hands
//! over its next entry, and an id is emitted only the first time it shows
//! up. Deduplication is what makes multi-query retrieval work: redundant
//! queries then cost rank positions instead of filling the list with
//! copies. The alternative fusion reranks the interleaved pool against the
//! generated answer. Either way the fused scores are synthetic `1/rank`
//! values, so downstream run files always carry strictly decreasing scores.

use crate::error::{Error, Result};
use crate::index::RankedList;
use crate::rerank::{Reranker, TextLookup};

/// One fused entry with provenance back to the list it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEntry {
    pub passage_id: String,
    /// Synthetic score `1/rank` of the final fused position.
    pub score: f64,
    /// Zero-based index of the source list in query order.
    pub source_query: usize,
    /// One-based rank the passage held in that source list.
    pub source_rank: usize,
}

/// Fused ranking for one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedList {
    pub turn_key: String,
    pub entries: Vec<FusedEntry>,
}

impl FusedList {
    /// Checks the fused-list contract: unique ids and exact `1/rank` scores
    /// (which are strictly decreasing by construction).
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if !seen.insert(entry.passage_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "fused list {} repeats passage {:?}",
                    self.turn_key, entry.passage_id
                )));
            }
            let expected = 1.0 / (i + 1) as f64;
            if entry.score != expected {
                return Err(Error::InvalidArgument(format!(
                    "fused list {} rank {} has score {} instead of 1/rank",
                    self.turn_key,
                    i + 1,
                    entry.score
                )));
            }
        }
        Ok(())
    }
}

/// Round-robin interleaves `lists` into at most `limit` unique passages.
///
/// Every position slot consumes exactly one entry from one list (in query
/// order); an already-emitted id just advances that list's cursor. Ties in
/// usefulness are thus settled by query order, and a single list passes
/// through unchanged.
pub fn interleave(turn_key: &str, lists: &[RankedList], limit: usize) -> FusedList {
    let mut cursors = vec![0usize; lists.len()];
    let mut seen = std::collections::HashSet::new();
    let mut picked: Vec<(String, usize, usize)> = Vec::new();
    loop {
        let mut progressed = false;
        for (l, list) in lists.iter().enumerate() {
            if picked.len() == limit {
                break;
            }
            let cursor = cursors[l];
            if cursor >= list.entries.len() {
                continue;
            }
            cursors[l] += 1;
            progressed = true;
            let id = &list.entries[cursor].0;
            if seen.insert(id.clone()) {
                picked.push((id.clone(), l, cursor + 1));
            }
        }
        if !progressed || picked.len() == limit {
            break;
        }
    }
    FusedList {
        turn_key: turn_key.to_string(),
        entries: score_by_rank(picked),
    }
}

/// Fuses by reranking the interleaved pool against the generated answer.
///
/// The first-stage lists are interleaved (without per-query reranking),
/// truncated to `limit`, and the pool is reordered by how well each passage
/// matches `answer_query`. Reranker ties keep interleaved order. The output
/// carries synthetic `1/rank` scores and the pool's provenance.
pub fn answer_rerank_fuse(
    turn_key: &str,
    lists: &[RankedList],
    limit: usize,
    reranker: &Reranker,
    answer_query: &str,
    texts: &dyn TextLookup,
) -> Result<FusedList> {
    let pool = interleave(turn_key, lists, limit);
    let provenance: std::collections::HashMap<&str, (usize, usize)> = pool
        .entries
        .iter()
        .map(|e| (e.passage_id.as_str(), (e.source_query, e.source_rank)))
        .collect();
    let pooled_list = RankedList {
        query_label: answer_query.to_string(),
        entries: pool
            .entries
            .iter()
            .map(|e| (e.passage_id.clone(), e.score))
            .collect(),
    };
    let reranked = reranker.rerank(answer_query, &pooled_list, texts)?;
    let picked = reranked
        .entries
        .into_iter()
        .map(|(id, _)| {
            let (source_query, source_rank) = provenance[id.as_str()];
            (id, source_query, source_rank)
        })
        .collect();
    Ok(FusedList {
        turn_key: turn_key.to_string(),
        entries: score_by_rank(picked),
    })
}

fn score_by_rank(picked: Vec<(String, usize, usize)>) -> Vec<FusedEntry> {
    picked
        .into_iter()
        .enumerate()
        .map(|(i, (passage_id, source_query, source_rank))| FusedEntry {
            passage_id,
            score: 1.0 / (i + 1) as f64,
            source_query,
            source_rank,
        })
        .collect()
}
