//! Retrieval metrics over graded judgments.
//!
//! Semantics follow trec_eval: nDCG uses linear gain `grade / log2(rank+1)`
//! with the ideal computed from all judged passages; recall, reciprocal
//! rank, and average precision binarize at a configurable grade threshold.
//! A turn with no relevant passage scores zero on nDCG, MRR, and MAP, but is
//! excluded from recall averages (recall is undefined there, and counting
//! zeros would punish unanswerable turns twice). Means are arithmetic over
//! turns present in both the run and the qrels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trec::{QrelSet, RunFile};

/// One evaluation measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ndcg(usize),
    Recall(usize),
    Mrr,
    Map,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cutoff = |spec: &str| -> Result<usize> {
            let k: usize = spec
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid metric cutoff {spec:?}")))?;
            if k == 0 {
                return Err(Error::InvalidArgument(
                    "metric cutoff must be at least 1".to_string(),
                ));
            }
            Ok(k)
        };
        match s.split_once('@') {
            Some(("ndcg", k)) => Ok(Metric::Ndcg(cutoff(k)?)),
            Some(("recall", k)) => Ok(Metric::Recall(cutoff(k)?)),
            None if s == "mrr" => Ok(Metric::Mrr),
            None if s == "map" => Ok(Metric::Map),
            _ => Err(Error::InvalidArgument(format!(
                "unknown metric {s:?}, expected ndcg@K, recall@K, mrr, or map"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::Map => f.write_str("map"),
        }
    }
}

fn grade_of(grades: &BTreeMap<String, i32>, id: &str) -> i32 {
    grades.get(id).copied().unwrap_or(0)
}

/// Normalized discounted cumulative gain at `k` with linear gain. The ideal
/// ranking is built from every judged passage, so a run cannot score 1.0 by
/// omitting hard-to-find relevant passages.
pub fn ndcg_at(k: usize, ranked: &[(String, f64)], grades: &BTreeMap<String, i32>) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, _))| grade_of(grades, id) as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<i32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| *g as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of relevant passages (grade at least `threshold`) found in the
/// top `k`. `None` when the turn has no relevant passage at all.
pub fn recall_at(
    k: usize,
    ranked: &[(String, f64)],
    grades: &BTreeMap<String, i32>,
    threshold: i32,
) -> Option<f64> {
    let relevant = grades.values().filter(|&&g| g >= threshold).count();
    if relevant == 0 {
        return None;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|(id, _)| grade_of(grades, id) >= threshold)
        .count();
    Some(found as f64 / relevant as f64)
}

/// Reciprocal rank of the first passage with grade at least `threshold`,
/// zero if none is retrieved.
pub fn reciprocal_rank(
    ranked: &[(String, f64)],
    grades: &BTreeMap<String, i32>,
    threshold: i32,
) -> f64 {
    ranked
        .iter()
        .position(|(id, _)| grade_of(grades, id) >= threshold)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Average precision with the denominator taken from the qrels, so
/// unretrieved relevant passages count against the run.
pub fn average_precision(
    ranked: &[(String, f64)],
    grades: &BTreeMap<String, i32>,
    threshold: i32,
) -> f64 {
    let relevant = grades.values().filter(|&&g| g >= threshold).count();
    if relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, (id, _)) in ranked.iter().enumerate() {
        if grade_of(grades, id) >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant as f64
}

/// Full evaluation of one run against one qrels set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub tag: String,
    pub relevance_threshold: i32,
    /// Metric names in request order.
    pub metrics: Vec<String>,
    /// Mean per metric over the turns where it is defined.
    pub means: BTreeMap<String, f64>,
    /// How many turns each mean covers (recall can cover fewer).
    pub turn_counts: BTreeMap<String, usize>,
    /// Per-turn values; a turn omits recall when it has no relevant passage.
    pub per_turn: BTreeMap<String, BTreeMap<String, f64>>,
    /// Turns present in both run and qrels.
    pub evaluated_turns: usize,
    /// Turns in the run with no judgments; they do not affect means.
    pub unjudged_turns: Vec<String>,
    /// Judged turns the run never ranked.
    pub missing_turns: Vec<String>,
}

/// Scores `run` against `qrels` on the requested metrics.
pub fn evaluate_run(
    run: &RunFile,
    qrels: &QrelSet,
    metrics: &[Metric],
    threshold: i32,
) -> MetricReport {
    let mut per_turn: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut unjudged = Vec::new();
    let mut evaluated = 0usize;

    for turn in run.turn_keys() {
        let Some(grades) = qrels.grades(turn) else {
            unjudged.push(turn.clone());
            continue;
        };
        evaluated += 1;
        let ranked = run.ranking(turn).expect("key comes from the run");
        let entry = per_turn.entry(turn.clone()).or_default();
        for metric in metrics {
            let value = match metric {
                Metric::Ndcg(k) => Some(ndcg_at(*k, ranked, grades)),
                Metric::Recall(k) => recall_at(*k, ranked, grades, threshold),
                Metric::Mrr => Some(reciprocal_rank(ranked, grades, threshold)),
                Metric::Map => Some(average_precision(ranked, grades, threshold)),
            };
            if let Some(v) = value {
                entry.insert(metric.to_string(), v);
                *sums.entry(metric.to_string()).or_insert(0.0) += v;
                *counts.entry(metric.to_string()).or_insert(0) += 1;
            }
        }
    }

    let missing: Vec<String> = qrels
        .turn_keys()
        .filter(|t| run.ranking(t).is_none())
        .cloned()
        .collect();

    let mut means = BTreeMap::new();
    let mut turn_counts = BTreeMap::new();
    for metric in metrics {
        let name = metric.to_string();
        let count = counts.get(&name).copied().unwrap_or(0);
        let mean = if count == 0 {
            0.0
        } else {
            sums[&name] / count as f64
        };
        means.insert(name.clone(), mean);
        turn_counts.insert(name, count);
    }

    MetricReport {
        tag: run.tag.clone(),
        relevance_threshold: threshold,
        metrics: metrics.iter().map(Metric::to_string).collect(),
        means,
        turn_counts,
        per_turn,
        evaluated_turns: evaluated,
        unjudged_turns: unjudged,
        missing_turns: missing,
    }
}

/// Plain-text rendering in the spirit of trec_eval's aggregate output.
pub fn render_text(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24}\tall\t{}\n", "runid", report.tag));
    out.push_str(&format!(
        "{:<24}\tall\t{}\n",
        "relevance_threshold", report.relevance_threshold
    ));
    out.push_str(&format!(
        "{:<24}\tall\t{}\n",
        "turns_evaluated", report.evaluated_turns
    ));
    out.push_str(&format!(
        "{:<24}\tall\t{}\n",
        "turns_unjudged", report.unjudged_turns.len()
    ));
    out.push_str(&format!(
        "{:<24}\tall\t{}\n",
        "turns_missing_from_run",
        report.missing_turns.len()
    ));
    for name in &report.metrics {
        out.push_str(&format!("{:<24}\tall\t{:.4}\n", name, report.means[name]));
        let count = report.turn_counts[name];
        if count != report.evaluated_turns {
            out.push_str(&format!("{:<24}\tall\t{}\n", format!("{name}_turns"), count));
        }
    }
    out
}
