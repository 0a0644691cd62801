//! Per-turn selection of the best query budget.
//!
//! Given one run per budget φ, the oracle picks for every judged turn the φ
//! whose ranked list scores highest on a selection metric, breaking ties
//! toward the smallest budget. Stitching the winning lists together yields
//! an upper-bound run: its aggregate can never fall below any fixed-φ run
//! because a per-turn maximum dominates every per-turn fixed choice. The
//! module also summarizes the φ* distribution and splits evaluation reports
//! into turn groups (easy/complex by φ*, or by topic shift).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::conversation::{turn_key, Conversation};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, ndcg_at, recall_at, reciprocal_rank, Metric, MetricReport,
};
use crate::trec::{QrelSet, RunFile};

/// The winning budget for one turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiChoice {
    pub phi: u32,
    /// Selection-metric value achieved at that budget.
    pub value: f64,
}

/// Oracle choices for every judged turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSelection {
    pub metric: String,
    pub relevance_threshold: i32,
    pub choices: BTreeMap<String, PhiChoice>,
}

/// Best `(phi, value, ranking)` seen so far while scanning one turn.
type TurnBest<'a> = Option<(u32, f64, &'a [(String, f64)])>;

fn turn_value(
    metric: Metric,
    ranked: &[(String, f64)],
    grades: &BTreeMap<String, i32>,
    threshold: i32,
) -> f64 {
    match metric {
        Metric::Ndcg(k) => ndcg_at(k, ranked, grades),
        // A turn with no relevant passage scores zero for every budget, so
        // the tie rule settles it at the smallest φ.
        Metric::Recall(k) => recall_at(k, ranked, grades, threshold).unwrap_or(0.0),
        Metric::Mrr => reciprocal_rank(ranked, grades, threshold),
        Metric::Map => average_precision(ranked, grades, threshold),
    }
}

/// Picks φ*_i per turn and stitches the winning lists into one run.
///
/// Turns are considered when they are judged and present in at least one
/// run; unjudged turns are skipped. Ties go to the smallest φ.
pub fn oracle_select(
    runs_by_phi: &BTreeMap<u32, RunFile>,
    qrels: &QrelSet,
    metric: Metric,
    threshold: i32,
    tag: &str,
) -> Result<(OracleSelection, RunFile)> {
    if runs_by_phi.is_empty() {
        return Err(Error::InvalidArgument(
            "oracle selection needs at least one run".to_string(),
        ));
    }

    let mut turns: Vec<&String> = runs_by_phi
        .values()
        .flat_map(|run| run.turn_keys())
        .filter(|t| qrels.grades(t).is_some())
        .collect();
    turns.sort();
    turns.dedup();
    if turns.is_empty() {
        return Err(Error::InvalidArgument(
            "no judged turn appears in any run".to_string(),
        ));
    }

    let mut choices = BTreeMap::new();
    let mut oracle = RunFile::new(tag);
    for turn in turns {
        let grades = qrels.grades(turn).expect("turn filter keeps judged turns");
        let mut best: TurnBest = None;
        for (&phi, run) in runs_by_phi {
            let Some(ranked) = run.ranking(turn) else {
                continue;
            };
            let value = turn_value(metric, ranked, grades, threshold);
            // Strictly-greater keeps the smallest φ on ties because budgets
            // are visited in ascending order.
            if best.is_none_or(|(_, v, _)| value > v) {
                best = Some((phi, value, ranked));
            }
        }
        let (phi, value, ranked) = best.expect("turn appears in at least one run");
        choices.insert(turn.clone(), PhiChoice { phi, value });
        oracle.insert_turn(turn, ranked.to_vec())?;
    }

    Ok((
        OracleSelection {
            metric: metric.to_string(),
            relevance_threshold: threshold,
            choices,
        },
        oracle,
    ))
}

/// Summary of the φ* distribution over turns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiStats {
    pub turns: usize,
    pub mean: f64,
    pub histogram: BTreeMap<u32, usize>,
    /// Fraction of turns that needed more than one query.
    pub multi_query_fraction: f64,
}

/// Histogram and mean of the selected budgets.
pub fn phi_distribution(selection: &OracleSelection) -> PhiStats {
    let turns = selection.choices.len();
    let mut histogram: BTreeMap<u32, usize> = BTreeMap::new();
    let mut sum = 0u64;
    let mut multi = 0usize;
    for choice in selection.choices.values() {
        *histogram.entry(choice.phi).or_insert(0) += 1;
        sum += u64::from(choice.phi);
        if choice.phi > 1 {
            multi += 1;
        }
    }
    let (mean, multi_query_fraction) = if turns == 0 {
        (0.0, 0.0)
    } else {
        (sum as f64 / turns as f64, multi as f64 / turns as f64)
    };
    PhiStats {
        turns,
        mean,
        histogram,
        multi_query_fraction,
    }
}

/// Per-group aggregate of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub turns: usize,
    pub means: BTreeMap<String, f64>,
    /// Turns backing each mean; recall can cover fewer than `turns`.
    pub turn_counts: BTreeMap<String, usize>,
}

/// Splits a report's per-turn values into named groups and averages each
/// group separately. Turns without an assignment are left out; a group
/// nobody belongs to is absent from the result.
pub fn split_groups(
    report: &MetricReport,
    assignment: &BTreeMap<String, String>,
) -> BTreeMap<String, GroupStats> {
    let mut sums: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();

    for (turn, values) in &report.per_turn {
        let Some(group) = assignment.get(turn) else {
            continue;
        };
        *sizes.entry(group.clone()).or_insert(0) += 1;
        for (name, value) in values {
            *sums
                .entry(group.clone())
                .or_default()
                .entry(name.clone())
                .or_insert(0.0) += value;
            *counts
                .entry(group.clone())
                .or_default()
                .entry(name.clone())
                .or_insert(0) += 1;
        }
    }

    sizes
        .into_iter()
        .map(|(group, turns)| {
            let group_counts = counts.remove(&group).unwrap_or_default();
            let group_sums = sums.remove(&group).unwrap_or_default();
            let means = group_sums
                .into_iter()
                .map(|(name, sum)| {
                    let count = group_counts[&name];
                    (name, sum / count as f64)
                })
                .collect();
            (
                group,
                GroupStats {
                    turns,
                    means,
                    turn_counts: group_counts,
                },
            )
        })
        .collect()
}

/// Labels turns "easy" when the oracle settled on φ* = 1 and "complex"
/// otherwise.
pub fn difficulty_groups(selection: &OracleSelection) -> BTreeMap<String, String> {
    selection
        .choices
        .iter()
        .map(|(turn, choice)| {
            let label = if choice.phi == 1 { "easy" } else { "complex" };
            (turn.clone(), label.to_string())
        })
        .collect()
}

/// Labels turns by their annotated topic-shift flag.
pub fn topic_shift_groups(conversations: &[Conversation]) -> BTreeMap<String, String> {
    let mut groups = BTreeMap::new();
    for conv in conversations {
        for turn in &conv.turns {
            let label = if turn.topic_shift { "shift" } else { "no_shift" };
            groups.insert(turn_key(&conv.conv_id, turn.turn_id), label.to_string());
        }
    }
    groups
}
