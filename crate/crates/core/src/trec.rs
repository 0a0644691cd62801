//! Run files and relevance judgments in TREC interchange format.
//!
//! Run lines are `turn_key Q0 passage_id rank score tag`; qrels lines are
//! `turn_key 0 passage_id grade`. Loading validates the invariants that
//! downstream consumers assume (contiguous ranks, strictly decreasing
//! scores, one judgment per pair), and scores are written with Rust's
//! shortest round-trip float formatting, so write then load is the exact
//! identity.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::fusion::FusedList;

/// Graded relevance judgments, keyed by turn then passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        QrelSet {
            judgments: BTreeMap::new(),
        }
    }

    /// Parses a qrels file. Grades must be non-negative integers, and a
    /// `(turn, passage)` pair may only be judged once.
    pub fn load(path: &Path) -> Result<QrelSet> {
        let raw = fsio::read_to_string(path)?;
        let file = path.display().to_string();
        let mut judgments: BTreeMap<String, BTreeMap<String, i32>> = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            if fields[1] != "0" {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("second field must be \"0\", found {:?}", fields[1]),
                ));
            }
            let grade: i32 = fields[3].parse().map_err(|_| {
                Error::parse(&file, lineno, format!("invalid grade {:?}", fields[3]))
            })?;
            if grade < 0 {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("grades must be non-negative, found {grade}"),
                ));
            }
            let turn = judgments.entry(fields[0].to_string()).or_default();
            if turn.insert(fields[2].to_string(), grade).is_some() {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("duplicate judgment for {} {}", fields[0], fields[2]),
                ));
            }
        }
        if judgments.is_empty() {
            return Err(Error::parse(&file, 0, "no judgments in qrels file"));
        }
        Ok(QrelSet { judgments })
    }

    /// Writes judgments sorted by turn then passage id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (turn, grades) in &self.judgments {
            for (id, grade) in grades {
                out.push_str(&format!("{turn} 0 {id} {grade}\n"));
            }
        }
        fsio::atomic_write(path, out.as_bytes())
    }

    pub fn insert(&mut self, turn_key: &str, passage_id: &str, grade: i32) {
        self.judgments
            .entry(turn_key.to_string())
            .or_default()
            .insert(passage_id.to_string(), grade);
    }

    pub fn turn_keys(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn grades(&self, turn_key: &str) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(turn_key)
    }

    pub fn num_turns(&self) -> usize {
        self.judgments.len()
    }
}

impl Default for QrelSet {
    fn default() -> Self {
        Self::new()
    }
}

/// One system run: per turn, passages in rank order with their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub tag: String,
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        RunFile {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    /// Adds one turn's ranking. Entries must be non-empty with unique ids
    /// and strictly decreasing finite scores; the turn must be new.
    pub fn insert_turn(&mut self, turn_key: &str, entries: Vec<(String, f64)>) -> Result<()> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty ranking for turn {turn_key}"
            )));
        }
        let mut seen = HashSet::new();
        for (id, score) in &entries {
            if !score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for {turn_key} {id}"
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "turn {turn_key} ranks passage {id:?} twice"
                )));
            }
        }
        if entries.windows(2).any(|w| w[0].1 <= w[1].1) {
            return Err(Error::InvalidArgument(format!(
                "scores for turn {turn_key} are not strictly decreasing"
            )));
        }
        if self
            .rankings
            .insert(turn_key.to_string(), entries)
            .is_some()
        {
            return Err(Error::InvalidArgument(format!(
                "turn {turn_key} inserted twice"
            )));
        }
        Ok(())
    }

    pub fn turn_keys(&self) -> impl Iterator<Item = &String> {
        self.rankings.keys()
    }

    pub fn ranking(&self, turn_key: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(turn_key).map(Vec::as_slice)
    }

    pub fn num_turns(&self) -> usize {
        self.rankings.len()
    }

    /// Parses and validates a run file: six whitespace-separated columns,
    /// `Q0` literal, per-turn ranks exactly 1..n in order, strictly
    /// decreasing scores, no duplicate passages, one tag for the whole file.
    pub fn load(path: &Path) -> Result<RunFile> {
        let raw = fsio::read_to_string(path)?;
        let file = path.display().to_string();
        let mut tag: Option<String> = None;
        let mut rankings: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            if fields[1] != "Q0" {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("second field must be \"Q0\", found {:?}", fields[1]),
                ));
            }
            let rank: usize = fields[3].parse().map_err(|_| {
                Error::parse(&file, lineno, format!("invalid rank {:?}", fields[3]))
            })?;
            let score: f64 = fields[4].parse().map_err(|_| {
                Error::parse(&file, lineno, format!("invalid score {:?}", fields[4]))
            })?;
            if !score.is_finite() {
                return Err(Error::parse(&file, lineno, "non-finite score".to_string()));
            }
            match &tag {
                None => tag = Some(fields[5].to_string()),
                Some(t) if t != fields[5] => {
                    return Err(Error::parse(
                        &file,
                        lineno,
                        format!("tag changed from {t:?} to {:?}", fields[5]),
                    ));
                }
                _ => {}
            }
            let entries = rankings.entry(fields[0].to_string()).or_default();
            if rank != entries.len() + 1 {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!(
                        "rank {} for turn {} breaks the 1..n sequence (expected {})",
                        rank,
                        fields[0],
                        entries.len() + 1
                    ),
                ));
            }
            if let Some((_, prev)) = entries.last() {
                if score >= *prev {
                    return Err(Error::parse(
                        &file,
                        lineno,
                        format!("scores for turn {} are not strictly decreasing", fields[0]),
                    ));
                }
            }
            if entries.iter().any(|(id, _)| id == fields[2]) {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("turn {} ranks passage {:?} twice", fields[0], fields[2]),
                ));
            }
            entries.push((fields[2].to_string(), score));
        }
        let tag = tag.ok_or_else(|| Error::parse(&file, 0, "run file has no entries"))?;
        Ok(RunFile { tag, rankings })
    }

    /// Writes turns sorted by key, ranks assigned 1..n from list order, and
    /// scores in shortest round-trip decimal form.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (turn, entries) in &self.rankings {
            for (i, (id, score)) in entries.iter().enumerate() {
                out.push_str(&format!(
                    "{turn} Q0 {id} {} {score} {}\n",
                    i + 1,
                    self.tag
                ));
            }
        }
        fsio::atomic_write(path, out.as_bytes())
    }
}

/// Builds a run from fused per-turn lists, keeping their synthetic scores.
pub fn run_from_fused(tag: &str, fused: &[FusedList]) -> Result<RunFile> {
    let mut run = RunFile::new(tag);
    for list in fused {
        list.validate()?;
        if list.entries.is_empty() {
            continue;
        }
        run.insert_turn(
            &list.turn_key,
            list.entries
                .iter()
                .map(|e| (e.passage_id.clone(), e.score))
                .collect(),
        )?;
    }
    Ok(run)
}
