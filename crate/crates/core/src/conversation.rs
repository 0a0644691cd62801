//! Conversational dataset: conversations, turns, and context rendering.
//!
//! A dataset is one JSON object per line, one line per conversation. Each
//! conversation carries the user's background statements (their personal
//! knowledge base) and an ordered list of turns. Rendering helpers turn the
//! dialogue history into the plain-text blocks the prompt templates expect.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// One dialogue turn. `response` is the canonical system answer shipped with
/// the dataset (it may be empty); `topic_shift` marks turns whose subject
/// departs from the previous turn and drives the easy/complex split in the
/// oracle analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: u32,
    pub utterance: String,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub topic_shift: bool,
}

/// One conversation: stable id, user background statements, ordered turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conv_id: String,
    #[serde(default)]
    pub ptkb: Vec<String>,
    pub turns: Vec<Turn>,
}

/// Evaluation key for one turn, used in run files and qrels.
pub fn turn_key(conv_id: &str, turn_id: u32) -> String {
    format!("{conv_id}_{turn_id}")
}

impl Conversation {
    /// Dialogue history strictly before 1-based turn `i`: `(utterance,
    /// response)` pairs for turns 1..i. Panics if `i` is not a valid turn
    /// position.
    pub fn context_at(&self, i: usize) -> Vec<(String, String)> {
        assert!(
            i >= 1 && i <= self.turns.len(),
            "turn position {i} out of range 1..={}",
            self.turns.len()
        );
        self.turns[..i - 1]
            .iter()
            .map(|t| (t.utterance.clone(), t.response.clone()))
            .collect()
    }
}

/// How much of the dialogue history goes into a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextStyle {
    /// Every previous utterance and every non-empty previous response.
    Full,
    /// Every previous utterance but only the most recent response.
    LastResponseOnly,
}

impl FromStr for ContextStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ContextStyle::Full),
            "last_response_only" => Ok(ContextStyle::LastResponseOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown context style {other:?}, expected \"full\" or \"last_response_only\""
            ))),
        }
    }
}

/// Renders history pairs as `user:` / `system:` lines joined by newlines.
///
/// A `system:` line is only emitted for a non-empty response. An empty
/// history renders as the empty string.
pub fn render_context(pairs: &[(String, String)], style: ContextStyle) -> String {
    let mut lines = Vec::new();
    match style {
        ContextStyle::Full => {
            for (utterance, response) in pairs {
                lines.push(format!("user: {utterance}"));
                if !response.is_empty() {
                    lines.push(format!("system: {response}"));
                }
            }
        }
        ContextStyle::LastResponseOnly => {
            for (utterance, _) in pairs {
                lines.push(format!("user: {utterance}"));
            }
            if let Some((_, response)) = pairs.last() {
                if !response.is_empty() {
                    lines.push(format!("system: {response}"));
                }
            }
        }
    }
    lines.join("\n")
}

/// Renders background statements inline: `1: first, 2: second`.
pub fn render_ptkb(statements: &[String]) -> String {
    statements
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}: {}", i + 1, s))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Loads and validates a conversation dataset.
pub fn load_dataset(path: &Path) -> Result<Vec<Conversation>> {
    let raw = fsio::read_to_string(path)?;
    let file = path.display().to_string();
    let mut conversations = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(line)
            .map_err(|e| Error::parse(&file, lineno, format!("invalid JSON: {e}")))?;
        validate_conversation(&conv).map_err(|msg| Error::parse(&file, lineno, msg))?;
        if !seen.insert(conv.conv_id.clone()) {
            return Err(Error::parse(
                &file,
                lineno,
                format!("duplicate conversation id {:?}", conv.conv_id),
            ));
        }
        conversations.push(conv);
    }
    if conversations.is_empty() {
        return Err(Error::parse(&file, 0, "dataset contains no conversations"));
    }
    Ok(conversations)
}

/// Writes a dataset in canonical form: one compact JSON object per line, all
/// fields present, in declaration order. Saving a loaded canonical file
/// reproduces it byte for byte.
pub fn save_dataset(path: &Path, conversations: &[Conversation]) -> Result<()> {
    let mut out = String::new();
    for conv in conversations {
        out.push_str(&serde_json::to_string(conv).expect("dataset types serialize"));
        out.push('\n');
    }
    fsio::atomic_write(path, out.as_bytes())
}

fn validate_conversation(conv: &Conversation) -> std::result::Result<(), String> {
    if conv.conv_id.is_empty() {
        return Err("empty conversation id".to_string());
    }
    if conv.conv_id.chars().any(|c| c.is_whitespace()) {
        return Err(format!(
            "conversation id {:?} contains whitespace, which run-file keys cannot carry",
            conv.conv_id
        ));
    }
    if conv.turns.is_empty() {
        return Err(format!("conversation {:?} has no turns", conv.conv_id));
    }
    for s in &conv.ptkb {
        if s.contains('\n') {
            return Err(format!(
                "conversation {:?} has a background statement with a newline",
                conv.conv_id
            ));
        }
    }
    let mut prev: Option<u32> = None;
    for turn in &conv.turns {
        if let Some(p) = prev {
            if turn.turn_id <= p {
                return Err(format!(
                    "conversation {:?}: turn ids must be strictly increasing, {} follows {p}",
                    conv.conv_id, turn.turn_id
                ));
            }
        }
        prev = Some(turn.turn_id);
        if turn.utterance.is_empty() {
            return Err(format!(
                "conversation {:?} turn {}: empty utterance",
                conv.conv_id, turn.turn_id
            ));
        }
        if turn.utterance.contains('\n') || turn.response.contains('\n') {
            return Err(format!(
                "conversation {:?} turn {}: utterances and responses must be single-line",
                conv.conv_id, turn.turn_id
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Conversation {
        Conversation {
            conv_id: "c9".to_string(),
            ptkb: vec!["lives near the coast".to_string()],
            turns: vec![
                Turn {
                    turn_id: 1,
                    utterance: "What causes tides?".to_string(),
                    response: "Mostly the Moon's gravity.".to_string(),
                    topic_shift: false,
                },
                Turn {
                    turn_id: 2,
                    utterance: "How strong is that pull?".to_string(),
                    response: String::new(),
                    topic_shift: false,
                },
                Turn {
                    turn_id: 3,
                    utterance: "And what about waves?".to_string(),
                    response: "Wind, mostly.".to_string(),
                    topic_shift: true,
                },
            ],
        }
    }

    #[test]
    fn turn_key_concatenates_with_underscore() {
        assert_eq!(turn_key("c9", 3), "c9_3");
    }

    #[test]
    fn context_at_returns_strictly_earlier_turns() {
        let conv = sample();
        assert!(conv.context_at(1).is_empty());
        let ctx = conv.context_at(3);
        assert_eq!(ctx.len(), 2);
        assert_eq!(ctx[0].0, "What causes tides?");
        assert_eq!(ctx[1].1, "");
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn context_at_rejects_position_zero() {
        sample().context_at(0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn context_at_rejects_position_past_the_end() {
        sample().context_at(4);
    }

    #[test]
    fn full_context_skips_empty_responses() {
        let conv = sample();
        let text = render_context(&conv.context_at(3), ContextStyle::Full);
        assert_eq!(
            text,
            "user: What causes tides?\n\
             system: Mostly the Moon's gravity.\n\
             user: How strong is that pull?"
        );
    }

    #[test]
    fn last_response_only_keeps_all_utterances_one_response() {
        let pairs = vec![
            ("first".to_string(), "answer one".to_string()),
            ("second".to_string(), "answer two".to_string()),
        ];
        let text = render_context(&pairs, ContextStyle::LastResponseOnly);
        assert_eq!(text, "user: first\nuser: second\nsystem: answer two");
    }

    #[test]
    fn empty_context_renders_empty() {
        assert_eq!(render_context(&[], ContextStyle::Full), "");
        assert_eq!(render_context(&[], ContextStyle::LastResponseOnly), "");
    }

    #[test]
    fn ptkb_renders_numbered_inline() {
        let stmts = vec!["a".to_string(), "b".to_string()];
        assert_eq!(render_ptkb(&stmts), "1: a, 2: b");
        assert_eq!(render_ptkb(&[]), "");
    }

    #[test]
    fn context_style_parses() {
        assert_eq!(ContextStyle::from_str("full").unwrap(), ContextStyle::Full);
        assert_eq!(
            ContextStyle::from_str("last_response_only").unwrap(),
            ContextStyle::LastResponseOnly
        );
        assert!(ContextStyle::from_str("everything").is_err());
    }

    #[test]
    fn save_then_load_is_identity_and_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let data = vec![sample()];
        save_dataset(&path, &data).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, data);
        let first = std::fs::read(&path).unwrap();
        save_dataset(&path, &loaded).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second, "saving a loaded dataset must be byte-stable");
    }

    #[test]
    fn load_rejects_bad_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");

        let mut dup = sample();
        dup.ptkb.clear();
        save_dataset(&path, &[sample(), dup]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate conversation id"));

        let mut bad = sample();
        bad.turns[2].turn_id = 2;
        save_dataset(&path, &[bad]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));

        let mut bad = sample();
        bad.turns[0].utterance.clear();
        save_dataset(&path, &[bad]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("empty utterance"));

        let mut bad = sample();
        bad.conv_id = "c 9".to_string();
        save_dataset(&path, &[bad]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("whitespace"));

        std::fs::write(&path, "\n").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("no conversations"));
    }

    fn line_text() -> impl Strategy<Value = String> {
        "[a-z ]{1,12}"
    }

    proptest! {
        /// Every rendered line is attributed to a speaker, every utterance
        /// appears, and system lines match non-empty responses.
        #[test]
        fn rendered_context_line_structure(
            pairs in prop::collection::vec((line_text(), prop::option::of(line_text())), 0..6)
        ) {
            let pairs: Vec<(String, String)> = pairs
                .into_iter()
                .map(|(u, r)| (u, r.unwrap_or_default()))
                .collect();

            let full = render_context(&pairs, ContextStyle::Full);
            let lines: Vec<&str> = if full.is_empty() { vec![] } else { full.lines().collect() };
            prop_assert!(lines
                .iter()
                .all(|l| l.starts_with("user: ") || l.starts_with("system: ")));
            let users = lines.iter().filter(|l| l.starts_with("user: ")).count();
            let systems = lines.iter().filter(|l| l.starts_with("system: ")).count();
            prop_assert_eq!(users, pairs.len());
            prop_assert_eq!(systems, pairs.iter().filter(|(_, r)| !r.is_empty()).count());

            let brief = render_context(&pairs, ContextStyle::LastResponseOnly);
            let lines: Vec<&str> = if brief.is_empty() { vec![] } else { brief.lines().collect() };
            let systems = lines.iter().filter(|l| l.starts_with("system: ")).count();
            prop_assert!(systems <= 1);
            if systems == 1 {
                prop_assert!(lines.last().unwrap().starts_with("system: "));
            }
        }
    }
}
