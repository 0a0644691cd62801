//! Query generation: turning one dialogue turn into search queries.
//!
//! Four generation behaviors share the same completion plumbing: rewrite the
//! question into one query, answer the question and use the answer itself as
//! the query, ask directly for up to phi queries, or first answer and then
//! ask for queries that would retrieve that answer. Model output is parsed
//! line by line with tolerant enumeration-marker stripping.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conversation::{render_context, render_ptkb, ContextStyle, Conversation};
use crate::error::{Error, Result};
use crate::fsio;
use crate::llm::{ChatMessage, CompletionKind, LlmClient, RequestMeta};
use crate::prompt::{render_prompt, TemplateName};

/// How queries are produced for a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenVariant {
    /// Rewrite the last question into one self-contained query.
    Qr,
    /// Answer the question and use the answer's first line as the query.
    Aq,
    /// Ask for up to phi search queries directly.
    Mq4cs,
    /// Answer first, then ask for queries that would retrieve the answer.
    Mq4csAns,
}

impl GenVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenVariant::Qr => "qr",
            GenVariant::Aq => "aq",
            GenVariant::Mq4cs => "mq4cs",
            GenVariant::Mq4csAns => "mq4cs_ans",
        }
    }
}

impl fmt::Display for GenVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qr" => Ok(GenVariant::Qr),
            "aq" => Ok(GenVariant::Aq),
            "mq4cs" => Ok(GenVariant::Mq4cs),
            "mq4cs_ans" => Ok(GenVariant::Mq4csAns),
            other => Err(Error::InvalidArgument(format!(
                "unknown generation variant {other:?}"
            ))),
        }
    }
}

/// Generated queries for one turn, plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub conv_id: String,
    pub turn_id: u32,
    /// The query budget the model was asked to respect.
    pub phi: u32,
    /// Between 1 and `phi` non-empty queries.
    pub queries: Vec<String>,
    /// Generation variant name, e.g. `"mq4cs"`.
    pub variant: String,
    /// The generated answer, for variants that produce one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Hash of the completion request the queries came from.
    pub prompt_hash: String,
}

/// Extracts at most `phi` queries from raw model output.
///
/// Per line: trim, strip one leading enumeration marker (`12.`, `3)`, `-`,
/// or a bullet dot), trim again, then drop the line if it is empty or starts
/// with `#` (template headers the model echoed back).
pub fn parse_query_lines(raw: &str, phi: u32) -> Vec<String> {
    let mut queries = Vec::new();
    for line in raw.split('\n') {
        let line = strip_enumeration_marker(line.trim()).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        queries.push(line.to_string());
        if queries.len() == phi as usize {
            break;
        }
    }
    queries
}

fn strip_enumeration_marker(line: &str) -> &str {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return stripped;
        }
        return line;
    }
    if let Some(stripped) = line.strip_prefix('-') {
        return stripped;
    }
    if let Some(stripped) = line.strip_prefix('•') {
        return stripped;
    }
    line
}

fn prompt_values(
    conv: &Conversation,
    turn_pos: usize,
    style: ContextStyle,
) -> (String, String, &str) {
    let ptkb = render_ptkb(&conv.ptkb);
    let ctx = render_context(&conv.context_at(turn_pos), style);
    let utterance = conv.turns[turn_pos - 1].utterance.as_str();
    (ptkb, ctx, utterance)
}

/// Asks the model to answer the turn at 1-based position `turn_pos`.
///
/// `template` selects the template identity for caching and provenance
/// ([`TemplateName::AqAnswer`] or [`TemplateName::Mq4csAnsStage1`]; both
/// render the same text). Returns the answer and its request hash. An
/// answer that is empty after trimming is an error.
pub fn generate_answer(
    client: &LlmClient,
    conv: &Conversation,
    turn_pos: usize,
    style: ContextStyle,
    template: TemplateName,
) -> Result<(String, String)> {
    let (ptkb, ctx, utterance) = prompt_values(conv, turn_pos, style);
    let turn = &conv.turns[turn_pos - 1];
    let prompt = render_prompt(
        template,
        &[("ptkb", &ptkb), ("ctx", &ctx), ("utterance", utterance)],
    )?;
    let completion = client.complete(
        template.as_str(),
        vec![ChatMessage::user(prompt)],
        RequestMeta {
            conv_id: conv.conv_id.clone(),
            turn_id: turn.turn_id,
            kind: CompletionKind::Answer,
            phi: None,
        },
    )?;
    if completion.text.trim().is_empty() {
        return Err(Error::LlmResponse(format!(
            "empty answer for conversation {:?} turn {}",
            conv.conv_id, turn.turn_id
        )));
    }
    Ok((completion.text, completion.prompt_hash))
}

/// Runs one generation variant for one turn and returns its query set.
///
/// `fewshot` swaps the direct and answer-first query prompts for their
/// example-laden versions; rewriting and answering are always zero-shot.
/// Fails if the model yields no parseable query.
pub fn generate_queries(
    client: &LlmClient,
    variant: GenVariant,
    conv: &Conversation,
    turn_pos: usize,
    phi: u32,
    style: ContextStyle,
    fewshot: bool,
) -> Result<QuerySet> {
    assert!(phi >= 1, "query budget must be at least 1");
    let (ptkb, ctx, utterance) = prompt_values(conv, turn_pos, style);
    let turn = &conv.turns[turn_pos - 1];
    let phi_str = phi.to_string();
    let queries_meta = RequestMeta {
        conv_id: conv.conv_id.clone(),
        turn_id: turn.turn_id,
        kind: CompletionKind::Queries,
        phi: Some(phi),
    };

    let (raw, answer, prompt_hash) = match variant {
        GenVariant::Qr => {
            let prompt = render_prompt(
                TemplateName::Qr,
                &[("ptkb", &ptkb), ("ctx", &ctx), ("utterance", utterance)],
            )?;
            let completion = client.complete(
                TemplateName::Qr.as_str(),
                vec![ChatMessage::user(prompt)],
                queries_meta,
            )?;
            (completion.text, None, completion.prompt_hash)
        }
        GenVariant::Aq => {
            let (answer, hash) =
                generate_answer(client, conv, turn_pos, style, TemplateName::AqAnswer)?;
            (answer.clone(), Some(answer), hash)
        }
        GenVariant::Mq4cs => {
            let template = if fewshot {
                TemplateName::Mq4csFewshot
            } else {
                TemplateName::Mq4cs
            };
            let prompt = render_prompt(
                template,
                &[
                    ("ptkb", &ptkb),
                    ("ctx", &ctx),
                    ("utterance", utterance),
                    ("phi", &phi_str),
                ],
            )?;
            let completion = client.complete(
                template.as_str(),
                vec![ChatMessage::user(prompt)],
                queries_meta,
            )?;
            (completion.text, None, completion.prompt_hash)
        }
        GenVariant::Mq4csAns => {
            let (answer, _) =
                generate_answer(client, conv, turn_pos, style, TemplateName::Mq4csAnsStage1)?;
            let completion = if fewshot {
                let template = TemplateName::Mq4csAnsFewshot;
                let prompt = render_prompt(
                    template,
                    &[
                        ("ptkb", &ptkb),
                        ("ctx", &ctx),
                        ("utterance", utterance),
                        ("phi", &phi_str),
                        ("response", &answer),
                    ],
                )?;
                client.complete(
                    template.as_str(),
                    vec![ChatMessage::user(prompt)],
                    queries_meta,
                )?
            } else {
                // Zero-shot runs as a three-message chat: the answer prompt,
                // the model's answer, then the follow-up asking for queries.
                let stage1 = render_prompt(
                    TemplateName::Mq4csAnsStage1,
                    &[("ptkb", &ptkb), ("ctx", &ctx), ("utterance", utterance)],
                )?;
                let stage2 =
                    render_prompt(TemplateName::Mq4csAnsStage2, &[("phi", &phi_str)])?;
                client.complete(
                    TemplateName::Mq4csAnsStage2.as_str(),
                    vec![
                        ChatMessage::user(stage1),
                        ChatMessage::assistant(answer.clone()),
                        ChatMessage::user(stage2),
                    ],
                    queries_meta,
                )?
            };
            (completion.text, Some(answer), completion.prompt_hash)
        }
    };

    let budget = match variant {
        GenVariant::Qr | GenVariant::Aq => 1,
        _ => phi,
    };
    let queries = parse_query_lines(&raw, budget);
    if queries.is_empty() {
        return Err(Error::LlmResponse(format!(
            "no queries parsed from completion for conversation {:?} turn {}",
            conv.conv_id, turn.turn_id
        )));
    }
    Ok(QuerySet {
        conv_id: conv.conv_id.clone(),
        turn_id: turn.turn_id,
        phi,
        queries,
        variant: variant.as_str().to_string(),
        answer,
        prompt_hash,
    })
}

/// Writes query sets as one JSON object per line.
pub fn write_query_sets(path: &Path, sets: &[QuerySet]) -> Result<()> {
    let mut out = String::new();
    for set in sets {
        out.push_str(&serde_json::to_string(set).expect("query sets serialize"));
        out.push('\n');
    }
    fsio::atomic_write(path, out.as_bytes())
}

/// Reads query sets written by [`write_query_sets`], revalidating the
/// between-1-and-phi invariant.
pub fn read_query_sets(path: &Path) -> Result<Vec<QuerySet>> {
    let raw = fsio::read_to_string(path)?;
    let file = path.display().to_string();
    let mut sets = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let set: QuerySet = serde_json::from_str(line)
            .map_err(|e| Error::parse(&file, lineno, format!("invalid JSON: {e}")))?;
        if set.queries.is_empty() || set.queries.len() > set.phi as usize {
            return Err(Error::parse(
                &file,
                lineno,
                format!(
                    "query set for {}_{} has {} queries for budget {}",
                    set.conv_id,
                    set.turn_id,
                    set.queries.len(),
                    set.phi
                ),
            ));
        }
        if set.queries.iter().any(|q| q.is_empty()) {
            return Err(Error::parse(&file, lineno, "empty query string".to_string()));
        }
        sets.push(set);
    }
    Ok(sets)
}
