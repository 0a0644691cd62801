//! Passage collection ingestion.
//!
//! A collection is an ordered list of `(id, text)` passages loaded from a
//! JSONL or TSV file. The loader validates ids up front (non-empty, unique)
//! and computes a content hash that downstream artifacts embed, so an index
//! built from one corpus can refuse to serve a different one.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio;

/// One retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// On-disk layout of the corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line with `id` and `contents` fields; extra
    /// fields are ignored.
    Jsonl,
    /// One `id<TAB>text` record per line; the text may contain further tabs.
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::InvalidArgument(format!(
                "unknown corpus format {other:?}, expected \"jsonl\" or \"tsv\""
            ))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tsv => "tsv",
        })
    }
}

/// An ingested corpus: passages in file order plus an id lookup table and a
/// hash of the full content.
#[derive(Debug, Clone)]
pub struct PassageCollection {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    sha256: String,
}

impl PassageCollection {
    /// Builds a collection from in-memory passages, enforcing the same
    /// invariants as [`ingest_collection`].
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut by_id = HashMap::with_capacity(passages.len());
        for (pos, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "passage at position {pos} has an empty id"
                )));
            }
            if p.id.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidArgument(format!(
                    "passage id {:?} contains whitespace, which run-file columns cannot carry",
                    p.id
                )));
            }
            if by_id.insert(p.id.clone(), pos).is_some() {
                return Err(Error::DuplicatePassage(p.id.clone()));
            }
        }
        let sha256 = content_hash(&passages);
        Ok(PassageCollection {
            passages,
            by_id,
            sha256,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Passages in file order.
    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    /// Hex SHA-256 over ids and texts in file order.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }
}

fn content_hash(passages: &[Passage]) -> String {
    let mut hasher = Sha256::new();
    for p in passages {
        hasher.update(p.id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(p.text.as_bytes());
        hasher.update([0x1e]);
    }
    hex(&hasher.finalize())
}

/// Lowercase hex encoding of a digest.
pub fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Deserialize)]
struct RawPassage {
    id: String,
    contents: String,
}

/// Loads and validates a passage file.
///
/// Blank lines are skipped. Any malformed line fails the whole ingest with
/// the file name and 1-based line number; so do duplicate or empty ids. An
/// input with no passages at all is an error.
pub fn ingest_collection(path: &Path, format: CorpusFormat) -> Result<PassageCollection> {
    let raw = fsio::read_to_string(path)?;
    let file = path.display().to_string();
    let mut passages = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let passage = match format {
            CorpusFormat::Jsonl => {
                let rp: RawPassage = serde_json::from_str(line)
                    .map_err(|e| Error::parse(&file, lineno, format!("invalid JSON: {e}")))?;
                Passage {
                    id: rp.id,
                    text: rp.contents,
                }
            }
            CorpusFormat::Tsv => {
                let (id, text) = line.split_once('\t').ok_or_else(|| {
                    Error::parse(&file, lineno, "expected id<TAB>text".to_string())
                })?;
                Passage {
                    id: id.to_string(),
                    text: text.to_string(),
                }
            }
        };
        if passage.id.is_empty() {
            return Err(Error::parse(&file, lineno, "empty passage id".to_string()));
        }
        passages.push(passage);
    }
    PassageCollection::new(passages)
}
