//! Inverted index and BM25 first-stage retrieval.
//!
//! Scoring uses the Lucene flavor of BM25: the (k1+1) factor is dropped from
//! the numerator (it does not change ranking) and idf is
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, which is never negative. Query
//! terms are deduplicated, so repeating a term does not raise scores.
//!
//! `retrieve` and `bm25_score` share one term-weight helper and walk query
//! terms in the same first-occurrence order, so a retrieved score is
//! bit-identical to scoring that document directly.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::analyze::{tokenize, ANALYZER_NAME};
use crate::corpus::PassageCollection;
use crate::error::{Error, Result};
use crate::fsio;

const INDEX_MAGIC: &[u8; 4] = b"MQ4I";
const INDEX_FORMAT_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.bin";
const MANIFEST_FILE: &str = "manifest.txt";

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// One ranked result list: passage ids with scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// The query text this list was produced for.
    pub query_label: String,
    /// `(passage id, score)` pairs in rank order.
    pub entries: Vec<(String, f64)>,
}

/// In-memory inverted index over a passage collection.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avg_doc_length: f64,
    corpus_sha256: String,
}

impl InvertedIndex {
    /// Tokenizes every passage and builds postings. Documents keep their
    /// collection order; postings lists are sorted by document number.
    pub fn build(collection: &PassageCollection, params: Bm25Params) -> InvertedIndex {
        assert!(
            collection.len() <= u32::MAX as usize,
            "collection too large for u32 document numbers"
        );
        let mut doc_ids = Vec::with_capacity(collection.len());
        let mut doc_lengths = Vec::with_capacity(collection.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (doc, passage) in collection.passages().iter().enumerate() {
            let tokens = tokenize(&passage.text);
            doc_ids.push(passage.id.clone());
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &tokens {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        InvertedIndex {
            params,
            doc_ids,
            doc_lengths,
            postings,
            avg_doc_length,
            corpus_sha256: collection.sha256().to_string(),
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Hash of the collection this index was built from.
    pub fn corpus_sha256(&self) -> &str {
        &self.corpus_sha256
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Contribution of one matched term occurrence, shared by both scoring
    /// paths so their floating-point results agree exactly.
    fn term_weight(&self, df: usize, tf: u32, doc: u32) -> f64 {
        let tf = tf as f64;
        let dl = self.doc_lengths[doc as usize] as f64;
        let norm =
            self.params.k1 * (1.0 - self.params.b + self.params.b * dl / self.avg_doc_length);
        self.idf(df) * tf / (tf + norm)
    }

    /// BM25 score of `query` against document number `doc`.
    ///
    /// Panics if `doc` is out of range. Documents sharing no term with the
    /// query score exactly zero.
    pub fn bm25_score(&self, query: &str, doc: u32) -> f64 {
        assert!(
            (doc as usize) < self.num_docs(),
            "document number {doc} out of range"
        );
        let tokens = tokenize(query);
        let mut score = 0.0;
        for term in unique_in_order(&tokens) {
            if let Some(list) = self.postings.get(term) {
                if let Ok(pos) = list.binary_search_by_key(&doc, |&(d, _)| d) {
                    score += self.term_weight(list.len(), list[pos].1, doc);
                }
            }
        }
        score
    }

    /// Top `depth` documents for `query`, best first.
    ///
    /// Only documents matching at least one query term are returned. Ties in
    /// score are broken by passage id ascending, so results are a total
    /// order independent of collection order.
    pub fn retrieve(&self, query: &str, depth: usize) -> RankedList {
        let tokens = tokenize(query);
        let mut acc = vec![0.0f64; self.num_docs()];
        for term in unique_in_order(&tokens) {
            if let Some(list) = self.postings.get(term) {
                let df = list.len();
                for &(doc, tf) in list {
                    acc[doc as usize] += self.term_weight(df, tf, doc);
                }
            }
        }
        let mut hits: Vec<(u32, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (d as u32, s))
            .collect();
        hits.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| self.doc_id(a.0).cmp(self.doc_id(b.0)))
        });
        hits.truncate(depth);
        RankedList {
            query_label: query.to_string(),
            entries: hits
                .into_iter()
                .map(|(d, s)| (self.doc_id(d).to_string(), s))
                .collect(),
        }
    }

    /// Writes `index.bin` and a human-readable `manifest.txt` into `dir`.
    /// The encoding is fully determined by the index contents, so rebuilding
    /// from the same corpus yields byte-identical files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.write_u32::<LittleEndian>(INDEX_FORMAT_VERSION).unwrap();
        buf.write_f64::<LittleEndian>(self.params.k1).unwrap();
        buf.write_f64::<LittleEndian>(self.params.b).unwrap();
        buf.write_u32::<LittleEndian>(self.num_docs() as u32).unwrap();
        buf.write_f64::<LittleEndian>(self.avg_doc_length).unwrap();
        write_str(&mut buf, &self.corpus_sha256);
        for (id, &len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut buf, id);
            buf.write_u32::<LittleEndian>(len).unwrap();
        }
        buf.write_u32::<LittleEndian>(self.postings.len() as u32)
            .unwrap();
        for (term, list) in &self.postings {
            write_str(&mut buf, term);
            buf.write_u32::<LittleEndian>(list.len() as u32).unwrap();
            for &(doc, tf) in list {
                buf.write_u32::<LittleEndian>(doc).unwrap();
                buf.write_u32::<LittleEndian>(tf).unwrap();
            }
        }
        fsio::atomic_write(&dir.join(INDEX_FILE), &buf)?;

        let manifest = format!(
            "format_version: {INDEX_FORMAT_VERSION}\n\
             analyzer: {ANALYZER_NAME}\n\
             k1: {}\n\
             b: {}\n\
             num_docs: {}\n\
             avg_doc_length: {}\n\
             corpus_sha256: {}\n",
            self.params.k1,
            self.params.b,
            self.num_docs(),
            self.avg_doc_length,
            self.corpus_sha256
        );
        fsio::atomic_write(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    /// Loads an index saved by [`InvertedIndex::save`], verifying the magic
    /// number, format version, and that the manifest agrees with the binary
    /// data (in particular the analyzer name).
    pub fn load(dir: &Path) -> Result<InvertedIndex> {
        let bin_path = dir.join(INDEX_FILE);
        fsio::require_exists("index", &bin_path)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fsio::require_exists("index manifest", &manifest_path)?;

        let data = fsio::read_bytes(&bin_path)?;
        let fail = |msg: String| Error::IndexFormat {
            path: bin_path.clone(),
            msg,
        };
        let mut cur = std::io::Cursor::new(data.as_slice());
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| fail("file truncated".to_string()))?;
        if &magic != INDEX_MAGIC {
            return Err(fail("bad magic number".to_string()));
        }
        let version = read_u32(&mut cur, &fail)?;
        if version != INDEX_FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported format version {version}, expected {INDEX_FORMAT_VERSION}"
            )));
        }
        let k1 = read_f64(&mut cur, &fail)?;
        let b = read_f64(&mut cur, &fail)?;
        let num_docs = read_u32(&mut cur, &fail)? as usize;
        if num_docs == 0 {
            return Err(fail("index contains no documents".to_string()));
        }
        let avg_doc_length = read_f64(&mut cur, &fail)?;
        let corpus_sha256 = read_string(&mut cur, &fail)?;
        let mut doc_ids = Vec::with_capacity(num_docs);
        let mut doc_lengths = Vec::with_capacity(num_docs);
        for _ in 0..num_docs {
            doc_ids.push(read_string(&mut cur, &fail)?);
            doc_lengths.push(read_u32(&mut cur, &fail)?);
        }
        let num_terms = read_u32(&mut cur, &fail)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..num_terms {
            let term = read_string(&mut cur, &fail)?;
            let count = read_u32(&mut cur, &fail)? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let doc = read_u32(&mut cur, &fail)?;
                let tf = read_u32(&mut cur, &fail)?;
                if doc as usize >= num_docs {
                    return Err(fail(format!(
                        "posting for {term:?} references document {doc} of {num_docs}"
                    )));
                }
                list.push((doc, tf));
            }
            postings.insert(term, list);
        }
        if cur.position() as usize != data.len() {
            return Err(fail("trailing bytes after index data".to_string()));
        }

        let index = InvertedIndex {
            params: Bm25Params { k1, b },
            doc_ids,
            doc_lengths,
            postings,
            avg_doc_length,
            corpus_sha256,
        };
        index.check_manifest(&manifest_path)?;
        Ok(index)
    }

    fn check_manifest(&self, path: &Path) -> Result<()> {
        let text = fsio::read_to_string(path)?;
        let fail = |msg: String| Error::IndexFormat {
            path: path.to_path_buf(),
            msg,
        };
        let mut fields = BTreeMap::new();
        for line in text.lines() {
            if let Some((key, value)) = line.split_once(": ") {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| fail(format!("manifest is missing the {key:?} field")))
        };
        if get("format_version")? != INDEX_FORMAT_VERSION.to_string() {
            return Err(fail("manifest format_version disagrees with index".to_string()));
        }
        let analyzer = get("analyzer")?;
        if analyzer != ANALYZER_NAME {
            return Err(fail(format!(
                "index was built with analyzer {analyzer:?}, this build uses {ANALYZER_NAME:?}"
            )));
        }
        if get("num_docs")? != self.num_docs().to_string() {
            return Err(fail("manifest num_docs disagrees with index".to_string()));
        }
        if get("corpus_sha256")? != self.corpus_sha256 {
            return Err(fail("manifest corpus_sha256 disagrees with index".to_string()));
        }
        if get("k1")? != self.params.k1.to_string() || get("b")? != self.params.b.to_string() {
            return Err(fail("manifest BM25 parameters disagree with index".to_string()));
        }
        Ok(())
    }
}

/// Query terms in first-occurrence order with duplicates removed.
fn unique_in_order(tokens: &[String]) -> Vec<&String> {
    let mut seen = HashSet::new();
    tokens.iter().filter(|t| seen.insert(t.as_str())).collect()
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>, fail: &dyn Fn(String) -> Error) -> Result<u32> {
    cur.read_u32::<LittleEndian>()
        .map_err(|_| fail("file truncated".to_string()))
}

fn read_f64(cur: &mut std::io::Cursor<&[u8]>, fail: &dyn Fn(String) -> Error) -> Result<f64> {
    cur.read_f64::<LittleEndian>()
        .map_err(|_| fail("file truncated".to_string()))
}

fn read_string(cur: &mut std::io::Cursor<&[u8]>, fail: &dyn Fn(String) -> Error) -> Result<String> {
    let len = read_u32(cur, fail)? as usize;
    let mut bytes = vec![0u8; len];
    cur.read_exact(&mut bytes)
        .map_err(|_| fail("file truncated".to_string()))?;
    String::from_utf8(bytes).map_err(|_| fail("string field is not UTF-8".to_string()))
}
