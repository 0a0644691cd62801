//! Chat-model access: transports, response cache, and the client façade.
//!
//! A transport turns one chat request into one completion string. The HTTP
//! transport speaks the common `messages`/`choices` JSON shape; the mock
//! transport replays a transcript file keyed by request metadata, which
//! keeps experiment fixtures deterministic no matter how prompts are
//! worded. The client adds an optional on-disk cache keyed by a hash of
//! everything that influences the completion.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::fsio;

/// Decoding parameters forwarded to the model and folded into cache keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            top_k: None,
        }
    }
}

/// What a request is asking the model for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionKind {
    Answer,
    Queries,
}

/// Which turn a request belongs to and what it asks for. The mock transport
/// keys its transcript on this, so fixtures survive prompt rewording.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestMeta {
    pub conv_id: String,
    pub turn_id: u32,
    pub kind: CompletionKind,
    /// Query budget for `Queries` requests, `None` for answers.
    pub phi: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".to_string(),
            content: content.into(),
        }
    }
}

/// One complete request as a transport sees it.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub sampling: SamplingParams,
    pub messages: Vec<ChatMessage>,
    pub meta: RequestMeta,
}

/// Anything that can turn a chat request into a completion.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Serialize)]
struct ApiRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: String,
}

/// Blocking HTTP transport for OpenAI-style chat endpoints.
///
/// Transport failures, HTTP 5xx, and HTTP 429 are retried up to
/// `max_retries` extra attempts with a short linear backoff; other client
/// errors fail immediately.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
}

impl HttpTransport {
    /// `api_key_env` names an environment variable; if it is set, its value
    /// is sent as a bearer token.
    pub fn new(
        endpoint: impl Into<String>,
        api_key_env: &str,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(format!("building http client: {e}")))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.into(),
            api_key: std::env::var(api_key_env).ok(),
            max_retries,
        })
    }

    fn send_once(&self, request: &ChatRequest) -> std::result::Result<String, (String, bool)> {
        let body = ApiRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.sampling.temperature,
            top_p: request.sampling.top_p,
            top_k: request.sampling.top_k,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| (format!("request failed: {e}"), true))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err((format!("server returned {status}"), true));
        }
        if !status.is_success() {
            return Err((format!("server returned {status}"), false));
        }
        let parsed: ApiResponse = response
            .json()
            .map_err(|e| (format!("unparseable response body: {e}"), false))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ("response contained no choices".to_string(), false))
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            match self.send_once(request) {
                Ok(text) => return Ok(text),
                Err((msg, retryable)) => {
                    if !retryable {
                        return Err(Error::Transport(msg));
                    }
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "giving up after {} attempts: {last}",
            self.max_retries + 1
        )))
    }
}

/// One replayed completion in a transcript file.
#[derive(Debug, Serialize, Deserialize)]
struct TranscriptRow {
    conv_id: String,
    turn_id: u32,
    kind: CompletionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<u32>,
    text: String,
}

type MockKey = (String, u32, CompletionKind, Option<u32>);

/// Deterministic transport that replays canned completions keyed by
/// `(conversation, turn, kind, phi)` and counts how often it is called.
#[derive(Debug)]
pub struct MockTransport {
    responses: HashMap<MockKey, String>,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new(responses: HashMap<MockKey, String>) -> Self {
        MockTransport {
            responses,
            calls: AtomicUsize::new(0),
        }
    }

    /// Loads a JSONL transcript. Duplicate keys are rejected so a fixture
    /// cannot silently shadow itself.
    pub fn from_transcript(path: &Path) -> Result<Self> {
        let raw = fsio::read_to_string(path)?;
        let file = path.display().to_string();
        let mut responses = HashMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let row: TranscriptRow = serde_json::from_str(line)
                .map_err(|e| Error::parse(&file, lineno, format!("invalid JSON: {e}")))?;
            let key = (row.conv_id, row.turn_id, row.kind, row.phi);
            if responses.insert(key.clone(), row.text).is_some() {
                return Err(Error::parse(
                    &file,
                    lineno,
                    format!("duplicate transcript entry for {key:?}"),
                ));
            }
        }
        Ok(MockTransport::new(responses))
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for MockTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let meta = &request.meta;
        let key = (
            meta.conv_id.clone(),
            meta.turn_id,
            meta.kind,
            meta.phi,
        );
        self.responses.get(&key).cloned().ok_or_else(|| {
            Error::Transport(format!(
                "no transcript entry for conversation {:?} turn {} {:?} phi {:?}",
                meta.conv_id, meta.turn_id, meta.kind, meta.phi
            ))
        })
    }
}

/// File-per-entry completion cache. Writes go through a temp file and
/// rename, so a crash never leaves a torn entry behind.
pub struct PromptCache {
    dir: PathBuf,
}

impl PromptCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PromptCache { dir: dir.into() }
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.entry_path(key)).ok()
    }

    pub fn put(&self, key: &str, text: &str) -> Result<()> {
        fsio::atomic_write(&self.entry_path(key), text.as_bytes())
    }
}

/// Hash of everything that determines a completion: template identity,
/// message roles and contents, model name, and sampling parameters. Used as
/// the cache key and recorded in artifacts as provenance.
pub fn request_hash(template: &str, request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    let mut push = |part: &str| {
        hasher.update(part.as_bytes());
        hasher.update([0x1e]);
    };
    push(template);
    push(&request.model);
    push(&request.sampling.temperature.to_string());
    push(&request.sampling.top_p.to_string());
    let top_k = match request.sampling.top_k {
        Some(k) => k.to_string(),
        None => "none".to_string(),
    };
    push(&top_k);
    for message in &request.messages {
        push(&format!("{}\x1f{}", message.role, message.content));
    }
    hex(&hasher.finalize())
}

/// The completion text plus the hash identifying the exact request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_hash: String,
}

/// Transport plus cache plus fixed model and sampling settings.
pub struct LlmClient {
    transport: Arc<dyn ChatTransport>,
    cache: Option<PromptCache>,
    pub model: String,
    pub sampling: SamplingParams,
}

impl LlmClient {
    pub fn new(
        transport: Arc<dyn ChatTransport>,
        cache: Option<PromptCache>,
        model: impl Into<String>,
        sampling: SamplingParams,
    ) -> Self {
        LlmClient {
            transport,
            cache,
            model: model.into(),
            sampling,
        }
    }

    /// Completes `messages`, serving from the cache when possible.
    /// `template` names the prompt template for provenance and cache
    /// separation.
    pub fn complete(
        &self,
        template: &str,
        messages: Vec<ChatMessage>,
        meta: RequestMeta,
    ) -> Result<Completion> {
        let request = ChatRequest {
            model: self.model.clone(),
            sampling: self.sampling,
            messages,
            meta,
        };
        let prompt_hash = request_hash(template, &request);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&prompt_hash) {
                return Ok(Completion { text, prompt_hash });
            }
        }
        let text = self.transport.complete(&request)?;
        if let Some(cache) = &self.cache {
            cache.put(&prompt_hash, &text)?;
        }
        Ok(Completion { text, prompt_hash })
    }
}
