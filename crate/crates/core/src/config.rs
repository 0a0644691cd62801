//! Experiment configuration: one TOML file plus a handful of CLI overrides.
//!
//! Every command reads the same file, so a whole experiment is reproducible
//! from a single artifact. Relative paths are resolved against the config
//! file's directory, which lets a fixture directory carry its own config.
//! Unknown keys are rejected rather than ignored; a typo in a tuning knob
//! should fail loudly, not silently run the defaults. The `qr` and `aq`
//! variants issue exactly one query, so loading normalizes their budget to
//! φ = 1 no matter what the file or flags say.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conversation::ContextStyle;
use crate::corpus::{hex, CorpusFormat};
use crate::error::{Error, Result};
use crate::fsio;
use crate::index::Bm25Params;
use crate::llm::{HttpTransport, LlmClient, MockTransport, PromptCache, SamplingParams};
use crate::metrics::Metric;
use crate::pipeline::{PipelineConfig, Variant};
use crate::rerank::{HttpReranker, Reranker, RerankerKind};

fn default_workers() -> usize {
    4
}
fn default_corpus_format() -> String {
    "jsonl".to_string()
}
fn default_variant() -> String {
    "mq4cs".to_string()
}
fn default_phi() -> u32 {
    3
}
fn default_phi_values() -> Vec<u32> {
    vec![1, 2, 3, 4, 5]
}
fn default_depth() -> usize {
    1000
}
fn default_k1() -> f64 {
    0.9
}
fn default_b() -> f64 {
    0.4
}
fn default_reranker_kind() -> String {
    "passthrough".to_string()
}
fn default_max_text_length() -> usize {
    512
}
fn default_batch_size() -> usize {
    32
}
fn default_reranker_timeout() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_llm_mode() -> String {
    "http".to_string()
}
fn default_api_key_env() -> String {
    "LLM_API_KEY".to_string()
}
fn default_model() -> String {
    "gpt-4".to_string()
}
fn default_temperature() -> f64 {
    0.0
}
fn default_top_p() -> f64 {
    1.0
}
fn default_context_style() -> String {
    "full".to_string()
}
fn default_true() -> bool {
    true
}
fn default_llm_timeout() -> u64 {
    60
}
fn default_metrics() -> Vec<String> {
    vec![
        "ndcg@3".to_string(),
        "recall@100".to_string(),
        "mrr".to_string(),
        "map".to_string(),
    ]
}
fn default_threshold() -> i32 {
    1
}
fn default_selection_metric() -> String {
    "ndcg@3".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: PathBuf,
    #[serde(default = "default_corpus_format")]
    pub corpus_format: String,
    pub dataset: PathBuf,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
    pub index_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_phi")]
    pub phi: u32,
    /// Budgets covered by `sweep` and `oracle`.
    #[serde(default = "default_phi_values")]
    pub phi_values: Vec<u32>,
    #[serde(default = "default_depth")]
    pub first_stage_depth: usize,
    #[serde(default = "default_depth")]
    pub fusion_limit: usize,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            variant: default_variant(),
            phi: default_phi(),
            phi_values: default_phi_values(),
            first_stage_depth: default_depth(),
            fusion_limit: default_depth(),
            k1: default_k1(),
            b: default_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerSection {
    #[serde(default = "default_reranker_kind")]
    pub kind: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_max_text_length")]
    pub max_text_length: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_reranker_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl Default for RerankerSection {
    fn default() -> Self {
        RerankerSection {
            kind: default_reranker_kind(),
            endpoint: None,
            max_text_length: default_max_text_length(),
            batch_size: default_batch_size(),
            timeout_secs: default_reranker_timeout(),
            max_retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    /// `"http"` for a live chat endpoint, `"mock"` for a transcript replay.
    #[serde(default = "default_llm_mode")]
    pub mode: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    /// Mock-mode completion transcript (JSONL).
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub fewshot: bool,
    #[serde(default = "default_context_style")]
    pub context_style: String,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Defaults to `<output_dir>/prompt_cache` when caching is on.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_llm_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            mode: default_llm_mode(),
            endpoint: None,
            api_key_env: default_api_key_env(),
            model: default_model(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            top_k: None,
            transcript: None,
            fewshot: false,
            context_style: default_context_style(),
            cache: true,
            cache_dir: None,
            timeout_secs: default_llm_timeout(),
            max_retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    /// Grades at or above this count as relevant for binary metrics.
    #[serde(default = "default_threshold")]
    pub relevance_threshold: i32,
    /// Metric the oracle maximizes per turn.
    #[serde(default = "default_selection_metric")]
    pub selection_metric: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            metrics: default_metrics(),
            relevance_threshold: default_threshold(),
            selection_metric: default_selection_metric(),
        }
    }
}

/// The whole experiment, straight from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: PathsSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub reranker: RerankerSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Command-line knobs that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub phi: Option<u32>,
    pub variant: Option<String>,
    pub metric: Option<String>,
    pub workers: Option<usize>,
    pub no_cache: bool,
}

/// Reads, overrides, resolves, normalizes, and validates a config file.
pub fn load_config(path: &Path, overrides: &CliOverrides) -> Result<ExperimentConfig> {
    let raw = fsio::read_to_string(path)?;
    let mut config: ExperimentConfig = toml::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;

    if let Some(phi) = overrides.phi {
        config.pipeline.phi = phi;
    }
    if let Some(variant) = &overrides.variant {
        config.pipeline.variant = variant.clone();
    }
    if let Some(metric) = &overrides.metric {
        config.eval.selection_metric = metric.clone();
        if !config.eval.metrics.contains(metric) {
            config.eval.metrics.push(metric.clone());
        }
    }
    if let Some(workers) = overrides.workers {
        config.workers = workers;
    }
    if overrides.no_cache {
        config.llm.cache = false;
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.resolve_paths(base);
    config.normalize()?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Rewrites every relative path against `base` (absolute paths stay).
    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.corpus);
        resolve(&mut self.paths.dataset);
        if let Some(qrels) = &mut self.paths.qrels {
            resolve(qrels);
        }
        resolve(&mut self.paths.index_dir);
        resolve(&mut self.paths.output_dir);
        if let Some(transcript) = &mut self.llm.transcript {
            resolve(transcript);
        }
        if let Some(cache_dir) = &mut self.llm.cache_dir {
            resolve(cache_dir);
        }
    }

    /// Applies the variant consistency rules that are normalization rather
    /// than errors: single-query variants run at φ = 1 only.
    pub fn normalize(&mut self) -> Result<()> {
        let variant = self.variant()?;
        if variant.forces_single_query() {
            self.pipeline.phi = 1;
            self.pipeline.phi_values = vec![1];
        }
        self.pipeline.phi_values.sort_unstable();
        self.pipeline.phi_values.dedup();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".to_string()));
        }
        self.corpus_format()?;
        let variant = self.variant()?;
        PipelineConfig {
            variant,
            phi: self.pipeline.phi,
            first_stage_depth: self.pipeline.first_stage_depth,
            fusion_limit: self.pipeline.fusion_limit,
        }
        .validate()?;
        if self.pipeline.phi_values.is_empty() {
            return Err(Error::Config("phi_values must not be empty".to_string()));
        }
        for &phi in &self.pipeline.phi_values {
            if phi == 0 || phi > 5 {
                return Err(Error::Config(format!(
                    "phi value {phi} outside the supported range 1..=5"
                )));
            }
        }
        let k1_valid = self.pipeline.k1.is_finite() && self.pipeline.k1 > 0.0;
        if !k1_valid || !(0.0..=1.0).contains(&self.pipeline.b) {
            return Err(Error::Config(format!(
                "bm25 parameters out of range: k1={} b={}",
                self.pipeline.k1, self.pipeline.b
            )));
        }

        let kind = self.reranker_kind()?;
        if kind == RerankerKind::Http
            && self.reranker.endpoint.as_deref().unwrap_or("").is_empty()
        {
            return Err(Error::Config(
                "reranker.kind = \"http\" requires reranker.endpoint".to_string(),
            ));
        }
        if self.reranker.max_text_length == 0 || self.reranker.batch_size == 0 {
            return Err(Error::Config(
                "reranker max_text_length and batch_size must be at least 1".to_string(),
            ));
        }

        match self.llm.mode.as_str() {
            "http" => {
                if self.llm.endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err(Error::Config(
                        "llm.mode = \"http\" requires llm.endpoint".to_string(),
                    ));
                }
            }
            "mock" => {
                if self.llm.transcript.is_none() {
                    return Err(Error::Config(
                        "llm.mode = \"mock\" requires llm.transcript".to_string(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown llm.mode {other:?}, expected \"http\" or \"mock\""
                )));
            }
        }
        self.context_style()?;

        if self.eval.metrics.is_empty() {
            return Err(Error::Config("eval.metrics must not be empty".to_string()));
        }
        self.metrics()?;
        self.selection_metric()?;
        if self.eval.relevance_threshold < 0 {
            return Err(Error::Config(
                "relevance_threshold must be non-negative".to_string(),
            ));
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_str(&self.pipeline.variant)
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        CorpusFormat::from_str(&self.paths.corpus_format)
    }

    pub fn context_style(&self) -> Result<ContextStyle> {
        ContextStyle::from_str(&self.llm.context_style)
    }

    pub fn metrics(&self) -> Result<Vec<Metric>> {
        self.eval.metrics.iter().map(|m| Metric::from_str(m)).collect()
    }

    pub fn selection_metric(&self) -> Result<Metric> {
        Metric::from_str(&self.eval.selection_metric)
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.pipeline.k1,
            b: self.pipeline.b,
        }
    }

    /// Pipeline settings for one specific budget.
    pub fn pipeline_config(&self, phi: u32) -> Result<PipelineConfig> {
        let config = PipelineConfig {
            variant: self.variant()?,
            phi,
            first_stage_depth: self.pipeline.first_stage_depth,
            fusion_limit: self.pipeline.fusion_limit,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn reranker_kind(&self) -> Result<RerankerKind> {
        RerankerKind::from_str(&self.reranker.kind)
    }

    pub fn build_reranker(&self) -> Result<Reranker> {
        Ok(match self.reranker_kind()? {
            RerankerKind::Passthrough => Reranker::Passthrough,
            RerankerKind::Lexical => Reranker::Lexical {
                max_text_length: self.reranker.max_text_length,
            },
            RerankerKind::Http => Reranker::Http {
                service: HttpReranker::new(
                    self.reranker.endpoint.clone().unwrap_or_default(),
                    self.reranker.batch_size,
                    Duration::from_secs(self.reranker.timeout_secs),
                    self.reranker.max_retries,
                )?,
                max_text_length: self.reranker.max_text_length,
            },
        })
    }

    /// Where prompt completions are cached, if caching is on.
    pub fn prompt_cache_dir(&self) -> Option<PathBuf> {
        if !self.llm.cache {
            return None;
        }
        Some(
            self.llm
                .cache_dir
                .clone()
                .unwrap_or_else(|| self.paths.output_dir.join("prompt_cache")),
        )
    }

    pub fn build_llm_client(&self) -> Result<LlmClient> {
        let sampling = SamplingParams {
            temperature: self.llm.temperature,
            top_p: self.llm.top_p,
            top_k: self.llm.top_k,
        };
        let transport: Arc<dyn crate::llm::ChatTransport> = match self.llm.mode.as_str() {
            "http" => Arc::new(HttpTransport::new(
                self.llm.endpoint.clone().unwrap_or_default(),
                &self.llm.api_key_env,
                Duration::from_secs(self.llm.timeout_secs),
                self.llm.max_retries,
            )?),
            "mock" => {
                let path = self
                    .llm
                    .transcript
                    .as_ref()
                    .expect("validated: mock mode has a transcript");
                Arc::new(MockTransport::from_transcript(path)?)
            }
            other => {
                return Err(Error::Config(format!("unknown llm.mode {other:?}")));
            }
        };
        let cache = self.prompt_cache_dir().map(PromptCache::new);
        Ok(LlmClient::new(
            transport,
            cache,
            self.llm.model.clone(),
            sampling,
        ))
    }

    /// Canonical TOML for the resolved config; written next to the outputs.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Fingerprint of the fully resolved configuration.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.resolved_toml().as_bytes()))
    }
}
