//! Clients for embedding and text-generation services.
//!
//! `offline` mode is the default and never touches the network: embeddings
//! come from [`embed_offline`] and text generation is refused, so every
//! caller runs its deterministic rule/template fallback. `http` mode speaks a
//! small private JSON protocol:
//!
//! * `POST {endpoint}/v1/embed` with `{"texts": [...]}` answered by
//!   `{"vectors": [[...], ...]}`
//! * `POST {endpoint}/v1/generate` with `{"prompt": "..."}` answered by
//!   `{"text": "..."}`
//!
//! The API key is only ever read from the environment variable named in
//! [`ProviderConfig::api_key_env_var_name`] and sent as a bearer token.

use std::ops::Range;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{embed_offline, EmbeddingVector, DEFAULT_DIMENSION, MIN_DIMENSION};

pub const ENV_PROVIDER: &str = "EGOSELF_PROVIDER";
pub const ENV_ENDPOINT: &str = "EGOSELF_ENDPOINT";
pub const ENV_API_KEY: &str = "EGOSELF_API_KEY";
pub const ENV_EMBED_DIM: &str = "EGOSELF_EMBED_DIM";

const EMBED_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("text generation is not available in offline mode")]
    OfflineUnsupported,
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("network error{}: {message}", fmt_range(.range))]
    Network { range: Option<Range<usize>>, message: String },
    #[error("request timed out{}", fmt_range(.range))]
    Timeout { range: Option<Range<usize>> },
    #[error("authentication rejected (HTTP {status}); key read from env var {env_var}")]
    Auth { status: u16, env_var: String },
    #[error("provider returned HTTP {status}{}: {body}", fmt_range(.range))]
    Status { status: u16, range: Option<Range<usize>>, body: String },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("malformed provider response: {0}")]
    Protocol(String),
}

fn fmt_range(range: &Option<Range<usize>>) -> String {
    match range {
        Some(r) => format!(" for batch items {}..{}", r.start, r.end),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Offline,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub endpoint_url: Option<String>,
    pub api_key_env_var_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub embed_dimension: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Offline,
            endpoint_url: None,
            api_key_env_var_name: ENV_API_KEY.to_string(),
            timeout_ms: 30_000,
            max_retries: 2,
            embed_dimension: DEFAULT_DIMENSION,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    pub fn from_env() -> Result<Self, ProviderError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ProviderError> {
        let mut cfg = Self::default();
        if let Some(mode) = lookup(ENV_PROVIDER) {
            cfg.mode = match mode.trim().to_ascii_lowercase().as_str() {
                "" | "offline" => ProviderMode::Offline,
                "http" => ProviderMode::Http,
                other => return Err(ProviderError::Config(format!("{ENV_PROVIDER}={other} (expected offline|http)"))),
            };
        }
        cfg.endpoint_url = lookup(ENV_ENDPOINT).filter(|s| !s.trim().is_empty());
        if let Some(dim) = lookup(ENV_EMBED_DIM) {
            cfg.embed_dimension = dim
                .trim()
                .parse()
                .map_err(|_| ProviderError::Config(format!("{ENV_EMBED_DIM}={dim} is not an integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.embed_dimension = dimension;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.mode == ProviderMode::Http && self.endpoint_url.is_none() {
            return Err(ProviderError::Config("http mode requires an endpoint url".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ProviderError::Config("timeout_ms must be positive".into()));
        }
        if self.embed_dimension < MIN_DIMENSION {
            return Err(ProviderError::Config(format!("embed_dimension must be >= {MIN_DIMENSION}")));
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop().ok_or_else(|| ProviderError::Protocol("empty embedding response".into()))
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate_text(&self, prompt: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineEmbedder {
    dimension: usize,
}

impl OfflineEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= MIN_DIMENSION, "embedding dimension must be >= {MIN_DIMENSION}");
        Self { dimension }
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for OfflineEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| embed_offline(t, self.dimension)).collect())
    }
}

/// Text generation in offline mode: always refuses.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineGenerator;

impl TextGenerator for OfflineGenerator {
    fn generate_text(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::InvalidInput("empty prompt".into()));
        }
        Err(ProviderError::OfflineUnsupported)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Blocking HTTP client for both embedding and generation.
pub struct HttpProvider {
    config: ProviderConfig,
    endpoint: String,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("endpoint", &self.endpoint).finish()
    }
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| ProviderError::Config("http mode requires an endpoint url".into()))?
            .trim_end_matches('/')
            .to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight { limit: config.max_in_flight, active: Mutex::new(0), freed: Condvar::new() };
        Ok(Self { config, endpoint, agent, in_flight })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
        range: Option<Range<usize>>,
    ) -> Result<R, ProviderError> {
        let url = format!("{}{}", self.endpoint, path);
        let key = std::env::var(&self.config.api_key_env_var_name).ok();
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.in_flight.acquire();
                let mut request = self.agent.post(&url);
                if let Some(key) = &key {
                    request = request.header("authorization", format!("Bearer {key}"));
                }
                match request.send_json(body) {
                    Ok(mut resp) => {
                        let status = resp.status().as_u16();
                        if status == 200 {
                            return resp
                                .body_mut()
                                .read_json::<R>()
                                .map_err(|e| ProviderError::Protocol(e.to_string()));
                        }
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        match status {
                            401 | 403 => {
                                return Err(ProviderError::Auth { status, env_var: self.config.api_key_env_var_name.clone() })
                            }
                            429 | 500..=599 => ProviderError::Status { status, range: range.clone(), body: text },
                            _ => return Err(ProviderError::Status { status, range, body: text }),
                        }
                    }
                    Err(ureq::Error::Timeout(_)) => ProviderError::Timeout { range: range.clone() },
                    Err(e) => ProviderError::Network { range: range.clone(), message: e.to_string() },
                }
            };
            if attempt >= self.config.max_retries {
                return Err(outcome);
            }
            attempt += 1;
            tracing::warn!(attempt, error = %outcome, "retrying provider request");
            std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
        }
    }
}

impl Embedder for HttpProvider {
    fn dimension(&self) -> usize {
        self.config.embed_dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for (i, chunk) in texts.chunks(EMBED_CHUNK).enumerate() {
            let start = i * EMBED_CHUNK;
            let range = start..start + chunk.len();
            let resp: EmbedResponse = self.post("/v1/embed", &EmbedRequest { texts: chunk }, Some(range.clone()))?;
            if resp.vectors.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "expected {} vectors for batch items {}..{}, got {}",
                    chunk.len(),
                    range.start,
                    range.end,
                    resp.vectors.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != self.config.embed_dimension {
                    return Err(ProviderError::Dimension { expected: self.config.embed_dimension, actual: v.len() });
                }
                out.push(EmbeddingVector::new(v).normalized());
            }
        }
        Ok(out)
    }
}

impl TextGenerator for HttpProvider {
    fn generate_text(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::InvalidInput("empty prompt".into()));
        }
        let resp: GenerateResponse = self.post("/v1/generate", &GenerateRequest { prompt }, None)?;
        Ok(resp.text)
    }
}

/// The embedder and generator selected by a [`ProviderConfig`].
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    /// `None` in offline mode.
    pub generator: Option<Arc<dyn TextGenerator>>,
}

impl Providers {
    pub fn offline(dimension: usize) -> Self {
        Self { embedder: Arc::new(OfflineEmbedder::new(dimension)), generator: None }
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        match config.mode {
            ProviderMode::Offline => Ok(Self::offline(config.embed_dimension)),
            ProviderMode::Http => {
                let http = Arc::new(HttpProvider::new(config.clone())?);
                Ok(Self { embedder: http.clone(), generator: Some(http) })
            }
        }
    }
}

/// Prompt templates for the provider-backed steps. These are not part of
/// any correctness contract; bump [`prompts::VERSION`] when editing them.
pub mod prompts {
    pub const VERSION: &str = "v1";
    pub const EDGE_ANNOTATION: &str = include_str!("../prompts/v1/edge_annotation.txt");
    pub const PROFILE_SUMMARY: &str = include_str!("../prompts/v1/profile_summary.txt");
    pub const PARTITION: &str = include_str!("../prompts/v1/partition.txt");
    pub const PAIR_VERIFY: &str = include_str!("../prompts/v1/pair_verify.txt");
    pub const FUTURE_SUMMARY: &str = include_str!("../prompts/v1/future_summary.txt");

    /// Substitute `{name}` placeholders.
    pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
        vars.iter().fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
    }
}
