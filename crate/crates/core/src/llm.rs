//! Chat-completion dispatch with retries and a record/replay store.
//!
//! The replay store is a JSONL file holding one [`Transcript`] per line. Lookups
//! use the request digest: sha256 over the canonical JSON (sorted keys, no
//! whitespace) of `{"max_tokens", "messages", "model_name", "temperature"}`.
//! When a digest occurs on several lines the first one wins.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::scenarios::{ChatMessage, PromptBundle};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("network failure after {attempts} attempt(s): {reason}")]
    Network { attempts: u32, reason: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("credential environment variable {0} is not set")]
    AuthMissing(String),
    #[error("no stored transcript for request digest {0}")]
    ReplayMiss(String),
    #[error("endpoint answered HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("replay store {path}: {reason}")]
    Store { path: PathBuf, reason: String },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

impl LlmError {
    fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Network { .. } | LlmError::RateLimited { .. })
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            LlmError::Network { reason, .. } => LlmError::Network { attempts: n, reason },
            LlmError::RateLimited { .. } => LlmError::RateLimited { attempts: n },
            other => other,
        }
    }
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout_s() -> f64 {
    120.0
}

fn default_true() -> bool {
    true
}

/// One model endpoint. The credential itself is never stored here, only the
/// name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub model_name: String,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    /// Unset means the endpoint is called without an `Authorization` header.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Honour `HTTP(S)_PROXY` style variables.
    #[serde(default = "default_true")]
    pub use_env_proxy: bool,
}

impl BackendConfig {
    pub fn new(model_name: impl Into<String>) -> Self {
        BackendConfig {
            model_name: model_name.into(),
            endpoint_url: String::new(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout_s(),
            api_key_env: None,
            use_env_proxy: true,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidConfig(format!("{}: {m}", self.model_name)));
        if self.model_name.trim().is_empty() {
            return Err(LlmError::InvalidConfig("model_name is empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        Ok(())
    }
}

/// Stable digest of everything that determines a completion request.
pub fn request_digest(model_name: &str, messages: &[ChatMessage], temperature: f64, max_tokens: u32) -> String {
    let value = serde_json::json!({
        "model_name": model_name,
        "messages": messages,
        "temperature": temperature,
        "max_tokens": max_tokens,
    });
    // serde_json's default map is ordered by key, so this is canonical.
    let canonical = serde_json::to_string(&value).expect("json values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_digest: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub backend: String,
    pub timestamp: DateTime<Utc>,
    pub refusal: bool,
}

impl Transcript {
    pub fn digest_matches(&self) -> bool {
        request_digest(&self.model_name, &self.messages, self.temperature, self.max_tokens) == self.request_digest
    }
}

/// Phrases that mark a declined answer.
pub fn default_refusal_lexicon() -> Lexicon {
    Lexicon::parse(include_str!("../lexicons/refusal.txt"))
}

pub fn detect_refusal(response_text: &str, lexicon: &Lexicon) -> bool {
    lexicon.matches(response_text)
}

/// A chat-completion request as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub model_name: &'a str,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Anything able to answer one chat-completion request. Implementations must
/// tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    /// Short identifier recorded in transcripts.
    fn label(&self) -> &str;
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, LlmError>;
}

/// OpenAI-shaped `messages` endpoint over blocking HTTP.
pub struct HttpBackend {
    endpoint_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        if config.endpoint_url.trim().is_empty() {
            return Err(LlmError::InvalidConfig(format!("{}: endpoint_url is empty", config.model_name)));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::AuthMissing(var.clone()))?),
            None => None,
        };
        let mut builder = reqwest::blocking::Client::builder().timeout(Duration::from_secs_f64(config.timeout_s));
        if !config.use_env_proxy {
            builder = builder.no_proxy();
        }
        let client = builder.build().map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(HttpBackend { endpoint_url: config.endpoint_url.clone(), api_key, client })
    }
}

impl ChatBackend for HttpBackend {
    fn label(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, LlmError> {
        let body = WireRequest {
            model: request.model_name,
            messages: request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(&self.endpoint_url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Network { attempts: 1, reason: e.to_string() })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited { attempts: 1 });
        }
        if status.is_server_error() {
            return Err(LlmError::Network { attempts: 1, reason: format!("HTTP {status}") });
        }
        let text = resp.text().map_err(|e| LlmError::Network { attempts: 1, reason: e.to_string() })?;
        if !status.is_success() {
            return Err(LlmError::Http { status: status.as_u16(), body: text });
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()))
    }
}

/// Retries for transient failures with exponential backoff and full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy { base_delay_ms: 0, max_delay_ms: 0, ..RetryPolicy::default() }
    }

    /// Upper bound of the sleep before retry number `retry` (0-based).
    pub fn delay_cap(&self, retry: u32) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }

    pub fn run(&self, backend: &dyn ChatBackend, request: &ChatRequest<'_>) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    let cap = self.delay_cap(attempt - 1).as_millis() as u64;
                    if cap > 0 {
                        std::thread::sleep(Duration::from_millis(rand::thread_rng().gen_range(0..=cap)));
                    }
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}

/// Append-only transcript store with concurrent reads and serialized appends.
#[derive(Debug)]
pub struct ReplayStore {
    path: PathBuf,
    entries: RwLock<HashMap<String, Transcript>>,
    writer: Mutex<()>,
}

impl ReplayStore {
    /// Opens `path`, loading existing lines. A missing file is an empty store.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let store_err = |reason: String| LlmError::Store { path: path.to_path_buf(), reason };
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| store_err(e.to_string()))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let t: Transcript =
                    serde_json::from_str(line).map_err(|e| store_err(format!("line {}: {e}", i + 1)))?;
                if !t.digest_matches() {
                    return Err(store_err(format!("line {}: request_digest does not match its fields", i + 1)));
                }
                entries.entry(t.request_digest.clone()).or_insert(t);
            }
        }
        Ok(ReplayStore { path: path.to_path_buf(), entries: RwLock::new(entries), writer: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<Transcript> {
        self.entries.read().expect("store lock").get(digest).cloned()
    }

    pub fn append(&self, transcript: &Transcript) -> Result<(), LlmError> {
        let store_err = |reason: String| LlmError::Store { path: self.path.clone(), reason };
        let line = serde_json::to_string(transcript).map_err(|e| store_err(e.to_string()))?;
        let _guard = self.writer.lock().expect("store writer lock");
        let mut f =
            OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| store_err(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| store_err(e.to_string()))?;
        self.entries
            .write()
            .expect("store lock")
            .entry(transcript.request_digest.clone())
            .or_insert_with(|| transcript.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    #[default]
    Replay,
}

/// Routes bundles to a backend or the replay store according to the mode.
pub struct Dispatcher {
    mode: Mode,
    store: Option<ReplayStore>,
    retry: RetryPolicy,
    refusal: Lexicon,
}

impl Dispatcher {
    /// Record and replay modes need a store.
    pub fn new(mode: Mode, store: Option<ReplayStore>, retry: RetryPolicy, refusal: Lexicon) -> Result<Self, LlmError> {
        if mode != Mode::Live && store.is_none() {
            return Err(LlmError::InvalidConfig(format!("{mode:?} mode needs a replay store")));
        }
        Ok(Dispatcher { mode, store, retry, refusal })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> Option<&ReplayStore> {
        self.store.as_ref()
    }

    /// In replay mode `backend` is never called.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        config: &BackendConfig,
        backend: &dyn ChatBackend,
    ) -> Result<Transcript, LlmError> {
        let digest = request_digest(&config.model_name, &bundle.messages, config.temperature, config.max_tokens);
        if self.mode == Mode::Replay {
            return self.store.as_ref().and_then(|s| s.get(&digest)).ok_or(LlmError::ReplayMiss(digest));
        }
        let request = ChatRequest {
            model_name: &config.model_name,
            messages: &bundle.messages,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let response_text = self.retry.run(backend, &request)?;
        let transcript = Transcript {
            request_digest: digest,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            messages: bundle.messages.clone(),
            refusal: detect_refusal(&response_text, &self.refusal),
            response_text,
            backend: backend.label().to_string(),
            timestamp: Utc::now(),
        };
        if self.mode == Mode::Record {
            if let Some(store) = &self.store {
                store.append(&transcript)?;
            }
        }
        Ok(transcript)
    }
}

/// Backend that fails every call. Useful to prove replay never reaches out.
pub struct OfflineBackend;

impl ChatBackend for OfflineBackend {
    fn label(&self) -> &str {
        "offline"
    }

    fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, LlmError> {
        Err(LlmError::InvalidConfig("offline backend cannot complete requests".into()))
    }
}
