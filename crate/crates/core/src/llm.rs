//! Text-completion clients: HTTP, on-disk cache, offline and mock.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_URL: &str = "CLAIMDECOMP_LLM_URL";
pub const ENV_API_KEY: &str = "CLAIMDECOMP_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt exceeds the model context window")]
    ContextLength,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<LlmError> },
    #[error("cache-only mode: no cached response for key {0}")]
    CacheMiss(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl LlmError {
    fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens < 1 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// Content address of the request. Every field participates.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::json!({
            "model": self.model,
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl CompletionResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        CompletionResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

/// Anything that can turn a prompt into a completion. Implementations are
/// shared across worker threads.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<C: CompletionClient + ?Sized> CompletionClient for &C {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for Box<C> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Model and sampling settings for one kind of call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Total context window in tokens, prompt plus output.
    pub context_window: usize,
}

impl GenerationParams {
    /// Decomposition and fluency rewriting: 4K window, 512 output tokens,
    /// temperature 0.7.
    pub fn decomposition(model: &str) -> Self {
        GenerationParams {
            model: model.to_string(),
            max_tokens: 512,
            temperature: 0.7,
            context_window: 4096,
        }
    }

    /// Support validation: 2048 window, 128 output tokens, greedy.
    pub fn validation(model: &str) -> Self {
        GenerationParams {
            model: model.to_string(),
            max_tokens: 128,
            temperature: 0.0,
            context_window: 2048,
        }
    }

    pub fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            prompt,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }

    /// Tokens left for the prompt.
    pub fn prompt_budget(&self) -> usize {
        self.context_window.saturating_sub(self.max_tokens as usize)
    }
}

// ---------------------------------------------------------------------------
// HTTP

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_inflight: usize,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(url: &str) -> Self {
        HttpConfig {
            url: url.to_string(),
            api_key: None,
            max_retries: 4,
            initial_backoff: Duration::from_millis(500),
            max_inflight: 8,
            timeout: Duration::from_secs(120),
        }
    }

    /// Endpoint URL and key from `CLAIMDECOMP_LLM_URL` / `CLAIMDECOMP_LLM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_URL).ok()?;
        let mut config = HttpConfig::new(&url);
        config.api_key = std::env::var(ENV_API_KEY).ok();
        Some(config)
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Client for a completions endpoint: POST `{model, prompt, max_tokens,
/// temperature}`, response `{choices: [{text, finish_reason}]}`.
pub struct HttpClient {
    config: HttpConfig,
    http: reqwest::blocking::Client,
    inflight: Semaphore,
    calls: AtomicUsize,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpClient {
            inflight: Semaphore::new(config.max_inflight),
            config,
            http,
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let _permit = self.inflight.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut builder = self.http.post(&self.config.url).json(request);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if status >= 400 {
            if is_context_length_message(&body) {
                return Err(LlmError::ContextLength);
            }
            return Err(LlmError::Http { status, body });
        }
        let wire: WireResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Malformed("no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        Ok(CompletionResponse {
            text: choice.text,
            finish_reason,
        })
    }
}

fn is_context_length_message(body: &str) -> bool {
    let lower = body.to_lowercase();
    ["context_length_exceeded", "context length", "maximum context", "too many tokens"]
        .iter()
        .any(|m| lower.contains(m))
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        let mut delay = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_transient() && attempt <= self.config.max_retries => {
                    log::warn!("transient endpoint failure (attempt {attempt}): {e}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) if e.is_transient() => {
                    return Err(LlmError::Exhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Cache

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: CompletionRequest,
    response: CompletionResponse,
}

/// Content-addressed response cache in front of another client. Each entry
/// is a JSON file named by [`CompletionRequest::cache_key`].
pub struct CachedClient<C> {
    inner: C,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    locks: Mutex<HashMap<String, std::sync::Arc<Mutex<()>>>>,
}

impl<C: CompletionClient> CachedClient<C> {
    pub fn new(inner: C, dir: &Path) -> Result<Self, LlmError> {
        fs::create_dir_all(dir).map_err(|e| LlmError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(CachedClient {
            inner,
            dir: dir.to_path_buf(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn lookup(&self, key: &str, request: &CompletionRequest) -> Option<CompletionResponse> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.request == *request).then_some(entry.response)
    }

    fn store(&self, key: &str, entry: &CacheEntry) -> Result<(), LlmError> {
        let json = serde_json::to_string_pretty(entry).map_err(|e| LlmError::Cache(e.to_string()))?;
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| LlmError::Cache(e.to_string()))?;
        fs::write(tmp.path(), json).map_err(|e| LlmError::Cache(e.to_string()))?;
        tmp.persist(self.path(key))
            .map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(())
    }
}

impl<C: CompletionClient> CompletionClient for CachedClient<C> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        let key = request.cache_key();
        if let Some(hit) = self.lookup(&key, request) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        // One writer per key; a concurrent duplicate waits and then reads.
        let lock = self
            .locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap();
        if let Some(hit) = self.lookup(&key, request) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        self.store(
            &key,
            &CacheEntry {
                request: request.clone(),
                response: response.clone(),
            },
        )?;
        Ok(response)
    }
}

/// Backend for cache-only runs: every call is a miss.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineClient;

impl CompletionClient for OfflineClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        Err(LlmError::CacheMiss(request.cache_key()))
    }
}

// ---------------------------------------------------------------------------
// Mock

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    ContextLength,
    Failure(String),
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

/// Deterministic in-process client.
///
/// Lookup order: exact prompt table, then substring rules in insertion
/// order (first key contained in the prompt wins), then the default.
#[derive(Debug, Default)]
pub struct MockClient {
    exact: HashMap<String, MockReply>,
    contains: Vec<(String, MockReply)>,
    default: Option<MockReply>,
    max_prompt_chars: Option<usize>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

/// File form of a mock, for offline CLI runs.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub exact: HashMap<String, String>,
    pub contains: Vec<(String, String)>,
    pub default: Option<String>,
    pub max_prompt_chars: Option<usize>,
}

impl MockClient {
    /// Exact-match table with a fallback text.
    pub fn new<I, K, V>(table: I, default: &str) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        MockClient {
            exact: table
                .into_iter()
                .map(|(k, v)| (k.into(), MockReply::Text(v.into())))
                .collect(),
            default: Some(MockReply::Text(default.to_string())),
            ..Default::default()
        }
    }

    /// Answers every prompt with `text`.
    pub fn constant(text: &str) -> Self {
        Self::new(std::iter::empty::<(String, String)>(), text)
    }

    pub fn with_rule(mut self, key: &str, reply: impl Into<MockReply>) -> Self {
        self.contains.push((key.to_string(), reply.into()));
        self
    }

    pub fn with_exact(mut self, prompt: &str, reply: impl Into<MockReply>) -> Self {
        self.exact.insert(prompt.to_string(), reply.into());
        self
    }

    pub fn with_default(mut self, reply: impl Into<MockReply>) -> Self {
        self.default = Some(reply.into());
        self
    }

    /// Prompts longer than `chars` fail with a context-length error.
    pub fn with_max_prompt_chars(mut self, chars: usize) -> Self {
        self.max_prompt_chars = Some(chars);
        self
    }

    pub fn from_spec(spec: MockSpec) -> Self {
        MockClient {
            exact: spec
                .exact
                .into_iter()
                .map(|(k, v)| (k, MockReply::Text(v)))
                .collect(),
            contains: spec
                .contains
                .into_iter()
                .map(|(k, v)| (k, MockReply::Text(v)))
                .collect(),
            default: Some(MockReply::Text(spec.default.unwrap_or_default())),
            max_prompt_chars: spec.max_prompt_chars,
            ..Default::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every prompt received, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    fn reply_for(&self, prompt: &str) -> Option<&MockReply> {
        self.exact
            .get(prompt)
            .or_else(|| {
                self.contains
                    .iter()
                    .find(|(key, _)| prompt.contains(key.as_str()))
                    .map(|(_, r)| r)
            })
            .or(self.default.as_ref())
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(request.prompt.clone());
        if self
            .max_prompt_chars
            .is_some_and(|max| request.prompt.chars().count() > max)
        {
            return Err(LlmError::ContextLength);
        }
        match self.reply_for(&request.prompt) {
            Some(MockReply::Text(t)) => Ok(CompletionResponse::stop(t.clone())),
            Some(MockReply::ContextLength) => Err(LlmError::ContextLength),
            Some(MockReply::Failure(m)) => Err(LlmError::Http {
                status: 400,
                body: m.clone(),
            }),
            None => Ok(CompletionResponse::stop("")),
        }
    }
}
