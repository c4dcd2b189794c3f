//! OpenAI-compatible chat-completion client with retries, bounded
//! concurrency and a fingerprint-keyed record/replay cassette.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::{read_text, sha256_hex, write_atomic};

pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "OPENAI_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(model_id: &str, prompt_text: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            prompt_text: prompt_text.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if self.prompt_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt_text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical (sorted-key) JSON of the request values.
    pub fn fingerprint(&self) -> String {
        let canonical = cost_core::model::to_canonical_json(self).expect("request serializes");
        sha256_hex(canonical.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no cassette entry for fingerprint {0}")]
    ReplayMiss(String),
    #[error("gave up after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("credential rejected: {0}")]
    Auth(String),
    #[error("request failed: {0}")]
    Fatal(String),
    #[error("live call needed but no endpoint is configured")]
    NoTransport,
    #[error("cassette: {0}")]
    Cassette(String),
}

/// Outcome of one HTTP attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendError {
    /// 429, 5xx, timeouts and connection failures.
    Transient(String),
    Auth(String),
    Fatal(String),
}

pub trait Transport: Send + Sync {
    fn send<'a>(&'a self, request: &'a CompletionRequest) -> BoxFuture<'a, Result<CompletionResponse, SendError>>;
}

/// Chat-completions over HTTP; one user message carries the prompt.
pub struct HttpTransport {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Fatal(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        })
    }

    /// Reads the endpoint and credential from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(&base, key, timeout)
    }

    pub fn body(request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        body
    }

    pub fn parse_body(text: &str, latency_ms: u64) -> Result<CompletionResponse, SendError> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| SendError::Fatal(format!("response is not JSON: {e}")))?;
        let choice = v
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| SendError::Fatal("response has no choices".into()))?;
        let finish_reason = FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str));
        let content = choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(Value::as_str);
        let text = match (content, finish_reason) {
            (Some(t), _) => t.to_string(),
            (None, FinishReason::Stop) => return Err(SendError::Fatal("finished without content".into())),
            (None, _) => String::new(),
        };
        let usage = v
            .get("usage")
            .and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok())
            .unwrap_or_default();
        Ok(CompletionResponse {
            text,
            finish_reason,
            usage,
            latency_ms,
        })
    }
}

impl Transport for HttpTransport {
    fn send<'a>(&'a self, request: &'a CompletionRequest) -> BoxFuture<'a, Result<CompletionResponse, SendError>> {
        Box::pin(async move {
            let started = Instant::now();
            let mut rb = self
                .client
                .post(format!("{}/chat/completions", self.base_url))
                .header("content-type", "application/json")
                .body(Self::body(request).to_string());
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            let resp = rb
                .send()
                .await
                .map_err(|e| SendError::Transient(e.without_url().to_string()))?;
            let status = resp.status();
            let text = resp
                .text()
                .await
                .map_err(|e| SendError::Transient(e.without_url().to_string()))?;
            match status.as_u16() {
                401 | 403 => return Err(SendError::Auth(format!("HTTP {status}"))),
                429 | 500..=599 => return Err(SendError::Transient(format!("HTTP {status}"))),
                _ if !status.is_success() => {
                    let snippet: String = text.chars().take(200).collect();
                    return Err(SendError::Fatal(format!("HTTP {status}: {snippet}")));
                }
                _ => {}
            }
            Self::parse_body(&text, started.elapsed().as_millis() as u64)
        })
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the wait after failed attempt `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt as i32))
    }

    pub fn delay<R: Rng>(&self, attempt: u32, rng: &mut R) -> Duration {
        self.ceiling(attempt).mul_f64(rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Reuse recorded responses; call and persist anything missing.
    Record,
    /// Recorded responses only; a miss is an error.
    ReplayStrict,
    /// Recorded responses, else a live call that is not persisted.
    ReplayFallthrough,
    /// Always call; never persist.
    Live,
}

impl FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "record" => Ok(CassetteMode::Record),
            "replay_strict" | "replay" => Ok(CassetteMode::ReplayStrict),
            "replay_fallthrough" => Ok(CassetteMode::ReplayFallthrough),
            "live" => Ok(CassetteMode::Live),
            other => Err(format!("unknown cassette mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

#[derive(Debug, Serialize, Deserialize)]
struct CassetteFile {
    version: u32,
    entries: BTreeMap<String, CassetteEntry>,
}

/// Responses keyed by request fingerprint. Requests hold no credentials,
/// so none reach the file.
#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

impl Cassette {
    pub fn in_memory(mode: CassetteMode) -> Self {
        Self {
            mode,
            path: None,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Loads `path`. A missing file is an empty cassette except in strict
    /// replay, where it is an error.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, LlmError> {
        let entries = if path.exists() {
            let text = read_text(path).map_err(|e| LlmError::Cassette(e.to_string()))?;
            Self::parse(&text)?
        } else if mode == CassetteMode::ReplayStrict {
            return Err(LlmError::Cassette(format!("{} does not exist", path.display())));
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            mode,
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    pub fn from_json(text: &str, mode: CassetteMode) -> Result<Self, LlmError> {
        Ok(Self {
            mode,
            path: None,
            entries: Mutex::new(Self::parse(text)?),
        })
    }

    fn parse(text: &str) -> Result<BTreeMap<String, CassetteEntry>, LlmError> {
        let file: CassetteFile = serde_json::from_str(text).map_err(|e| LlmError::Cassette(e.to_string()))?;
        for (fp, entry) in &file.entries {
            if entry.request.fingerprint() != *fp {
                return Err(LlmError::Cassette(format!("entry {fp} does not match its request")));
            }
        }
        Ok(file.entries)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<CompletionResponse> {
        self.entries
            .lock()
            .unwrap()
            .get(fingerprint)
            .map(|e| e.response.clone())
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        self.entries.lock().unwrap().contains_key(fingerprint)
    }

    fn render(entries: &BTreeMap<String, CassetteEntry>) -> String {
        let file = CassetteFile {
            version: 1,
            entries: entries.clone(),
        };
        let value = serde_json::to_value(&file).expect("cassette serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        text
    }

    pub fn to_json(&self) -> String {
        Self::render(&self.entries.lock().unwrap())
    }

    /// Hash of the canonical file rendering.
    pub fn sha256(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Stores an entry and, when file-backed, rewrites the file while
    /// holding the lock so concurrent writers serialize.
    pub fn insert(&self, request: &CompletionRequest, response: &CompletionResponse) -> Result<(), LlmError> {
        let mut entries = self.entries.lock().unwrap();
        entries.insert(
            request.fingerprint(),
            CassetteEntry {
                request: request.clone(),
                response: response.clone(),
            },
        );
        if let Some(path) = &self.path {
            write_atomic(path, Self::render(&entries).as_bytes()).map_err(|e| LlmError::Cassette(e.to_string()))?;
        }
        Ok(())
    }
}

/// Counters for observing client behavior.
#[derive(Debug, Default)]
pub struct ClientStats {
    pub network_attempts: AtomicU64,
    pub backoff_waits: AtomicU64,
    pub replayed: AtomicU64,
    in_flight: AtomicU64,
    pub peak_in_flight: AtomicU64,
}

impl ClientStats {
    fn enter(&self) {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    }

    fn leave(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct LlmClient {
    transport: Option<Arc<dyn Transport>>,
    cassette: Arc<Cassette>,
    retry: RetryPolicy,
    pub stats: ClientStats,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("has_transport", &self.transport.is_some())
            .field("mode", &self.cassette.mode())
            .field("retry", &self.retry)
            .finish()
    }
}

impl LlmClient {
    pub fn new(transport: Option<Arc<dyn Transport>>, cassette: Arc<Cassette>, retry: RetryPolicy) -> Self {
        Self {
            transport,
            cassette,
            retry,
            stats: ClientStats::default(),
        }
    }

    /// A client that can only replay.
    pub fn replay_only(cassette: Arc<Cassette>) -> Self {
        Self::new(None, cassette, RetryPolicy::default())
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.check()?;
        let fp = request.fingerprint();
        let recorded = self.cassette.get(&fp);
        match self.cassette.mode() {
            CassetteMode::ReplayStrict => {
                let r = recorded.ok_or(LlmError::ReplayMiss(fp))?;
                self.stats.replayed.fetch_add(1, Ordering::Relaxed);
                Ok(r)
            }
            CassetteMode::ReplayFallthrough | CassetteMode::Record if recorded.is_some() => {
                self.stats.replayed.fetch_add(1, Ordering::Relaxed);
                Ok(recorded.unwrap())
            }
            CassetteMode::ReplayFallthrough | CassetteMode::Live => self.call_live(request).await,
            CassetteMode::Record => {
                let response = self.call_live(request).await?;
                self.cassette.insert(request, &response)?;
                Ok(response)
            }
        }
    }

    async fn call_live(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let transport = self.transport.as_ref().ok_or(LlmError::NoTransport)?;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            self.stats.network_attempts.fetch_add(1, Ordering::Relaxed);
            self.stats.enter();
            let outcome = transport.send(request).await;
            self.stats.leave();
            match outcome {
                Ok(r) => return Ok(r),
                Err(SendError::Auth(m)) => return Err(LlmError::Auth(m)),
                Err(SendError::Fatal(m)) => return Err(LlmError::Fatal(m)),
                Err(SendError::Transient(m)) => last = m,
            }
            if attempt + 1 < attempts {
                let wait = self.retry.delay(attempt, &mut rand::rng());
                self.stats.backoff_waits.fetch_add(1, Ordering::Relaxed);
                tokio::time::sleep(wait).await;
            }
        }
        Err(LlmError::Transport {
            attempts,
            message: last,
        })
    }

    /// Runs every request with at most `max_in_flight` outstanding. Each
    /// result carries its input index; output is sorted by index.
    pub async fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        max_in_flight: usize,
    ) -> Vec<(usize, Result<CompletionResponse, LlmError>)> {
        let mut out: Vec<_> = stream::iter(requests.iter().enumerate())
            .map(|(i, r)| async move { (i, self.complete(r).await) })
            .buffer_unordered(max_in_flight.max(1))
            .collect()
            .await;
        out.sort_by_key(|(i, _)| *i);
        out
    }
}
