//! Chat-completion backends and structured-output recovery.
//!
//! Two backends share the [`Backend`] trait: [`HttpBackend`] speaks the
//! OpenAI-compatible chat-completions protocol, [`ScriptedBackend`] answers
//! from a canned script so that whole pipeline runs can be replayed offline.

use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    #[serde(default)]
    pub params: ChatParams,
}

impl ChatRequest {
    pub fn new(user_text: impl Into<String>) -> Self {
        ChatRequest { system_text: None, user_text: user_text.into(), params: ChatParams::default() }
    }

    pub fn with_system(mut self, system_text: impl Into<String>) -> Self {
        self.system_text = Some(system_text.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no script entry matches request: {preview:?}")]
    ScriptMiss { preview: String },
    #[error("request has empty user_text")]
    EmptyRequest,
    #[error("cannot load script {path}: {message}")]
    Script { path: String, message: String },
}

impl LlmError {
    /// Variant name, used in traces and run metadata.
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::Auth { .. } => "AuthError",
            LlmError::RateLimited { .. } => "RateLimited",
            LlmError::Transport { .. } => "TransportError",
            LlmError::ScriptMiss { .. } => "ScriptMiss",
            LlmError::EmptyRequest => "EmptyRequest",
            LlmError::Script { .. } => "ScriptError",
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

fn preview(text: &str) -> String {
    text.chars().take(80).collect()
}

// ---------------------------------------------------------------------------
// HTTP

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Extra attempts after the first one.
    pub budget: u32,
    pub base_delay: Duration,
    /// Relative jitter applied to each delay, e.g. 0.2 for ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { budget: 3, base_delay: Duration::from_secs(1), jitter: 0.2 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { budget: 0, base_delay: Duration::ZERO, jitter: 0.0 }
    }

    /// Delay before retry number `retry` (0-based): base * 2^retry, jittered.
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * f64::from(1u32 << retry.min(16));
        let factor = if self.jitter > 0.0 { 1.0 + rng.gen_range(-self.jitter..=self.jitter) } else { 1.0 };
        Duration::from_secs_f64((nominal * factor).max(0.0))
    }
}

pub struct HttpBackend {
    id: String,
    endpoint: String,
    api_key: String,
    model: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .field("retry", &self.retry)
            .finish()
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fail(LlmError),
}

impl HttpBackend {
    pub fn new(
        api_base: &str,
        api_key: impl Into<String>,
        model: impl Into<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport { attempts: 0, message: e.to_string() })?;
        let model = model.into();
        Ok(HttpBackend {
            id: format!("http:{model}"),
            endpoint: format!("{}/chat/completions", api_base.trim_end_matches('/')),
            api_key: api_key.into(),
            model,
            retry,
            client,
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &request.system_text {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let mut body = json!({"model": self.model, "messages": messages});
        if let Some(t) = request.params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = request.params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Attempt {
        let sent = self.client.post(&self.endpoint).bearer_auth(&self.api_key).json(body).send();
        let resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts, message: e.to_string() }),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(LlmError::Auth { status }),
            429 => return Attempt::Retry(LlmError::RateLimited { attempts }),
            500..=599 => {
                return Attempt::Retry(LlmError::Transport { attempts, message: format!("HTTP {status}") })
            }
            _ => {
                let text = resp.text().unwrap_or_default();
                return Attempt::Fail(LlmError::Transport {
                    attempts,
                    message: format!("HTTP {status}: {}", preview(&text)),
                });
            }
        }
        let parsed: Value = match resp.json() {
            Ok(v) => v,
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts, message: e.to_string() }),
        };
        let Some(text) = parsed.pointer("/choices/0/message/content").and_then(Value::as_str) else {
            return Attempt::Fail(LlmError::Transport {
                attempts,
                message: "response has no choices[0].message.content".into(),
            });
        };
        let usage = parsed.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Attempt::Done(ChatResponse { text: text.to_string(), usage, backend_id: self.id.clone() })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.user_text.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let body = self.body(request);
        let mut rng = rand::thread_rng();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempts > self.retry.budget => return Err(e),
                Attempt::Retry(_) => std::thread::sleep(self.retry.delay(attempts - 1, &mut rng)),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    One(String),
    All(Vec<String>),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::One(s) => text.contains(s.as_str()),
            Matcher::All(v) => v.iter().all(|s| text.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    /// The entry is skipped when any of these substrings occur.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excludes: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "yes")]
    pub strict: bool,
    /// Reply for unmatched requests in non-strict mode.
    #[serde(default)]
    pub fallback: String,
    pub entries: Vec<ScriptEntry>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    /// Index of the script entry that answered, `None` for the fallback.
    pub entry: Option<usize>,
    pub preview: String,
}

/// Deterministic backend: the first entry whose matcher fires on the
/// request's `user_text` answers it.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    log: Mutex<Vec<CallRecord>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend { script, log: Mutex::new(Vec::new()) }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::Script { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let script = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    fn lookup(&self, text: &str) -> Option<usize> {
        self.script
            .entries
            .iter()
            .position(|e| e.matcher.matches(text) && !e.excludes.iter().any(|x| text.contains(x.as_str())))
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.user_text.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let hit = self.lookup(&request.user_text);
        let text = match hit {
            Some(i) => self.script.entries[i].response.clone(),
            None if self.script.strict => {
                return Err(LlmError::ScriptMiss { preview: preview(&request.user_text) });
            }
            None => self.script.fallback.clone(),
        };
        self.log.lock().unwrap().push(CallRecord { entry: hit, preview: preview(&request.user_text) });
        Ok(ChatResponse { text, usage: None, backend_id: self.id().to_string() })
    }
}

// ---------------------------------------------------------------------------
// Tracing

/// Appends one JSON line per call (request plus response or error).
pub struct Traced<B> {
    inner: B,
    sink: Mutex<File>,
    path: PathBuf,
}

impl<B: Backend> Traced<B> {
    pub fn create(inner: B, path: &Path) -> std::io::Result<Self> {
        let sink = File::create(path)?;
        Ok(Traced { inner, sink: Mutex::new(sink), path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for Traced<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let result = self.inner.complete(request);
        let line = match &result {
            Ok(r) => json!({"request": request, "response": r}),
            Err(e) => json!({"request": request, "error": {"kind": e.kind(), "message": e.to_string()}}),
        };
        let mut sink = self.sink.lock().unwrap();
        // trace output is diagnostic only
        let _ = writeln!(sink, "{line}");
        result
    }
}

// ---------------------------------------------------------------------------
// Structured output

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LadderStep {
    WholeText,
    StrippedFences,
    BalancedObject,
}

impl LadderStep {
    pub fn number(self) -> u8 {
        match self {
            LadderStep::WholeText => 1,
            LadderStep::StrippedFences => 2,
            LadderStep::BalancedObject => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structured {
    pub value: Map<String, Value>,
    pub step: LadderStep,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("no structured payload found in model output ({} chars)", raw.len())]
pub struct NoStructuredPayload {
    pub raw: String,
}

fn as_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

/// Contents of the first fenced code block, if any.
fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // skip the info string (e.g. `json`) up to the end of the line
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Byte range of the balanced `{...}` starting at `start`, string-aware.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_balanced_object(text: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(off) = text[from..].find('{') {
        let start = from + off;
        let end = balanced_end(text, start)?;
        if let Some(m) = as_object(&text[start..end]) {
            return Some(m);
        }
        from = start + 1;
    }
    None
}

/// Recovers one JSON object from model text. Tries, in order: the whole
/// text, the first fenced block, the first balanced top-level object.
pub fn extract_structured(text: &str) -> Result<Structured, NoStructuredPayload> {
    if let Some(value) = as_object(text) {
        return Ok(Structured { value, step: LadderStep::WholeText });
    }
    if let Some(value) = fenced_block(text).and_then(as_object) {
        return Ok(Structured { value, step: LadderStep::StrippedFences });
    }
    if let Some(value) = first_balanced_object(text) {
        return Ok(Structured { value, step: LadderStep::BalancedObject });
    }
    Err(NoStructuredPayload { raw: text.to_string() })
}
