//! Chat-completion boundary.
//!
//! Everything that talks to a language model goes through [`ChatBackend`].
//! Implementations here: an OpenAI-compatible HTTP client, a rule-driven
//! scripted backend for tests and offline runs, a cassette wrapper that
//! records or replays responses keyed by request hash, and a limiter that
//! bounds in-flight requests.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{endpoint, HttpError, JsonClient, RetryPolicy};

pub const API_KEY_ENV: &str = "SEMIQA_API_KEY";
pub const API_BASE_ENV: &str = "SEMIQA_API_BASE";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("cassette miss for request {hash}")]
    CassetteMiss { hash: String },
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

impl ChatRequest {
    /// Single user turn at temperature 0.
    pub fn prompt(model: &str, prompt: impl Into<String>) -> Self {
        Self {
            system: String::new(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: 512,
            model: model.to_string(),
        }
    }

    /// System text followed by every message body, newline separated. This
    /// is what scripted rules match against.
    pub fn rendered(&self) -> String {
        let mut out = self.system.clone();
        for m in &self.messages {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&m.content);
        }
        out
    }

    /// SHA-256 over system, messages, model and temperature only.
    pub fn hash(&self) -> String {
        let canonical = json!({
            "system": self.system,
            "messages": self.messages,
            "model": self.model,
            "temperature": self.temperature,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("negative temperature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        (**self).complete(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone)]
pub enum RuleMatcher {
    Substring(String),
    Pattern(Regex),
}

impl RuleMatcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            RuleMatcher::Substring(s) => prompt.contains(s.as_str()),
            RuleMatcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: RuleMatcher,
    pub response: String,
}

/// Rule file line: `{"contains": "...", "response": "..."}` or
/// `{"pattern": "...", "response": "..."}`; a line with only `default` sets
/// the fallback response.
#[derive(Debug, Deserialize)]
struct RuleRecord {
    contains: Option<String>,
    pattern: Option<String>,
    response: Option<String>,
    default: Option<String>,
}

/// First rule whose matcher accepts the rendered prompt wins; otherwise the
/// default response.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    default_response: String,
}

impl ScriptedBackend {
    pub fn new(default_response: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_response: default_response.into(),
        }
    }

    pub fn when_contains(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            matcher: RuleMatcher::Substring(needle.into()),
            response: response.into(),
        });
        self
    }

    pub fn when_matches(mut self, pattern: Regex, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            matcher: RuleMatcher::Pattern(pattern),
            response: response.into(),
        });
        self
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, LlmError> {
        let mut backend = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let err = |message: String| LlmError::Cassette {
                path: "script".into(),
                message: format!("line {}: {message}", i + 1),
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RuleRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if let Some(d) = rec.default {
                backend.default_response = d;
                continue;
            }
            let response = rec.response.ok_or_else(|| err("missing response".into()))?;
            backend = match (rec.contains, rec.pattern) {
                (Some(c), None) => backend.when_contains(c, response),
                (None, Some(p)) => {
                    let re = Regex::new(&p).map_err(|e| err(e.to_string()))?;
                    backend.when_matches(re, response)
                }
                _ => return Err(err("exactly one of contains/pattern required".into())),
            };
        }
        Ok(backend)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        req.validate()?;
        let prompt = req.rendered();
        let response = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(&prompt))
            .map_or(&self.default_response, |r| &r.response);
        Ok(Completion::text(response.clone()))
    }
}

/// OpenAI-compatible `/v1/chat/completions` client.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    client: JsonClient,
    url: String,
}

impl RemoteBackend {
    pub fn new(base_url: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(policy, api_key),
            url: endpoint(base_url, "/v1/chat/completions"),
        }
    }

    /// Reads `SEMIQA_API_BASE` and `SEMIQA_API_KEY`.
    pub fn from_env(policy: RetryPolicy) -> Result<Self, LlmError> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| LlmError::InvalidRequest(format!("{API_BASE_ENV} is not set")))?;
        Ok(Self::new(&base, std::env::var(API_KEY_ENV).ok(), policy))
    }

    pub fn wire_body(req: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(req.messages.len() + 1);
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        messages.extend(req.messages.iter().map(|m| json!({"role": m.role, "content": m.content})));
        json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        req.validate()?;
        let value = self.client.post(&self.url, &Self::wire_body(req))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| LlmError::Response("missing choices[0].message.content".into()))?
            .to_string();
        let usage = value
            .get("usage")
            .and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
        Ok(Completion { text, usage })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    pub response: String,
}

enum CassetteMode<B> {
    Record { inner: B, file: Mutex<File> },
    Replay,
}

/// Record/replay wrapper. In record mode every new request hash is forwarded
/// to the inner backend and appended to the cassette; repeated hashes are
/// served from memory. In replay mode unknown hashes fail with
/// [`LlmError::CassetteMiss`].
pub struct Cassette<B> {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
    mode: CassetteMode<B>,
}

fn read_cassette(path: &Path) -> Result<HashMap<String, String>, LlmError> {
    let err = |message: String| LlmError::Cassette {
        path: path.display().to_string(),
        message,
    };
    let mut entries = HashMap::new();
    if !path.exists() {
        return Ok(entries);
    }
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry =
            serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        entries.entry(entry.request_hash).or_insert(entry.response);
    }
    Ok(entries)
}

impl<B: ChatBackend> Cassette<B> {
    pub fn record(inner: B, path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        let entries = read_cassette(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::Cassette {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            mode: CassetteMode::Record {
                inner,
                file: Mutex::new(file),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Placeholder inner backend for replay-only cassettes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Offline;

impl ChatBackend for Offline {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        Err(LlmError::CassetteMiss { hash: req.hash() })
    }
}

impl Cassette<Offline> {
    pub fn replay(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        if !path.exists() {
            return Err(LlmError::Cassette {
                path: path.display().to_string(),
                message: "not found".into(),
            });
        }
        let entries = read_cassette(&path)?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            mode: CassetteMode::Replay,
        })
    }
}

impl<B: ChatBackend> ChatBackend for Cassette<B> {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        let hash = req.hash();
        if let Some(text) = self.entries.lock().expect("cassette lock").get(&hash) {
            return Ok(Completion::text(text.clone()));
        }
        match &self.mode {
            CassetteMode::Replay => Err(LlmError::CassetteMiss { hash }),
            CassetteMode::Record { inner, file } => {
                let completion = inner.complete(req)?;
                let entry = CassetteEntry {
                    request_hash: hash.clone(),
                    response: completion.text.clone(),
                };
                let line = serde_json::to_string(&entry).expect("entry serializes");
                {
                    let mut f = file.lock().expect("cassette file lock");
                    writeln!(f, "{line}")
                        .and_then(|_| f.flush())
                        .map_err(|e| LlmError::Cassette {
                            path: self.path.display().to_string(),
                            message: e.to_string(),
                        })?;
                }
                self.entries
                    .lock()
                    .expect("cassette lock")
                    .entry(hash)
                    .or_insert(completion.text.clone());
                Ok(completion)
            }
        }
    }
}

/// Bounds the number of concurrent `complete` calls on the inner backend.
pub struct Limited<B> {
    inner: B,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B> Limited<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Self {
            inner,
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Limited<B> {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        {
            let mut n = self.in_flight.lock().expect("limiter lock");
            while *n >= self.limit {
                n = self.freed.wait(n).expect("limiter lock");
            }
            *n += 1;
        }
        let out = self.inner.complete(req);
        *self.in_flight.lock().expect("limiter lock") -= 1;
        self.freed.notify_one();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn scripted_first_rule_wins_then_default() {
        let b = ScriptedBackend::new("fallback")
            .when_contains("Topic Node: [Ada]", "Thought 1: look\nAction 1: Search[Ada]")
            .when_contains("Ada", "second");
        let r = b.complete(&ChatRequest::prompt("m", "Question: q\nTopic Node: [Ada]")).unwrap();
        assert_eq!(r.text, "Thought 1: look\nAction 1: Search[Ada]");
        let r = b.complete(&ChatRequest::prompt("m", "nothing")).unwrap();
        assert_eq!(r.text, "fallback");
    }

    #[test]
    fn scripted_rules_load_from_jsonl() {
        let src = "{\"contains\":\"x\",\"response\":\"X\"}\n{\"pattern\":\"^y+$\",\"response\":\"Y\"}\n{\"default\":\"D\"}\n";
        let b = ScriptedBackend::from_jsonl(src.as_bytes()).unwrap();
        assert_eq!(b.complete(&ChatRequest::prompt("m", "axb")).unwrap().text, "X");
        assert_eq!(b.complete(&ChatRequest::prompt("m", "yyy")).unwrap().text, "Y");
        assert_eq!(b.complete(&ChatRequest::prompt("m", "z")).unwrap().text, "D");
        assert!(ScriptedBackend::from_jsonl("{\"response\":\"r\"}".as_bytes()).is_err());
    }

    #[test]
    fn hash_covers_only_system_messages_model_temperature() {
        let a = ChatRequest::prompt("m", "hello");
        let mut b = a.clone();
        b.max_tokens = 7;
        assert_eq!(a.hash(), b.hash());
        b.temperature = 0.5;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.model = "other".into();
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.system = "s".into();
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn empty_messages_rejected() {
        let mut r = ChatRequest::prompt("m", "x");
        r.messages.clear();
        assert!(ScriptedBackend::new("d").complete(&r).is_err());
    }

    struct Counting {
        calls: AtomicUsize,
    }

    impl ChatBackend for Counting {
        fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(Completion::text(format!("echo:{}", req.rendered())))
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let inner = Counting {
            calls: AtomicUsize::new(0),
        };
        let rec = Cassette::record(&inner, &path).unwrap();
        let req = ChatRequest::prompt("m", "one");
        let first = rec.complete(&req).unwrap();
        let again = rec.complete(&req).unwrap();
        assert_eq!(first.text, again.text);
        assert_eq!(inner.calls.load(Ordering::SeqCst), 1);
        drop(rec);

        let replay = Cassette::replay(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap().text, "echo:one");
        let miss = replay.complete(&ChatRequest::prompt("m", "two")).unwrap_err();
        assert!(matches!(miss, LlmError::CassetteMiss { .. }), "{miss}");
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatBackend for Slow {
        fn complete(&self, _: &ChatRequest) -> Result<Completion, LlmError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(10));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(Completion::text(""))
        }
    }

    #[test]
    fn limiter_bounds_in_flight_requests() {
        let slow = Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let limited = Arc::new(Limited::new(slow, 2));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let l = Arc::clone(&limited);
                std::thread::spawn(move || l.complete(&ChatRequest::prompt("m", "x")).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(limited.inner.peak.load(Ordering::SeqCst) <= 2);
    }
}
