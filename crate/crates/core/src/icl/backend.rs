use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{Label, LabelSpace};
use crate::error::{Error, Result};

use super::parse::parse_label;

/// Sampling temperature for every request: greedy decoding.
pub const TEMPERATURE: f64 = 0.0;

/// Environment variable holding the bearer token for [`HttpBackend`].
pub const API_KEY_ENV: &str = "LEWIDI_API_KEY";

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, max_tokens: u32) -> Self {
        CompletionRequest {
            model: model.into(),
            prompt: prompt.into(),
            max_tokens,
        }
    }

    pub fn temperature(&self) -> f64 {
        TEMPERATURE
    }

    /// Content address of the request in the response cache.
    pub fn cache_key(&self) -> String {
        let material = json!([self.model, self.prompt, self.temperature()]);
        sha256_hex(&material.to_string())
    }

    /// Chat-completions request body.
    pub fn to_wire(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature(),
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub raw: String,
    pub latency: Duration,
    pub cache_hit: bool,
}

impl CompletionResult {
    /// `None` marks a parse failure.
    pub fn parsed(&self, space: &LabelSpace) -> Option<Label> {
        parse_label(&self.raw, space)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: transport failure, rate limit, server error.
    Transient(String),
    Auth(String),
    Rejected { status: u16, body: String },
    Malformed(String),
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError>;
}

impl<F> Backend for F
where
    F: Fn(&CompletionRequest) -> std::result::Result<String, BackendError> + Send + Sync,
{
    fn send(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        self(request)
    }
}

#[derive(Deserialize)]
struct ScriptRow {
    prompt_hash: String,
    completion: String,
}

/// Answers from a table keyed by the SHA-256 hex digest of the prompt.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: HashMap<String, String>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: HashMap<String, String>) -> Self {
        MockBackend {
            script,
            ..Default::default()
        }
    }

    pub fn with_default(mut self, completion: impl Into<String>) -> Self {
        self.default = Some(completion.into());
        self
    }

    pub fn insert_prompt(&mut self, prompt: &str, completion: impl Into<String>) {
        self.script.insert(sha256_hex(prompt), completion.into());
    }

    /// Reads `{"prompt_hash", "completion"}` JSONL.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut script = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ScriptRow = serde_json::from_str(line).map_err(|e| Error::Schema {
                file: path.display().to_string(),
                line: n + 1,
                field: "prompt_hash/completion".into(),
                message: e.to_string(),
            })?;
            script.insert(row.prompt_hash, row.completion);
        }
        Ok(MockBackend::new(script))
    }

    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<&String> = self.script.keys().collect();
        keys.sort();
        keys.into_iter()
            .map(|k| json!({"prompt_hash": k, "completion": self.script[k]}).to_string() + "\n")
            .collect()
    }

    /// Number of requests answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = sha256_hex(&request.prompt);
        self.script
            .get(&hash)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::Malformed(format!("no scripted completion for prompt {hash}")))
    }
}

/// Chat-completions client for any server that accepts a single user
/// message and returns `choices[0].message.content`.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    /// Takes the credential from [`API_KEY_ENV`] when set.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        HttpBackend::new(endpoint, key, timeout)
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send(request.to_wire().to_string())
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {body}"))),
            408 | 429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {body}"))),
            _ => return Err(BackendError::Rejected { status, body }),
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Malformed(format!("no choices[0].message.content in {body}")))
    }
}

/// Content-addressed response store. Writes go through a temporary file and
/// an atomic rename, so concurrent readers never observe partial entries.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    temperature: f64,
    prompt_sha256: String,
    completion: String,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, request: &CompletionRequest) -> Result<Option<String>> {
        let path = self.path(&request.cache_key());
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
        Ok(Some(entry.completion))
    }

    pub fn put(&self, request: &CompletionRequest, completion: &str) -> Result<()> {
        let entry = CacheEntry {
            model: request.model.clone(),
            temperature: request.temperature(),
            prompt_sha256: sha256_hex(&request.prompt),
            completion: completion.to_owned(),
        };
        let path = self.path(&request.cache_key());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(serde_json::to_string(&entry)?.as_bytes())
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    /// Delay before the first retry; doubles each time.
    #[serde(with = "millis")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Cache lookup, then the backend with exponential-backoff retries on
/// transient failures. Successful completions are written to the cache.
pub fn complete(
    request: &CompletionRequest,
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
    retry: &RetryPolicy,
) -> Result<CompletionResult> {
    let start = Instant::now();
    if let Some(cache) = cache {
        if let Some(raw) = cache.get(request)? {
            return Ok(CompletionResult {
                raw,
                latency: start.elapsed(),
                cache_hit: true,
            });
        }
    }
    let mut attempt = 0;
    let raw = loop {
        match backend.send(request) {
            Ok(raw) => break raw,
            Err(BackendError::Transient(msg)) => {
                if attempt >= retry.max_retries {
                    return Err(Error::RetriesExhausted {
                        attempts: attempt + 1,
                        last: msg,
                    });
                }
                let factor = 1u32.checked_shl(attempt as u32).unwrap_or(u32::MAX);
                std::thread::sleep(retry.base_delay.saturating_mul(factor));
                attempt += 1;
            }
            Err(BackendError::Auth(msg)) => return Err(Error::Auth(msg)),
            Err(BackendError::Rejected { status, body }) => return Err(Error::Rejected { status, body }),
            Err(BackendError::Malformed(msg)) => return Err(Error::MalformedResponse(msg)),
        }
    };
    if let Some(cache) = cache {
        cache.put(request, &raw)?;
    }
    Ok(CompletionResult {
        raw,
        latency: start.elapsed(),
        cache_hit: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_wait(max_retries: usize) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    #[test]
    fn mock_then_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let mut mock = MockBackend::default();
        mock.insert_prompt("p", "[Label]: 4");
        let req = CompletionRequest::new("m", "p", 8);
        let first = complete(&req, &mock, Some(&cache), &no_wait(0)).unwrap();
        let second = complete(&req, &mock, Some(&cache), &no_wait(0)).unwrap();
        assert!(!first.cache_hit);
        assert!(second.cache_hit);
        assert_eq!(first.raw, second.raw);
        assert_eq!(mock.calls(), 1);
        assert_eq!(first.parsed(&LabelSpace::ordinal(1, 6).unwrap()), Some(Label::Class(3)));
    }

    #[test]
    fn cache_key_separates_models() {
        let a = CompletionRequest::new("m1", "p", 8);
        let b = CompletionRequest::new("m2", "p", 8);
        assert_ne!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key(), CompletionRequest::new("m1", "p", 99).cache_key());
    }

    #[test]
    fn three_transient_failures_exhaust_two_retries() {
        let seen = AtomicUsize::new(0);
        let failing = |_: &CompletionRequest| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Transient("HTTP 503".into()))
        };
        let err = complete(&CompletionRequest::new("m", "p", 1), &failing, None, &no_wait(2)).unwrap_err();
        assert!(matches!(err, Error::RetriesExhausted { attempts: 3, .. }), "{err}");
        assert_eq!(seen.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_within_retry_budget() {
        let seen = AtomicUsize::new(0);
        let flaky = |_: &CompletionRequest| {
            if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transient("reset".into()))
            } else {
                Ok("2".to_string())
            }
        };
        let out = complete(&CompletionRequest::new("m", "p", 1), &flaky, None, &no_wait(2)).unwrap();
        assert_eq!(out.raw, "2");
    }

    #[test]
    fn errors_are_distinct() {
        let req = CompletionRequest::new("m", "p", 1);
        let auth = |_: &CompletionRequest| Err(BackendError::Auth("401".into()));
        let bad = |_: &CompletionRequest| Err(BackendError::Malformed("{}".into()));
        assert!(matches!(complete(&req, &auth, None, &no_wait(5)), Err(Error::Auth(_))));
        assert!(matches!(complete(&req, &bad, None, &no_wait(5)), Err(Error::MalformedResponse(_))));
    }

    #[test]
    fn unscripted_prompt_without_default_is_malformed() {
        let mock = MockBackend::default();
        let req = CompletionRequest::new("m", "p", 1);
        assert!(matches!(complete(&req, &mock, None, &no_wait(0)), Err(Error::MalformedResponse(_))));
        let mock = MockBackend::default().with_default("x");
        assert_eq!(complete(&req, &mock, None, &no_wait(0)).unwrap().raw, "x");
    }

    #[test]
    fn script_file_round_trip() {
        let mut mock = MockBackend::default();
        mock.insert_prompt("a", "1");
        mock.insert_prompt("b", "2");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(&path, mock.to_jsonl()).unwrap();
        let back = MockBackend::from_file(&path).unwrap();
        assert_eq!(back.send(&CompletionRequest::new("m", "b", 1)).unwrap(), "2");
    }
}
