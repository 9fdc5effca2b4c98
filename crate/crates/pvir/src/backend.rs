//! Model-inference contract shared by grounding, reasoning, and synthesis,
//! with an HTTP implementation and a deterministic fixture-backed mock.
//!
//! Wire protocol: `POST /v1/generate` with the [`GenerateRequest`] JSON
//! body; response is [`GenerateResponse`] JSON. Media are referenced by URI
//! with time bounds; pixels never travel through the engine.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_FPS: f64 = 2.0;
pub const DEFAULT_MAX_PIXELS: u64 = 6400;
pub const ENV_BACKEND_URL: &str = "PVIR_BACKEND_URL";
pub const ENV_BACKEND_TIMEOUT_S: &str = "PVIR_BACKEND_TIMEOUT_S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRef {
    pub uri: String,
    pub start_s: f64,
    pub end_s: f64,
    pub fps: f64,
    pub max_pixels: u64,
}

impl MediaRef {
    pub fn new(uri: impl Into<String>, start_s: f64, end_s: f64) -> MediaRef {
        MediaRef {
            uri: uri.into(),
            start_s,
            end_s,
            fps: DEFAULT_FPS,
            max_pixels: DEFAULT_MAX_PIXELS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> GenerationParams {
        GenerationParams { temperature: 0.0, max_tokens: 4096, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model_id: String,
    pub prompt_text: String,
    pub media: Vec<MediaRef>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend timeout (request {fingerprint})")]
    Timeout { fingerprint: String },
    #[error("protocol error (request {fingerprint}): {reason}")]
    Protocol { fingerprint: String, reason: String },
    #[error("no fixture for request {fingerprint}")]
    NoFixture { fingerprint: String },
}

impl BackendError {
    pub fn fingerprint(&self) -> &str {
        match self {
            BackendError::Timeout { fingerprint }
            | BackendError::Protocol { fingerprint, .. }
            | BackendError::NoFixture { fingerprint } => fingerprint,
        }
    }
}

/// Stable hex digest of a request's semantic content: prompt text plus the
/// ordered media (uri, start, end). Generation params are excluded so
/// fixtures survive parameter tweaks; media order is significant because
/// temporal serialization makes it semantic.
pub fn fingerprint(request: &GenerateRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.prompt_text.as_bytes());
    for m in &request.media {
        hasher.update(b"\x1f");
        hasher.update(m.uri.as_bytes());
        hasher.update(format!("|{}|{}", m.start_s, m.end_s).as_bytes());
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

impl GenerateRequest {
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, BackendError>;
}

/// One scripted mock step, consumed in order per fingerprint.
#[derive(Debug, Clone)]
pub enum MockStep {
    Timeout,
    Text(String),
}

/// Deterministic fixture-backed mock. A plain fixture is referentially
/// transparent: same fingerprint, same response, forever. Scripted
/// sequences exist for retry tests and take priority over fixtures.
#[derive(Default)]
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    scripts: Mutex<BTreeMap<String, Vec<MockStep>>>,
    /// Steps consumed in order regardless of fingerprint; highest priority.
    /// Needed when a retry loop mutates the prompt between attempts.
    global_script: Mutex<Vec<MockStep>>,
    calls: Mutex<u64>,
}

impl MockBackend {
    pub fn new() -> MockBackend {
        MockBackend::default()
    }

    /// Maps the fingerprint of `request_like` to `response_text`.
    pub fn with_fixture(mut self, request_like: &GenerateRequest, response_text: &str) -> Self {
        self.fixtures.insert(fingerprint(request_like), response_text.to_string());
        self
    }

    pub fn insert_fixture(&mut self, fp: String, response_text: String) {
        self.fixtures.insert(fp, response_text);
    }

    /// Loads `{fingerprint}.txt` fixture files from a directory. An optional
    /// `index.json` mapping human names to fingerprints is tolerated and
    /// ignored for lookup (it exists for fixture hygiene).
    pub fn from_dir(dir: &Path) -> std::io::Result<MockBackend> {
        let mut backend = MockBackend::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    let text = std::fs::read_to_string(&path)?;
                    backend.fixtures.insert(stem.to_string(), text);
                }
            }
        }
        Ok(backend)
    }

    /// Queues a scripted step sequence for one fingerprint.
    pub fn script(&self, fp: &str, steps: Vec<MockStep>) {
        self.scripts.lock().unwrap().insert(fp.to_string(), steps);
    }

    /// Queues steps answered to *any* request, in order, before fixture
    /// lookup.
    pub fn script_any(&self, steps: Vec<MockStep>) {
        self.global_script.lock().unwrap().extend(steps);
    }

    pub fn call_count(&self) -> u64 {
        *self.calls.lock().unwrap()
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        *self.calls.lock().unwrap() += 1;
        let fp = fingerprint(request);

        let mut global = self.global_script.lock().unwrap();
        if !global.is_empty() {
            return match global.remove(0) {
                MockStep::Timeout => Err(BackendError::Timeout { fingerprint: fp }),
                MockStep::Text(text) => Ok(GenerateResponse {
                    text,
                    finish_reason: FinishReason::Stop,
                    latency_ms: 0,
                }),
            };
        }
        drop(global);

        let mut scripts = self.scripts.lock().unwrap();
        if let Some(steps) = scripts.get_mut(&fp) {
            if !steps.is_empty() {
                return match steps.remove(0) {
                    MockStep::Timeout => Err(BackendError::Timeout { fingerprint: fp }),
                    MockStep::Text(text) => Ok(GenerateResponse {
                        text,
                        finish_reason: FinishReason::Stop,
                        latency_ms: 0,
                    }),
                };
            }
        }
        drop(scripts);

        match self.fixtures.get(&fp) {
            Some(text) => Ok(GenerateResponse {
                text: text.clone(),
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
            }),
            None => Err(BackendError::NoFixture { fingerprint: fp }),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub bearer_token: Option<String>,
    pub max_concurrency: usize,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            bearer_token: None,
            max_concurrency: 4,
        }
    }

    /// Reads `PVIR_BACKEND_URL` and `PVIR_BACKEND_TIMEOUT_S`.
    pub fn from_env() -> Option<HttpBackendConfig> {
        let url = std::env::var(ENV_BACKEND_URL).ok()?;
        let mut cfg = HttpBackendConfig::new(url);
        if let Ok(t) = std::env::var(ENV_BACKEND_TIMEOUT_S) {
            if let Ok(secs) = t.parse::<f64>() {
                cfg.timeout = Duration::from_secs_f64(secs);
            }
        }
        Some(cfg)
    }
}

/// HTTP backend with bounded retries and geometric backoff on transient
/// failures (timeouts and 5xx).
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> HttpBackend {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("http client builds");
        let semaphore = Semaphore::new(config.max_concurrency.max(1));
        HttpBackend { config, client, semaphore }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/generate", self.config.base_url.trim_end_matches('/'))
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        let _permit = self.semaphore.acquire();
        let fp = fingerprint(request);
        let mut backoff = self.config.initial_backoff;
        let mut last_error = BackendError::Timeout { fingerprint: fp.clone() };

        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let mut builder = self.client.post(self.endpoint()).json(request);
            if let Some(token) = &self.config.bearer_token {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Err(e) if e.is_timeout() => {
                    last_error = BackendError::Timeout { fingerprint: fp.clone() };
                }
                Err(e) => {
                    last_error = BackendError::Protocol {
                        fingerprint: fp.clone(),
                        reason: e.to_string(),
                    };
                    // Connection-level failures are treated as transient.
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_error = BackendError::Protocol {
                            fingerprint: fp.clone(),
                            reason: format!("server error {status}"),
                        };
                        continue;
                    }
                    if !status.is_success() {
                        return Err(BackendError::Protocol {
                            fingerprint: fp,
                            reason: format!("unexpected status {status}"),
                        });
                    }
                    return resp.json::<GenerateResponse>().map_err(|e| BackendError::Protocol {
                        fingerprint: fp.clone(),
                        reason: format!("malformed response: {e}"),
                    });
                }
            }
        }
        Err(last_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str, media: Vec<MediaRef>) -> GenerateRequest {
        GenerateRequest {
            model_id: "m".into(),
            prompt_text: prompt.into(),
            media,
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn fingerprint_is_deterministic() {
        let r = request("hello", vec![MediaRef::new("u", 0.0, 1.0)]);
        assert_eq!(fingerprint(&r), fingerprint(&r.clone()));
    }

    #[test]
    fn fingerprint_sensitive_to_prompt_and_media_order() {
        let r1 = request("hello", vec![MediaRef::new("u", 0.0, 1.0)]);
        let r2 = request("hellp", vec![MediaRef::new("u", 0.0, 1.0)]);
        assert_ne!(fingerprint(&r1), fingerprint(&r2));

        let m = vec![MediaRef::new("a", 0.0, 1.0), MediaRef::new("b", 0.0, 1.0)];
        let mut rev = m.clone();
        rev.reverse();
        assert_ne!(
            fingerprint(&request("p", m)),
            fingerprint(&request("p", rev))
        );
    }

    #[test]
    fn fingerprint_insensitive_to_params() {
        let mut r1 = request("p", vec![]);
        let mut r2 = r1.clone();
        r1.params.temperature = 0.0;
        r2.params.temperature = 1.0;
        r2.params.seed = 99;
        assert_eq!(fingerprint(&r1), fingerprint(&r2));
    }

    #[test]
    fn mock_returns_fixture() {
        let r = request("what happened?", vec![]);
        let mock = MockBackend::new().with_fixture(&r, "a collision");
        let resp = mock.generate(&r).unwrap();
        assert_eq!(resp.text, "a collision");
        assert_eq!(resp.finish_reason, FinishReason::Stop);
        // Referential transparency.
        assert_eq!(mock.generate(&r).unwrap().text, "a collision");
    }

    #[test]
    fn mock_no_fixture_errors() {
        let mock = MockBackend::new();
        let err = mock.generate(&request("p", vec![])).unwrap_err();
        assert!(matches!(err, BackendError::NoFixture { .. }));
    }

    #[test]
    fn mock_script_fail_then_succeed() {
        let r = request("p", vec![]);
        let mock = MockBackend::new();
        mock.script(
            &fingerprint(&r),
            vec![MockStep::Timeout, MockStep::Text("ok".into())],
        );
        assert!(matches!(
            mock.generate(&r),
            Err(BackendError::Timeout { .. })
        ));
        assert_eq!(mock.generate(&r).unwrap().text, "ok");
        assert_eq!(mock.call_count(), 2);
    }
}
