//! Chat-completion access for every stage that talks to a language model.
//!
//! A [`Gateway`] wraps one [`Backend`] (remote HTTP endpoint or the scripted
//! [`MockBackend`]) with an optional on-disk [`ResponseCache`], a bound on
//! in-flight requests and a call log. No other module performs network I/O
//! for chat completions.

mod cache;
mod http;
mod mock;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::ResponseCache;
pub use http::{post_json, HttpBackend, HttpSettings, RetryPolicy};
pub use mock::{load_mock_rules, MatchKind, MockBackend, MockRule, MockRuleFile, UNMATCHED};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_new_tokens: 32,
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Invalid(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Invalid("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_instruction: String,
    pub user_content: String,
    pub config: GenerationConfig,
}

impl ChatRequest {
    pub fn new(system_instruction: impl Into<String>, user_content: impl Into<String>, config: GenerationConfig) -> Self {
        Self {
            system_instruction: system_instruction.into(),
            user_content: user_content.into(),
            config,
        }
    }

    /// The single string mock rules are matched against.
    pub fn prompt(&self) -> String {
        format!("{}\n\n{}", self.system_instruction, self.user_content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
}

pub trait Backend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> String;

    fn generate(&self, request: &ChatRequest) -> Result<String>;

    fn as_mock(&self) -> Option<&MockBackend> {
        None
    }
}

/// One `complete` invocation, as seen by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub system_instruction: String,
    pub user_content: String,
    pub cached: bool,
}

struct Limiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    limiter: Limiter,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn mock() -> Self {
        Self::new(Box::new(MockBackend::new()))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.limiter = Limiter::new(limit);
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.config.validate()?;
        if request.user_content.trim().is_empty() {
            return Err(Error::Invalid("user_content is empty".into()));
        }
        let backend_id = self.backend.id();
        let key = self.cache.as_ref().map(|_| cache_key(&backend_id, request));

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(text) = cache.get_text(key) {
                self.record(request, true);
                return Ok(ChatResponse { text, backend_id, cached: true });
            }
        }

        let text = {
            let _permit = self.limiter.acquire();
            self.backend.generate(request)?
        };
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put_text(key, &backend_id, &text)?;
        }
        self.record(request, false);
        Ok(ChatResponse { text, backend_id, cached: false })
    }

    /// Adds a scripted response. Only valid on the mock backend.
    pub fn register_mock(&self, kind: MatchKind, pattern: impl Into<String>, response: impl Into<String>) -> Result<()> {
        let mock = self
            .backend
            .as_mock()
            .ok_or_else(|| Error::NotMock(self.backend.id()))?;
        mock.register(MockRule::new(kind, pattern, response));
        Ok(())
    }

    pub fn register_rule(&self, rule: MockRule) -> Result<()> {
        let mock = self
            .backend
            .as_mock()
            .ok_or_else(|| Error::NotMock(self.backend.id()))?;
        mock.register(rule);
        Ok(())
    }

    pub fn mock_backend(&self) -> Option<&MockBackend> {
        self.backend.as_mock()
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log poisoned").len()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("call log poisoned").clear();
    }

    fn record(&self, request: &ChatRequest, cached: bool) {
        self.log.lock().expect("call log poisoned").push(CallRecord {
            system_instruction: request.system_instruction.clone(),
            user_content: request.user_content.clone(),
            cached,
        });
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over every field that can change the model output.
pub fn cache_key(backend_id: &str, request: &ChatRequest) -> String {
    let material = serde_json::json!([
        "chat",
        backend_id,
        request.system_instruction,
        request.user_content,
        request.config.temperature,
        request.config.max_new_tokens,
        request.config.seed,
    ]);
    sha256_hex(material.to_string().as_bytes())
}

pub(crate) fn backoff(policy: &RetryPolicy, attempt: u32) -> Duration {
    policy.base_backoff.saturating_mul(1u32 << attempt.min(16))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("sys", user, GenerationConfig::default())
    }

    #[test]
    fn default_temperature() {
        assert_eq!(GenerationConfig::default().temperature, 0.7);
    }

    #[test]
    fn mock_lookup_then_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::mock().with_cache(ResponseCache::new(dir.path()).unwrap());
        let p = req("is this new?");
        gw.register_mock(MatchKind::Hash, sha256_hex(p.prompt().as_bytes()), "old_topic")
            .unwrap();
        let first = gw.complete(&p).unwrap();
        assert_eq!(first.text, "old_topic");
        assert!(!first.cached);
        let second = gw.complete(&p).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, first.text);
    }

    #[test]
    fn any_key_field_forces_a_miss() {
        let base = req("u");
        let k = cache_key("b", &base);
        let mut other = base.clone();
        other.config.temperature = 0.5;
        assert_ne!(k, cache_key("b", &other));
        let mut other = base.clone();
        other.config.seed = Some(1);
        assert_ne!(k, cache_key("b", &other));
        let mut other = base.clone();
        other.config.max_new_tokens = 7;
        assert_ne!(k, cache_key("b", &other));
        let mut other = base.clone();
        other.system_instruction.push('x');
        assert_ne!(k, cache_key("b", &other));
        assert_ne!(k, cache_key("c", &base));
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::mock();
        assert!(gw.complete(&req("  ")).is_err());
        let mut r = req("x");
        r.config.temperature = 3.0;
        assert!(gw.complete(&r).is_err());
        r.config.temperature = 0.7;
        r.config.max_new_tokens = 0;
        assert!(gw.complete(&r).is_err());
    }

    struct Slow {
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Arc<Slow> {
        fn id(&self) -> String {
            "slow".into()
        }
        fn generate(&self, _: &ChatRequest) -> Result<String> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(15));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_is_bounded() {
        let slow = Arc::new(Slow { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let gw = Gateway::new(Box::new(slow.clone())).with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&req(&format!("q{i}"))).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.call_count(), 8);
    }
}
