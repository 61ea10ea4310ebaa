use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{backoff, Backend, ChatRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_backoff: Duration::from_millis(250),
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
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpSettings {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn transient_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POSTs a JSON body, retrying transport failures and 429/5xx responses with
/// exponential backoff. Other non-2xx statuses fail immediately.
pub fn post_json(url: &str, api_key: Option<&str>, timeout: Duration, retry: &RetryPolicy, body: &Value) -> Result<Value> {
    let agent = agent(timeout);
    let attempts = retry.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(backoff(retry, attempt - 1));
        }
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body.to_string()) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("POST {url} attempt {} failed: {e}", attempt + 1);
                last = e.to_string();
                continue;
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if transient_status(status) && attempt + 1 < attempts {
            log::warn!("POST {url} attempt {} got status {status}", attempt + 1);
            continue;
        }
        if !(200..300).contains(&status) {
            return Err(Error::Status { status, body: text });
        }
        if text.trim().is_empty() {
            return Err(Error::EmptyResponse);
        }
        return serde_json::from_str(&text).map_err(|e| Error::Status {
            status,
            body: format!("unparseable body ({e}): {text}"),
        });
    }
    Err(Error::Transport { attempts, message: last })
}

/// Chat-completion endpoint speaking the common `messages`/`choices` protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    settings: HttpSettings,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Self {
        Self { settings }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.settings.model,
            "messages": [
                { "role": "system", "content": request.system_instruction },
                { "role": "user", "content": request.user_content },
            ],
            "temperature": request.config.temperature,
            "max_tokens": request.config.max_new_tokens,
        });
        if let Some(seed) = request.config.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.settings.url, self.settings.model)
    }

    fn generate(&self, request: &ChatRequest) -> Result<String> {
        let s = &self.settings;
        let resp = post_json(&s.url, s.api_key.as_deref(), s.timeout, &s.retry, &self.request_body(request))?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or(Error::EmptyResponse)
    }
}
