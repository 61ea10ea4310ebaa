use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, Backend, ChatRequest};
use crate::error::{Error, Result};

/// Returned when no rule matches a prompt.
pub const UNMATCHED: &str = "UNMATCHED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    /// `match` is a substring of the prompt.
    Substring,
    /// `match` is the hex SHA-256 of the prompt.
    Hash,
}

/// A scripted response.
///
/// The prompt is `system_instruction + "\n\n" + user_content`. When `system`
/// is set the rule additionally requires the system instruction to contain it,
/// which lets a rule target one prompt kind for one conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub kind: MatchKind,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl MockRule {
    pub fn new(kind: MatchKind, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            kind,
            response: response.into(),
            system: None,
        }
    }

    pub fn for_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    fn matches(&self, request: &ChatRequest, prompt: &str, prompt_hash: &str) -> bool {
        if let Some(sys) = &self.system {
            if !request.system_instruction.contains(sys.as_str()) {
                return false;
            }
        }
        match self.kind {
            MatchKind::Substring => prompt.contains(self.pattern.as_str()),
            MatchKind::Hash => prompt_hash.eq_ignore_ascii_case(&self.pattern),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRuleFile {
    pub rules: Vec<MockRule>,
}

pub fn load_mock_rules(path: &Path) -> Result<MockRuleFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Deterministic backend answering from registered rules. Later rules shadow
/// earlier ones.
#[derive(Debug, Default)]
pub struct MockBackend {
    rules: RwLock<Vec<MockRule>>,
    unmatched: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(rules: impl IntoIterator<Item = MockRule>) -> Self {
        let mock = Self::new();
        for r in rules {
            mock.register(r);
        }
        mock
    }

    pub fn register(&self, rule: MockRule) {
        self.rules.write().expect("mock rules poisoned").push(rule);
    }

    /// Number of prompts that fell through to [`UNMATCHED`].
    pub fn unmatched_count(&self) -> usize {
        self.unmatched.load(Ordering::Relaxed)
    }

    pub fn respond(&self, request: &ChatRequest) -> String {
        let prompt = request.prompt();
        let hash = sha256_hex(prompt.as_bytes());
        let rules = self.rules.read().expect("mock rules poisoned");
        match rules.iter().rev().find(|r| r.matches(request, &prompt, &hash)) {
            Some(rule) => rule.response.clone(),
            None => {
                self.unmatched.fetch_add(1, Ordering::Relaxed);
                let head: String = request.user_content.chars().take(60).collect();
                log::warn!("mock backend: no rule matched prompt starting {head:?}");
                UNMATCHED.to_string()
            }
        }
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        let rules = self.rules.read().expect("mock rules poisoned");
        let material = serde_json::to_vec(&*rules).expect("rules serialize");
        format!("mock:{}", &sha256_hex(&material)[..16])
    }

    fn generate(&self, request: &ChatRequest) -> Result<String> {
        Ok(self.respond(request))
    }

    fn as_mock(&self) -> Option<&MockBackend> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GenerationConfig};
    use crate::prompts::TS_INSTRUCTION;

    fn ts_request(user: &str) -> ChatRequest {
        ChatRequest::new(TS_INSTRUCTION, user, GenerationConfig::default())
    }

    #[test]
    fn substring_routes_any_ts_prompt() {
        let gw = Gateway::mock();
        gw.register_mock(MatchKind::Substring, "new question continues the discussion", "new_topic")
            .unwrap();
        assert_eq!(gw.complete(&ts_request("New question: a")).unwrap().text, "new_topic");
        assert_eq!(gw.complete(&ts_request("New question: b")).unwrap().text, "new_topic");
    }

    #[test]
    fn latest_rule_wins() {
        let gw = Gateway::mock();
        gw.register_mock(MatchKind::Substring, "New question", "first").unwrap();
        gw.register_mock(MatchKind::Substring, "New question", "second").unwrap();
        assert_eq!(gw.complete(&ts_request("New question: a")).unwrap().text, "second");
    }

    #[test]
    fn unmatched_fallback_is_counted() {
        let mock = MockBackend::new();
        assert_eq!(mock.respond(&ts_request("x")), UNMATCHED);
        assert_eq!(mock.unmatched_count(), 1);
    }

    #[test]
    fn system_filter_narrows_rule() {
        let mock = MockBackend::with_rules([
            MockRule::new(MatchKind::Substring, "third one", "qd answer").for_system("rewrite the question"),
        ]);
        assert_eq!(mock.respond(&ts_request("the third one")), UNMATCHED);
        let qd = ChatRequest::new(crate::prompts::QD_INSTRUCTION, "the third one", GenerationConfig::default());
        assert_eq!(mock.respond(&qd), "qd answer");
    }

    #[test]
    fn backend_id_tracks_rules() {
        let mock = MockBackend::new();
        let before = mock.id();
        mock.register(MockRule::new(MatchKind::Substring, "a", "b"));
        assert_ne!(before, mock.id());
    }

    #[test]
    fn rule_file_schema() {
        let text = r#"{"rules": [{"match": "abc", "kind": "substring", "response": "x"},
                                {"match": "00ff", "kind": "hash", "response": "y", "system": "Given"}]}"#;
        let parsed: MockRuleFile = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.rules.len(), 2);
        assert_eq!(parsed.rules[1].kind, MatchKind::Hash);
        assert_eq!(parsed.rules[1].system.as_deref(), Some("Given"));
    }
}
