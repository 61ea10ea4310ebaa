//! History enhancement: question disambiguation (QD), response expansion (RE),
//! pseudo response (PR), topic switch (TS) and history summary (HS).
//!
//! Default policy, per session:
//!
//! 1. TS on the full history.
//! 2. Switched: keep only the last turn, then QD, RE, PR over it. No HS.
//! 3. Not switched: QD, RE, PR over the full history, then HS over the
//!    enhanced turns (last response replaced by the expansion).
//!
//! Each step issues at most one gateway call. A disabled step leaves its field
//! unset; the others run as if it never existed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConversationSession, ConversationTurn};
use crate::error::Result;
use crate::gateway::{ChatRequest, Gateway, GenerationConfig};
use crate::prompts::{render_context, render_pairs, PromptKind};
use crate::text::{truncate_front, INPUT_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhanceSteps {
    pub qd: bool,
    pub re: bool,
    pub pr: bool,
    pub ts: bool,
    pub hs: bool,
}

impl Default for EnhanceSteps {
    fn default() -> Self {
        Self { qd: true, re: true, pr: true, ts: true, hs: true }
    }
}

impl EnhanceSteps {
    pub fn without(mut self, kind: PromptKind) -> Self {
        match kind {
            PromptKind::Qd => self.qd = false,
            PromptKind::Re => self.re = false,
            PromptKind::Pr => self.pr = false,
            PromptKind::Ts => self.ts = false,
            PromptKind::Hs => self.hs = false,
            PromptKind::Cqr | PromptKind::Supervision => {}
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTokens {
    pub qd: u32,
    pub re: u32,
    pub pr: u32,
    pub ts: u32,
    pub hs: u32,
}

impl Default for StepTokens {
    fn default() -> Self {
        Self { qd: 64, re: 96, pr: 96, ts: 8, hs: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub steps: EnhanceSteps,
    pub max_new_tokens: StepTokens,
    pub generation: GenerationConfig,
    /// Substitute a fallback instead of failing when the gateway errors.
    pub fallback_on_error: bool,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            steps: EnhanceSteps::default(),
            max_new_tokens: StepTokens::default(),
            generation: GenerationConfig::default(),
            fallback_on_error: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStatus {
    Generated,
    /// The model output was unusable or the call failed; a fallback was used.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt: PromptKind,
    pub status: FieldStatus,
}

/// The enhanced history H′ of one evaluation turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedHistory {
    pub turns: Vec<ConversationTurn>,
    pub disambiguated_question: String,
    pub expanded_last_response: Option<String>,
    pub pseudo_response: Option<String>,
    pub summary: Option<String>,
    pub topic_switched: bool,
    pub provenance: BTreeMap<String, Provenance>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EnhancedHistory {
    /// H′ as the rewrite prompt sees it: the summary when present, the
    /// enhanced question/answer pairs otherwise.
    pub fn rendering(&self) -> String {
        match &self.summary {
            Some(s) => s.clone(),
            None => render_pairs(&self.turns),
        }
    }
}

/// One line of the enhancement dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementRecord {
    pub session_id: String,
    pub turn_id: String,
    pub question: String,
    #[serde(flatten)]
    pub enhanced: EnhancedHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicDecision {
    pub switched: bool,
    /// Output named both labels or neither.
    pub ambiguous: bool,
}

/// Interprets a TS answer. Ambiguity resolves to "old topic".
pub fn parse_topic_switch(output: &str) -> TopicDecision {
    let lower = output.to_lowercase();
    let new = lower.contains("new_topic");
    let old = lower.contains("old_topic");
    TopicDecision { switched: new && !old, ambiguous: new == old }
}

fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

/// Runs enhancement steps against one gateway.
pub struct Enhancer<'a> {
    gateway: &'a Gateway,
    config: &'a EnhanceConfig,
}

impl<'a> Enhancer<'a> {
    pub fn new(gateway: &'a Gateway, config: &'a EnhanceConfig) -> Self {
        Self { gateway, config }
    }

    fn call(&self, kind: PromptKind, user_content: &str, max_new_tokens: u32) -> Result<String> {
        let request = ChatRequest::new(
            kind.instruction(),
            truncate_front(user_content, INPUT_TOKEN_LIMIT),
            self.config.generation.clone().with_max_new_tokens(max_new_tokens),
        );
        Ok(self.gateway.complete(&request)?.text)
    }

    /// `Ok(None)` when the call failed and fallbacks are enabled.
    fn call_or_fallback(&self, kind: PromptKind, user_content: &str, max_new_tokens: u32, warnings: &mut Vec<String>) -> Result<Option<String>> {
        match self.call(kind, user_content, max_new_tokens) {
            Ok(text) => Ok(Some(text)),
            Err(e) if self.config.fallback_on_error => {
                log::warn!("{} call failed, using fallback: {e}", kind.label());
                warnings.push(format!("{}: gateway error: {e}", kind.label()));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// u′: the model's first non-empty line, or the input question.
    pub fn disambiguate_question(&self, history: &[ConversationTurn], question: &str, warnings: &mut Vec<String>) -> Result<(String, FieldStatus)> {
        let out = self.call_or_fallback(PromptKind::Qd, &render_context(history, question), self.config.max_new_tokens.qd, warnings)?;
        match out.as_deref().map(first_line) {
            Some(line) if !line.is_empty() => Ok((line.to_string(), FieldStatus::Generated)),
            _ => Ok((question.to_string(), FieldStatus::Fallback)),
        }
    }

    /// r′_n, or `None` when there is no last response to expand.
    pub fn expand_response(&self, history: &[ConversationTurn], warnings: &mut Vec<String>) -> Result<Option<(String, FieldStatus)>> {
        let Some(last) = history.last() else {
            return Ok(None);
        };
        if last.response.trim().is_empty() {
            return Ok(None);
        }
        let out = self.call_or_fallback(PromptKind::Re, &render_pairs(history), self.config.max_new_tokens.re, warnings)?;
        Ok(Some(match out.as_deref().map(str::trim) {
            Some(t) if !t.is_empty() => (t.to_string(), FieldStatus::Generated),
            _ => (last.response.clone(), FieldStatus::Fallback),
        }))
    }

    /// r′_{n+1}; empty output or a failed call yields `None`.
    pub fn pseudo_response(&self, history: &[ConversationTurn], question: &str, warnings: &mut Vec<String>) -> Result<Option<String>> {
        let out = self.call_or_fallback(PromptKind::Pr, &render_context(history, question), self.config.max_new_tokens.pr, warnings)?;
        Ok(out.map(|t| t.trim().to_string()).filter(|t| !t.is_empty()))
    }

    /// Empty history is never a switch and costs no call.
    pub fn detect_topic_switch(&self, history: &[ConversationTurn], question: &str, warnings: &mut Vec<String>) -> Result<bool> {
        if history.is_empty() {
            return Ok(false);
        }
        let Some(out) = self.call_or_fallback(PromptKind::Ts, &render_context(history, question), self.config.max_new_tokens.ts, warnings)? else {
            return Ok(false);
        };
        let decision = parse_topic_switch(&out);
        if decision.ambiguous {
            warnings.push(format!("TS: ambiguous output {:?}, assuming old_topic", out.trim()));
        }
        Ok(decision.switched)
    }

    pub fn summarize_history(&self, turns: &[ConversationTurn], warnings: &mut Vec<String>) -> Result<Option<String>> {
        if turns.is_empty() {
            return Ok(None);
        }
        let out = self.call_or_fallback(PromptKind::Hs, &render_pairs(turns), self.config.max_new_tokens.hs, warnings)?;
        Ok(out.map(|t| t.trim().to_string()).filter(|t| !t.is_empty()))
    }

    pub fn enhance_history(&self, session: &ConversationSession) -> Result<EnhancedHistory> {
        let steps = self.config.steps;
        let question = session.current_question.as_str();
        let mut warnings = Vec::new();
        let mut provenance = BTreeMap::new();
        let mut note = |field: &str, prompt, status| {
            provenance.insert(field.to_string(), Provenance { prompt, status });
        };

        let topic_switched = steps.ts && self.detect_topic_switch(&session.turns, question, &mut warnings)?;
        if topic_switched {
            note("topic_switched", PromptKind::Ts, FieldStatus::Generated);
        }
        let context: Vec<ConversationTurn> = if topic_switched {
            session.turns.last().cloned().into_iter().collect()
        } else {
            session.turns.clone()
        };

        let disambiguated_question = if steps.qd {
            let (q, status) = self.disambiguate_question(&context, question, &mut warnings)?;
            note("disambiguated_question", PromptKind::Qd, status);
            q
        } else {
            question.to_string()
        };

        let mut turns = context.clone();
        let mut expanded_last_response = None;
        if steps.re {
            if let Some((r, status)) = self.expand_response(&context, &mut warnings)? {
                note("expanded_last_response", PromptKind::Re, status);
                if let Some(last) = turns.last_mut() {
                    last.response = r.clone();
                }
                expanded_last_response = Some(r);
            }
        }

        let pseudo_response = if steps.pr {
            let pr = self.pseudo_response(&context, question, &mut warnings)?;
            if pr.is_some() {
                note("pseudo_response", PromptKind::Pr, FieldStatus::Generated);
            }
            pr
        } else {
            None
        };

        let mut summary = None;
        if steps.hs && !topic_switched && !turns.is_empty() {
            summary = self.summarize_history(&turns, &mut warnings)?;
            let status = if summary.is_some() { FieldStatus::Generated } else { FieldStatus::Fallback };
            note("summary", PromptKind::Hs, status);
        }

        Ok(EnhancedHistory {
            turns,
            disambiguated_question,
            expanded_last_response,
            pseudo_response,
            summary,
            topic_switched,
            provenance,
            warnings,
        })
    }
}

/// Enhances every session, in parallel, keeping input order.
pub fn enhance_all(gateway: &Gateway, config: &EnhanceConfig, sessions: &[ConversationSession]) -> Result<Vec<EnhancementRecord>> {
    let enhancer = Enhancer::new(gateway, config);
    sessions
        .par_iter()
        .map(|s| {
            Ok(EnhancementRecord {
                session_id: s.session_id.clone(),
                turn_id: s.turn_id.clone(),
                question: s.current_question.clone(),
                enhanced: enhancer.enhance_history(s)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MatchKind;
    use crate::prompts::{HS_INSTRUCTION, PR_INSTRUCTION, QD_INSTRUCTION, RE_INSTRUCTION, TS_INSTRUCTION};

    fn gw(rules: &[(&str, &str)]) -> Gateway {
        let g = Gateway::mock();
        for (sys, resp) in rules {
            g.register_rule(crate::gateway::MockRule::new(MatchKind::Substring, "", *resp).for_system(*sys))
                .unwrap();
        }
        g
    }

    fn session(n: usize) -> ConversationSession {
        ConversationSession {
            session_id: "s".into(),
            turn_id: format!("s_{}", n + 1),
            turns: (1..=n).map(|i| ConversationTurn::new(format!("q{i}?"), format!("r{i}."))).collect(),
            current_question: "what about it?".into(),
        }
    }

    #[test]
    fn topic_switch_parsing() {
        assert!(parse_topic_switch("new_topic").switched);
        assert!(!parse_topic_switch("Old_Topic.").switched);
        let both = parse_topic_switch("It introduces a new topic: new_topic and old_topic");
        assert!(!both.switched && both.ambiguous);
        assert!(parse_topic_switch("no idea").ambiguous);
    }

    #[test]
    fn qd_first_line_and_fallback() {
        let g = gw(&[(QD_INSTRUCTION, "\n  What is X?  \nextra")]);
        let cfg = EnhanceConfig::default();
        let e = Enhancer::new(&g, &cfg);
        let mut w = Vec::new();
        assert_eq!(e.disambiguate_question(&[], "q", &mut w).unwrap(), ("What is X?".into(), FieldStatus::Generated));

        let g = gw(&[(QD_INSTRUCTION, "")]);
        let e = Enhancer::new(&g, &cfg);
        assert_eq!(e.disambiguate_question(&[], "q", &mut w).unwrap(), ("q".into(), FieldStatus::Fallback));
    }

    #[test]
    fn re_precondition_and_whitespace_fallback() {
        let g = gw(&[(RE_INSTRUCTION, "   ")]);
        let cfg = EnhanceConfig::default();
        let e = Enhancer::new(&g, &cfg);
        let mut w = Vec::new();
        assert_eq!(e.expand_response(&[], &mut w).unwrap(), None);
        assert_eq!(e.expand_response(&[ConversationTurn::new("a", "")], &mut w).unwrap(), None);
        assert_eq!(g.call_count(), 0);
        let h = [ConversationTurn::new("a?", "b.")];
        assert_eq!(e.expand_response(&h, &mut w).unwrap(), Some(("b.".into(), FieldStatus::Fallback)));
    }

    #[test]
    fn pr_is_verbatim() {
        let text = "One. Two. Three.";
        let g = gw(&[(PR_INSTRUCTION, text)]);
        let cfg = EnhanceConfig::default();
        let mut w = Vec::new();
        assert_eq!(Enhancer::new(&g, &cfg).pseudo_response(&[], "q", &mut w).unwrap().as_deref(), Some(text));
    }

    #[test]
    fn switch_path() {
        let g = gw(&[(TS_INSTRUCTION, "new_topic"), (QD_INSTRUCTION, "QD"), (RE_INSTRUCTION, "RE"), (PR_INSTRUCTION, "PR"), (HS_INSTRUCTION, "HS")]);
        let cfg = EnhanceConfig::default();
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(3)).unwrap();
        assert!(eh.topic_switched);
        assert_eq!(eh.turns.len(), 1);
        assert_eq!(eh.turns[0].question, "q3?");
        assert_eq!(eh.turns[0].response, "RE");
        assert_eq!(eh.summary, None);
        assert_eq!(g.call_count(), 4);
    }

    #[test]
    fn non_switch_path() {
        let g = gw(&[(TS_INSTRUCTION, "old_topic"), (QD_INSTRUCTION, "QD"), (RE_INSTRUCTION, "RE"), (PR_INSTRUCTION, "PR"), (HS_INSTRUCTION, "HS")]);
        let cfg = EnhanceConfig::default();
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(3)).unwrap();
        assert!(!eh.topic_switched);
        assert_eq!(eh.turns.len(), 3);
        assert_eq!(eh.summary.as_deref(), Some("HS"));
        assert_eq!(g.call_count(), 5);
        let hs_call = g.call_log().into_iter().last().unwrap();
        assert_eq!(hs_call.system_instruction, HS_INSTRUCTION);
        assert!(hs_call.user_content.ends_with("Q: q3?\nA: RE"));
        for field in ["disambiguated_question", "expanded_last_response", "pseudo_response", "summary"] {
            assert!(eh.provenance.contains_key(field), "{field}");
        }
    }

    #[test]
    fn no_history_skips_ts_re_hs() {
        let g = gw(&[(QD_INSTRUCTION, "QD"), (PR_INSTRUCTION, "PR")]);
        let cfg = EnhanceConfig::default();
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(0)).unwrap();
        assert_eq!(g.call_count(), 2);
        assert_eq!(eh.disambiguated_question, "QD");
        assert_eq!(eh.pseudo_response.as_deref(), Some("PR"));
        assert!(eh.summary.is_none() && eh.expanded_last_response.is_none());
    }

    #[test]
    fn without_ts_always_summarizes() {
        let g = gw(&[(TS_INSTRUCTION, "new_topic"), (HS_INSTRUCTION, "HS")]);
        let cfg = EnhanceConfig { steps: EnhanceSteps::default().without(PromptKind::Ts), ..Default::default() };
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(2)).unwrap();
        assert!(!eh.topic_switched);
        assert_eq!(eh.turns.len(), 2);
        assert_eq!(eh.summary.as_deref(), Some("HS"));
        assert!(g.call_log().iter().all(|c| c.system_instruction != TS_INSTRUCTION));
    }

    #[test]
    fn empty_summary_marks_fallback() {
        let g = gw(&[(TS_INSTRUCTION, "old_topic"), (HS_INSTRUCTION, "")]);
        let cfg = EnhanceConfig::default();
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(1)).unwrap();
        assert!(eh.summary.is_none());
        assert_eq!(eh.provenance["summary"].status, FieldStatus::Fallback);
    }

    struct Failing;
    impl crate::gateway::Backend for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn generate(&self, _: &ChatRequest) -> Result<String> {
            Err(crate::Error::Transport { attempts: 1, message: "down".into() })
        }
    }

    #[test]
    fn gateway_failure_with_and_without_fallback() {
        let g = Gateway::new(Box::new(Failing));
        let cfg = EnhanceConfig::default();
        let eh = Enhancer::new(&g, &cfg).enhance_history(&session(2)).unwrap();
        assert_eq!(eh.disambiguated_question, "what about it?");
        assert!(eh.pseudo_response.is_none());
        assert!(!eh.warnings.is_empty());

        let strict = EnhanceConfig { fallback_on_error: false, ..Default::default() };
        assert!(Enhancer::new(&g, &strict).enhance_history(&session(2)).is_err());
    }

    #[test]
    fn deterministic_under_mock() {
        let g = gw(&[(TS_INSTRUCTION, "old_topic"), (QD_INSTRUCTION, "QD"), (HS_INSTRUCTION, "HS")]);
        let cfg = EnhanceConfig::default();
        let sessions: Vec<_> = (0..6).map(session).collect();
        let a = enhance_all(&g, &cfg, &sessions).unwrap();
        let b = enhance_all(&g, &cfg, &sessions).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
