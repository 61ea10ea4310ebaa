//! Conversational query rewriting (CQR): one LLM call turns a session, plus
//! whichever enhanced fields the configuration enables, into a search query.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{ConversationSession, ConversationTurn};
use crate::enhance::{EnhanceSteps, EnhancedHistory};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenerationConfig};
use crate::prompts::{render_pairs, with_new_question, CQR_INSTRUCTION};
use crate::text::{truncate_back, truncate_front, INPUT_TOKEN_LIMIT, QUERY_TOKEN_LIMIT};

/// Which enhanced fields feed the rewrite prompt. All off is plain history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteFlags {
    pub qd: bool,
    pub re: bool,
    pub pr: bool,
    pub ts: bool,
    pub hs: bool,
}

impl RewriteFlags {
    pub const ORIGINAL: Self = Self { qd: false, re: false, pr: false, ts: false, hs: false };
    pub const ALL: Self = Self { qd: true, re: true, pr: true, ts: true, hs: true };

    pub fn any(self) -> bool {
        self != Self::ORIGINAL
    }

    /// The enhancement steps needed to supply these fields.
    pub fn required_steps(self) -> EnhanceSteps {
        EnhanceSteps { qd: self.qd, re: self.re, pr: self.pr, ts: self.ts, hs: self.hs }
    }

    fn parts(self) -> [(&'static str, bool); 5] {
        [("QD", self.qd), ("RE", self.re), ("PR", self.pr), ("TS", self.ts), ("HS", self.hs)]
    }
}

/// `H` for the original history, otherwise e.g. `H+QD+RE+PR`.
impl fmt::Display for RewriteFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("H")?;
        for (name, on) in self.parts() {
            if on {
                write!(f, "+{name}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for RewriteFlags {
    type Err = Error;

    /// Accepts `H`, `original`, `all`, or `+`/`,` separated step names.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "h" | "original" | "" => return Ok(Self::ORIGINAL),
            "all" | "default" => return Ok(Self::ALL),
            _ => {}
        }
        let mut flags = Self::ORIGINAL;
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_uppercase().as_str() {
                "H" => {}
                "QD" => flags.qd = true,
                "RE" => flags.re = true,
                "PR" => flags.pr = true,
                "TS" => flags.ts = true,
                "HS" => flags.hs = true,
                other => return Err(Error::Invalid(format!("unknown rewrite configuration component {other:?}"))),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteConfig {
    pub flags: RewriteFlags,
    pub generation: GenerationConfig,
    pub fallback_on_error: bool,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            flags: RewriteFlags::ALL,
            generation: GenerationConfig::default().with_max_new_tokens(64),
            fallback_on_error: true,
        }
    }
}

/// Everything the CQR prompt is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub history_rendering: String,
    pub question: String,
    pub pseudo_response: Option<String>,
    pub configuration_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub text: String,
    pub source: QuerySource,
    pub configuration_label: String,
}

/// One line of the rewrite dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteRecord {
    pub turn_id: String,
    pub query: String,
    pub source: QuerySource,
    pub config: String,
}

/// Assembles the prompt inputs for `flags`. Any enabled flag needs `enhanced`.
pub fn assemble_request(session: &ConversationSession, enhanced: Option<&EnhancedHistory>, flags: RewriteFlags) -> Result<RewriteRequest> {
    let label = flags.to_string();
    let question = session.current_question.clone();
    let Some(eh) = enhanced.filter(|_| flags.any()) else {
        if flags.any() {
            return Err(Error::Invalid(format!("configuration {label} needs an enhanced history for {}", session.turn_id)));
        }
        return Ok(RewriteRequest {
            history_rendering: render_pairs(&session.turns),
            question,
            pseudo_response: None,
            configuration_label: label,
        });
    };

    let summary = eh.summary.as_ref().filter(|_| flags.hs);
    let history_rendering = match summary {
        Some(s) => s.clone(),
        None => {
            let mut turns: Vec<ConversationTurn> = if flags.ts && eh.topic_switched {
                session.turns.last().cloned().into_iter().collect()
            } else {
                session.turns.clone()
            };
            if let (true, Some(r), Some(last)) = (flags.re, &eh.expanded_last_response, turns.last_mut()) {
                last.response = r.clone();
            }
            render_pairs(&turns)
        }
    };
    let question = if flags.qd && eh.disambiguated_question != question {
        format!("{question} {}", eh.disambiguated_question)
    } else {
        question
    };
    Ok(RewriteRequest {
        history_rendering,
        question,
        pseudo_response: eh.pseudo_response.clone().filter(|_| flags.pr),
        configuration_label: label,
    })
}

/// Renders the CQR user content, front-truncated to the input budget.
pub fn render_cqr_content(request: &RewriteRequest) -> String {
    let mut content = with_new_question(&request.history_rendering, &request.question);
    if let Some(pr) = &request.pseudo_response {
        content.push_str("\nExpected answer: ");
        content.push_str(pr);
    }
    truncate_front(&content, INPUT_TOKEN_LIMIT).to_string()
}

pub fn build_cqr_prompt(request: &RewriteRequest, generation: &GenerationConfig) -> ChatRequest {
    ChatRequest::new(CQR_INSTRUCTION, render_cqr_content(request), generation.clone())
}

fn strip_label(line: &str) -> &str {
    for label in ["Query:", "query:", "QUERY:"] {
        if let Some(rest) = line.strip_prefix(label) {
            return rest.trim();
        }
    }
    line
}

/// Pulls the query out of a model answer.
///
/// The first JSON object carrying a string `query` wins. Otherwise code fences
/// and `Query:` labels are stripped and the first non-empty line is taken.
pub fn extract_query(output: &str) -> Option<String> {
    for (i, _) in output.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&output[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            if let Some(q) = obj.get("query").and_then(Value::as_str) {
                let q = q.trim();
                if !q.is_empty() {
                    return Some(q.to_string());
                }
            }
        }
    }
    output
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with("```"))
        .filter(|l| serde_json::from_str::<Value>(l).map_or(true, |v| !v.is_object()))
        .map(strip_label)
        .map(|l| l.trim_matches(|c| c == '"' || c == '\'').trim())
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// Issues exactly one gateway call. Unusable output falls back to the
/// disambiguated question when QD is on, else the original question.
pub fn rewrite_query(gateway: &Gateway, session: &ConversationSession, enhanced: Option<&EnhancedHistory>, config: &RewriteConfig) -> Result<RewrittenQuery> {
    let request = assemble_request(session, enhanced, config.flags)?;
    let fallback_text = match enhanced {
        Some(eh) if config.flags.qd => eh.disambiguated_question.clone(),
        _ => session.current_question.clone(),
    };
    let extracted = match gateway.complete(&build_cqr_prompt(&request, &config.generation)) {
        Ok(resp) => extract_query(&resp.text),
        Err(e) if config.fallback_on_error => {
            log::warn!("rewrite of {} failed, using fallback: {e}", session.turn_id);
            None
        }
        Err(e) => return Err(e),
    };
    let (text, source) = match extracted {
        Some(q) => (q, QuerySource::Llm),
        None => (fallback_text, QuerySource::Fallback),
    };
    Ok(RewrittenQuery {
        text: truncate_back(&text, QUERY_TOKEN_LIMIT).to_string(),
        source,
        configuration_label: request.configuration_label,
    })
}

/// Rewrites every session in parallel, keeping input order. `enhanced` is
/// looked up by turn id.
pub fn rewrite_all<'a>(
    gateway: &Gateway,
    sessions: &[ConversationSession],
    enhanced: impl Fn(&str) -> Option<&'a EnhancedHistory> + Sync,
    config: &RewriteConfig,
) -> Result<Vec<RewriteRecord>> {
    sessions
        .par_iter()
        .map(|s| {
            let q = rewrite_query(gateway, s, enhanced(&s.turn_id), config)?;
            Ok(RewriteRecord { turn_id: s.turn_id.clone(), query: q.text, source: q.source, config: q.configuration_label })
        })
        .collect()
}

pub fn write_rewrites(records: &[RewriteRecord], path: &Path) -> Result<()> {
    crate::corpus::write_jsonl(records, path)
}

pub fn read_rewrites(path: &Path) -> Result<Vec<RewriteRecord>> {
    crate::corpus::read_jsonl(path)
}
