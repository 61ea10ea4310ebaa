//! Search-oriented supervision: for every judged turn the LLM proposes several
//! queries from the gold passage and the enhanced history; each is scored by
//! retrieval against the qrels and the best one becomes the training target.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, ConversationSession, Passage, Qrels};
use crate::enhance::{EnhanceConfig, EnhancedHistory, Enhancer};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenerationConfig};
use crate::metrics::ndcg_at_k;
use crate::prompts::{render_context, render_pairs, with_new_question, SUPERVISION_INSTRUCTION};
use crate::retrieval::Retriever;
use crate::rewrite::extract_query;
use crate::text::{token_count, truncate_back, truncate_front, INPUT_TOKEN_LIMIT, PASSAGE_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    /// Original history in the supervision prompt.
    NoHprime,
    /// A single candidate.
    NoMulti,
    /// No passage in the supervision prompt.
    NoGold,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "no-hprime" => Ok(Self::NoHprime),
            "no-multi" => Ok(Self::NoMulti),
            "no-gold" => Ok(Self::NoGold),
            _ => Err(Error::Invalid(format!("unknown ablation {s:?}; expected none, no-hprime, no-multi or no-gold"))),
        }
    }
}

/// History given to the downstream rewriter as `input_text`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputHistory {
    Original,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionConfig {
    /// Candidates requested per turn.
    pub m: usize,
    pub ablation: Ablation,
    pub input_history: InputHistory,
    pub ndcg_cutoff: usize,
    pub generation: GenerationConfig,
    /// Used for turns whose enhanced history was not supplied.
    pub enhance: EnhanceConfig,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            m: 5,
            ablation: Ablation::None,
            input_history: InputHistory::Original,
            ndcg_cutoff: 3,
            generation: GenerationConfig::default().with_max_new_tokens(256),
            enhance: EnhanceConfig::default(),
        }
    }
}

impl SupervisionConfig {
    pub fn effective_m(&self) -> usize {
        if self.ablation == Ablation::NoMulti {
            1
        } else {
            self.m
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.ndcg_cutoff == 0 {
            return Err(Error::Invalid("m and ndcg cutoff must be >= 1".into()));
        }
        self.generation.validate()
    }
}

/// Training pair consumed by the fine-tuning job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtRecord {
    pub input_text: String,
    pub target_text: String,
    pub turn_id: String,
    pub selection_score: f64,
}

/// Audit record of one turn's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoQuerySet {
    pub turn_id: String,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub selected_index: usize,
    /// Every candidate scored 0; the first was kept.
    pub zero_signal: bool,
    /// False when no numbered list was found and a single fallback was used.
    pub parsed_list: bool,
}

fn list_item(line: &str) -> Option<&str> {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return Some(rest);
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))
}

/// Items of a numbered or bulleted list: trimmed, unquoted, deduplicated in
/// order, at most `m`.
pub fn parse_candidate_list(output: &str, m: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    output
        .lines()
        .filter_map(list_item)
        .map(|s| s.trim().trim_matches('"').trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .take(m)
        .collect()
}

/// Supervision user content. The history is front-truncated so the passage
/// and question always fit the input budget.
pub fn render_supervision_content(history: &str, question: &str, passage: Option<&str>) -> String {
    let head = passage
        .map(|p| format!("Relevant passage: {}\n", truncate_back(p, PASSAGE_TOKEN_LIMIT)))
        .unwrap_or_default();
    let tail = with_new_question("", question);
    let budget = INPUT_TOKEN_LIMIT.saturating_sub(token_count(&head) + token_count(&tail));
    let history = truncate_front(history, budget);
    let body = with_new_question(history, question);
    truncate_front(&format!("{head}{body}"), INPUT_TOKEN_LIMIT).to_string()
}

pub struct CandidateSet {
    pub candidates: Vec<String>,
    pub parsed_list: bool,
}

/// One gateway call. Without a parseable list the output is read as a single
/// query, and failing that the question itself is the candidate.
pub fn generate_candidates(gateway: &Gateway, config: &SupervisionConfig, history: &str, question: &str, gold: Option<&Passage>) -> Result<CandidateSet> {
    let passage = gold.filter(|_| config.ablation != Ablation::NoGold).map(|p| p.text.as_str());
    let request = ChatRequest::new(
        SUPERVISION_INSTRUCTION,
        render_supervision_content(history, question, passage),
        config.generation.clone(),
    );
    let output = gateway.complete(&request)?.text;
    let candidates = parse_candidate_list(&output, config.effective_m());
    if !candidates.is_empty() {
        return Ok(CandidateSet { candidates, parsed_list: true });
    }
    let single = extract_query(&output).unwrap_or_else(|| question.to_string());
    Ok(CandidateSet { candidates: vec![single], parsed_list: false })
}

pub fn score_candidate(retriever: &dyn Retriever, qrels: &Qrels, turn_id: &str, query: &str, cutoff: usize) -> Result<f64> {
    let hits = retriever.search(turn_id, query, cutoff)?;
    Ok(ndcg_at_k(&hits, qrels, cutoff))
}

/// Argmax with the earliest index winning ties. Returns `(index, zero_signal)`.
pub fn select_best(scores: &[f64]) -> Option<(usize, bool)> {
    if scores.is_empty() {
        return None;
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Some((best, scores.iter().all(|&s| s == 0.0)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FtStats {
    pub sessions: usize,
    pub records: usize,
    pub skipped_unjudged: usize,
    pub skipped_missing_gold: usize,
    pub zero_signal: usize,
    pub list_fallbacks: usize,
}

pub struct FtDataset {
    pub records: Vec<FtRecord>,
    pub sets: Vec<PseudoQuerySet>,
    pub stats: FtStats,
}

enum TurnOutcome {
    Unjudged,
    MissingGold,
    Done(FtRecord, PseudoQuerySet),
}

/// Inputs shared by every turn.
pub struct SupervisionInputs<'a> {
    pub gateway: &'a Gateway,
    pub retriever: &'a dyn Retriever,
    pub qrels: &'a Qrels,
    /// Passage text by doc id.
    pub passages: &'a (dyn Fn(&str) -> Option<Passage> + Sync),
    /// Precomputed enhanced histories by turn id; missing ones are computed.
    pub enhanced: &'a HashMap<String, EnhancedHistory>,
}

fn needs_enhanced(config: &SupervisionConfig) -> bool {
    config.ablation != Ablation::NoHprime || config.input_history == InputHistory::Enhanced
}

fn supervise_turn(inputs: &SupervisionInputs<'_>, config: &SupervisionConfig, session: &ConversationSession) -> Result<TurnOutcome> {
    let turn_id = session.turn_id.as_str();
    let Some(gold_id) = inputs.qrels.gold_doc(turn_id) else {
        return Ok(TurnOutcome::Unjudged);
    };
    let gold = (inputs.passages)(gold_id);
    if gold.is_none() && config.ablation != Ablation::NoGold {
        log::warn!("{turn_id}: gold passage {gold_id} is not in the collection");
        return Ok(TurnOutcome::MissingGold);
    }

    let enhanced = if needs_enhanced(config) {
        Some(match inputs.enhanced.get(turn_id) {
            Some(eh) => eh.clone(),
            None => Enhancer::new(inputs.gateway, &config.enhance).enhance_history(session)?,
        })
    } else {
        None
    };
    let question = session.current_question.as_str();
    let prompt_history = match (&enhanced, config.ablation) {
        (Some(eh), a) if a != Ablation::NoHprime => eh.rendering(),
        _ => render_pairs(&session.turns),
    };

    let set = generate_candidates(inputs.gateway, config, &prompt_history, question, gold.as_ref())?;
    let scores = set
        .candidates
        .iter()
        .map(|c| score_candidate(inputs.retriever, inputs.qrels, turn_id, c, config.ndcg_cutoff))
        .collect::<Result<Vec<_>>>()?;
    let (best, zero_signal) = select_best(&scores).expect("at least one candidate");

    let input_text = match (config.input_history, &enhanced) {
        (InputHistory::Enhanced, Some(eh)) => with_new_question(&eh.rendering(), question),
        _ => render_context(&session.turns, question),
    };
    let record = FtRecord {
        input_text: truncate_front(&input_text, INPUT_TOKEN_LIMIT).to_string(),
        target_text: set.candidates[best].clone(),
        turn_id: turn_id.to_string(),
        selection_score: scores[best],
    };
    let audit = PseudoQuerySet {
        turn_id: turn_id.to_string(),
        candidates: set.candidates,
        scores,
        selected_index: best,
        zero_signal,
        parsed_list: set.parsed_list,
    };
    Ok(TurnOutcome::Done(record, audit))
}

/// Produces one training record per judged turn whose gold passage is known,
/// in session order.
pub fn build_ft_dataset(inputs: &SupervisionInputs<'_>, sessions: &[ConversationSession], config: &SupervisionConfig) -> Result<FtDataset> {
    config.validate()?;
    let outcomes = sessions
        .par_iter()
        .map(|s| supervise_turn(inputs, config, s))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = FtStats { sessions: sessions.len(), ..Default::default() };
    let mut records = Vec::new();
    let mut sets = Vec::new();
    for outcome in outcomes {
        match outcome {
            TurnOutcome::Unjudged => stats.skipped_unjudged += 1,
            TurnOutcome::MissingGold => stats.skipped_missing_gold += 1,
            TurnOutcome::Done(record, set) => {
                stats.zero_signal += set.zero_signal as usize;
                stats.list_fallbacks += !set.parsed_list as usize;
                records.push(record);
                sets.push(set);
            }
        }
    }
    stats.records = records.len();
    if stats.zero_signal > 0 {
        log::warn!("{} turns had no candidate with non-zero NDCG", stats.zero_signal);
    }
    Ok(FtDataset { records, sets, stats })
}

pub fn write_ft_records(records: &[FtRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        let out = "Here are queries:\n1. alpha beta\n2) gamma\n- delta\n3.   \n4. alpha beta\n5. \"eps\"\nnot a list";
        assert_eq!(parse_candidate_list(out, 5), ["alpha beta", "gamma", "delta", "eps"]);
        assert_eq!(parse_candidate_list(out, 2), ["alpha beta", "gamma"]);
        assert!(parse_candidate_list("just one query", 5).is_empty());
        assert!(parse_candidate_list("2020 was a year", 5).is_empty());
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(select_best(&[0.2, 0.8, 0.5]), Some((1, false)));
        assert_eq!(select_best(&[0.5, 0.5, 0.1]), Some((0, false)));
        assert_eq!(select_best(&[0.0, 0.0]), Some((0, true)));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn content_layout_and_budget() {
        let c = render_supervision_content("Q: a\nA: b", "c?", Some("the passage"));
        assert_eq!(c, "Relevant passage: the passage\nQ: a\nA: b\nNew question: c?");
        assert_eq!(render_supervision_content("", "c?", None), "New question: c?");

        let long_history = "h ".repeat(1000);
        let c = render_supervision_content(&long_history, "c?", Some("the passage"));
        assert!(c.starts_with("Relevant passage: the passage\n"));
        assert!(c.ends_with("New question: c?"));
        assert!(token_count(&c) <= INPUT_TOKEN_LIMIT);
    }

    #[test]
    fn ablation_names() {
        for (s, a) in [("none", Ablation::None), ("no-hprime", Ablation::NoHprime), ("no-multi", Ablation::NoMulti), ("no-gold", Ablation::NoGold)] {
            assert_eq!(s.parse::<Ablation>().unwrap(), a);
            assert_eq!(serde_json::to_value(a).unwrap(), s);
        }
        assert!("bogus".parse::<Ablation>().is_err());
    }
}
