//! MRR, NDCG@k and Recall@k over TREC runs and qrels.
//!
//! MRR and recall binarize grades at a threshold; NDCG uses the raw grades
//! with exponential gain `2^g − 1` (linear gain `g` is available).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, RunEntry};
use crate::error::{Error, Result};
use crate::retrieval::{group_run, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    Exponential,
    Linear,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => grade as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ndcg_cutoff: usize,
    pub recall_cutoff: usize,
    /// `None` scans the whole run.
    pub mrr_depth: Option<usize>,
    /// Overrides the qrels' own threshold when set.
    pub binary_threshold: Option<u32>,
    pub gain: Gain,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ndcg_cutoff: 3,
            recall_cutoff: 10,
            mrr_depth: None,
            binary_threshold: None,
            gain: Gain::Exponential,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ndcg_cutoff == 0 || self.recall_cutoff == 0 || self.mrr_depth == Some(0) {
            return Err(Error::Invalid("metric cutoffs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reciprocal rank of the first doc graded at or above `threshold` within `depth`.
pub fn mrr(hits: &RankedList, qrels: &Qrels, threshold: u32, depth: Option<usize>) -> f64 {
    let depth = depth.unwrap_or(usize::MAX);
    hits.doc_ids()
        .take(depth)
        .position(|d| qrels.grade(&hits.query_id, d) >= threshold)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn ndcg_at_k(hits: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    ndcg_with_gain(hits, qrels, k, Gain::Exponential)
}

pub fn ndcg_with_gain(hits: &RankedList, qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = hits
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.apply(qrels.grade(&hits.query_id, d)) / discount(i))
        .sum();
    let mut grades: Vec<u32> = qrels
        .for_query(&hits.query_id)
        .map(|j| j.values().copied().collect())
        .unwrap_or_default();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of relevant docs found in the top `k`; `None` when the query has
/// no relevant docs.
pub fn recall_at_k(hits: &RankedList, qrels: &Qrels, threshold: u32, k: usize) -> Option<f64> {
    let total = qrels.relevant_docs(&hits.query_id, threshold).count();
    if total == 0 {
        return None;
    }
    let found = hits
        .doc_ids()
        .take(k)
        .filter(|d| qrels.grade(&hits.query_id, d) >= threshold)
        .count();
    Some(found as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub mrr: f64,
    pub ndcg: f64,
    /// Absent when the query has no relevant docs.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub means: MeanMetrics,
    pub judged_query_count: usize,
    /// Queries counted in the recall mean.
    pub recall_query_count: usize,
    /// Run queries with no judgments; excluded from every mean.
    pub unjudged_queries: Vec<String>,
    pub config: EvalConfig,
    pub threshold: u32,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn evaluate_lists(lists: &[RankedList], qrels: &Qrels, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let threshold = config.binary_threshold.unwrap_or(qrels.binary_threshold);
    let evaluated: Vec<(String, Option<QueryMetrics>)> = lists
        .par_iter()
        .map(|list| {
            if !qrels.has_query(&list.query_id) {
                return (list.query_id.clone(), None);
            }
            let m = QueryMetrics {
                mrr: mrr(list, qrels, threshold, config.mrr_depth),
                ndcg: ndcg_with_gain(list, qrels, config.ndcg_cutoff, config.gain),
                recall: recall_at_k(list, qrels, threshold, config.recall_cutoff),
            };
            (list.query_id.clone(), Some(m))
        })
        .collect();

    let mut per_query = BTreeMap::new();
    let mut unjudged_queries = Vec::new();
    for (qid, m) in evaluated {
        match m {
            Some(m) => {
                per_query.insert(qid, m);
            }
            None => unjudged_queries.push(qid),
        }
    }
    unjudged_queries.sort();
    if !unjudged_queries.is_empty() {
        log::warn!("{} run queries have no judgments and were excluded", unjudged_queries.len());
    }
    let means = MeanMetrics {
        mrr: mean(per_query.values().map(|m| m.mrr)),
        ndcg: mean(per_query.values().map(|m| m.ndcg)),
        recall: mean(per_query.values().filter_map(|m| m.recall)),
    };
    let recall_query_count = per_query.values().filter(|m| m.recall.is_some()).count();
    Ok(EvalReport {
        judged_query_count: per_query.len(),
        recall_query_count,
        per_query,
        means,
        unjudged_queries,
        config: config.clone(),
        threshold,
    })
}

pub fn evaluate_run(run: &[RunEntry], qrels: &Qrels, config: &EvalConfig) -> Result<EvalReport> {
    crate::corpus::validate_run(run)?;
    evaluate_lists(&group_run(run), qrels, config)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned plain-text table, one row per query plus the mean.
    pub fn to_table(&self) -> String {
        let ndcg_label = format!("NDCG@{}", self.config.ndcg_cutoff);
        let recall_label = format!("R@{}", self.config.recall_cutoff);
        let width = self.per_query.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "query", "MRR", ndcg_label, recall_label);
        for (qid, m) in &self.per_query {
            let recall = m.recall.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(out, "{qid:<width$}  {:>8.4}  {:>8.4}  {recall:>8}", m.mrr, m.ndcg);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}",
            "mean", self.means.mrr, self.means.ndcg, self.means.recall
        );
        let _ = writeln!(
            out,
            "judged queries: {}  unjudged (excluded): {}",
            self.judged_query_count,
            self.unjudged_queries.len()
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_qrels;
    use crate::retrieval::Hit;

    fn list(q: &str, docs: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            hits: docs
                .iter()
                .enumerate()
                .map(|(i, d)| Hit { doc_id: d.to_string(), score: 100.0 - i as f64 })
                .collect(),
            depth: docs.len(),
        }
    }

    #[test]
    fn mrr_definition() {
        let q = parse_qrels("q 0 g 1\n", 1).unwrap();
        assert_eq!(mrr(&list("q", &["g", "x"]), &q, 1, None), 1.0);
        assert_eq!(mrr(&list("q", &["a", "b", "c", "g"]), &q, 1, None), 0.25);
        assert_eq!(mrr(&list("q", &["a", "b"]), &q, 1, None), 0.0);
        assert_eq!(mrr(&list("q", &["a", "b", "c", "g"]), &q, 1, Some(3)), 0.0);
    }

    #[test]
    fn ndcg_hand_example() {
        let q = parse_qrels("q 0 d1 2\nq 0 d2 1\n", 1).unwrap();
        let v = ndcg_at_k(&list("q", &["d2", "d1", "d3"]), &q, 3);
        let dcg = 1.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((v - dcg / idcg).abs() < 1e-15);
        assert!((v - 0.7967075809905066).abs() < 1e-12, "{v}");
        assert_eq!(ndcg_at_k(&list("q", &["d1", "d2"]), &q, 3), 1.0);
    }

    #[test]
    fn ndcg_without_judgments_is_zero() {
        let q = Qrels::new(1);
        assert_eq!(ndcg_at_k(&list("q", &["d1"]), &q, 3), 0.0);
    }

    #[test]
    fn recall_cases() {
        let q = parse_qrels("q 0 g 1\n", 1).unwrap();
        let mut docs: Vec<String> = (0..8).map(|i| format!("x{i}")).collect();
        docs.push("g".into());
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        assert_eq!(recall_at_k(&list("q", &refs), &q, 1, 10), Some(1.0));

        let q4 = parse_qrels("q 0 a 1\nq 0 b 1\nq 0 c 1\nq 0 d 1\n", 1).unwrap();
        assert_eq!(recall_at_k(&list("q", &["a", "x", "b"]), &q4, 1, 10), Some(0.5));

        let mut docs: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
        docs.push("g".into());
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        assert_eq!(recall_at_k(&list("q", &refs), &q, 1, 10), Some(0.0));

        let below = parse_qrels("q 0 a 1\n", 2).unwrap();
        assert_eq!(recall_at_k(&list("q", &["a"]), &below, 2, 10), None);
    }

    #[test]
    fn report_means() {
        let q = parse_qrels("q1 0 a 1\nq2 0 b 1\n", 1).unwrap();
        let report = evaluate_lists(&[list("q1", &["a"]), list("q2", &["x", "b"]), list("q3", &["z"])], &q, &EvalConfig::default()).unwrap();
        assert_eq!(report.means.mrr, 0.75);
        assert_eq!(report.judged_query_count, 2);
        assert_eq!(report.unjudged_queries, ["q3"]);

        let perfect = evaluate_lists(&[list("q1", &["a"])], &q, &EvalConfig::default()).unwrap();
        assert_eq!((perfect.means.mrr, perfect.means.ndcg, perfect.means.recall), (1.0, 1.0, 1.0));
        assert!(perfect.to_table().contains("mean"));
    }

    #[test]
    fn zero_cutoff_rejected() {
        let cfg = EvalConfig { ndcg_cutoff: 0, ..Default::default() };
        assert!(evaluate_lists(&[], &Qrels::new(1), &cfg).is_err());
    }
}
