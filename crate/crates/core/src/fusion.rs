//! Result-level fusion of two ranked lists.
//!
//! Each list is min-max normalized, then `fused(d) = a(d) + alpha · b(d)`,
//! where a document missing from a list contributes 0 from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{Hit, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the second list.
    pub alpha: f64,
    pub normalization: Normalization,
    pub depth: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            normalization: Normalization::MinMax,
            depth: 100,
        }
    }
}

/// Min-max maps scores to [0, 1]; a constant list maps to all 1.0.
pub fn normalize_scores(list: &RankedList) -> RankedList {
    let (lo, hi) = list
        .hits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h.score), hi.max(h.score)));
    let range = hi - lo;
    let hits = list
        .hits
        .iter()
        .map(|h| Hit {
            doc_id: h.doc_id.clone(),
            score: if range > 0.0 { (h.score - lo) / range } else { 1.0 },
        })
        .collect();
    RankedList { query_id: list.query_id.clone(), hits, depth: list.depth }
}

pub fn fuse(list_a: &RankedList, list_b: &RankedList, config: &FusionConfig) -> Result<RankedList> {
    if list_a.query_id != list_b.query_id {
        return Err(Error::QueryIdMismatch(list_a.query_id.clone(), list_b.query_id.clone()));
    }
    if config.alpha.is_nan() || config.alpha < 0.0 {
        return Err(Error::Invalid(format!("alpha must be >= 0, got {}", config.alpha)));
    }
    let Normalization::MinMax = config.normalization;
    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    let a = normalize_scores(list_a);
    let b = normalize_scores(list_b);
    for h in &a.hits {
        *fused.entry(&h.doc_id).or_insert(0.0) += h.score;
    }
    for h in &b.hits {
        *fused.entry(&h.doc_id).or_insert(0.0) += config.alpha * h.score;
    }
    Ok(RankedList::from_scores(
        list_a.query_id.clone(),
        fused.into_iter().map(|(d, s)| (d.to_string(), s)),
        config.depth,
    ))
}

/// Fuses two runs query by query. Queries present in only one run are fused
/// against an empty list.
pub fn fuse_runs(run_a: &[RankedList], run_b: &[RankedList], config: &FusionConfig) -> Result<Vec<RankedList>> {
    let mut order: Vec<&str> = run_a.iter().map(|l| l.query_id.as_str()).collect();
    for l in run_b {
        if !order.contains(&l.query_id.as_str()) {
            order.push(&l.query_id);
        }
    }
    order
        .into_iter()
        .map(|qid| {
            let empty = RankedList::empty(qid, 0);
            let a = run_a.iter().find(|l| l.query_id == qid).unwrap_or(&empty);
            let b = run_b.iter().find(|l| l.query_id == qid).unwrap_or(&empty);
            fuse(a, b, config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(q: &str, items: &[(&str, f64)]) -> RankedList {
        RankedList {
            query_id: q.into(),
            hits: items.iter().map(|(d, s)| Hit { doc_id: d.to_string(), score: *s }).collect(),
            depth: 100,
        }
    }

    fn scores(l: &RankedList) -> Vec<f64> {
        l.hits.iter().map(|h| h.score).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(scores(&normalize_scores(&list("q", &[("a", 10.0), ("b", 5.0), ("c", 0.0)]))), [1.0, 0.5, 0.0]);
        assert_eq!(scores(&normalize_scores(&list("q", &[("a", 7.3)]))), [1.0]);
        assert_eq!(scores(&normalize_scores(&list("q", &[("a", 1.0), ("b", 0.0)]))), [1.0, 0.0]);
    }

    #[test]
    fn four_doc_example() {
        let a = list("q", &[("d1", 10.0), ("d2", 5.0), ("d3", 0.0)]);
        let b = list("q", &[("d2", 3.0), ("d4", 1.0)]);
        let out = fuse(&a, &b, &FusionConfig::default()).unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), ["d2", "d1", "d3", "d4"]);
        assert_eq!(scores(&out), [1.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_second_list_keeps_order() {
        let a = list("q", &[("x", 3.0), ("a", 2.0), ("m", 1.0)]);
        let out = fuse(&a, &RankedList::empty("q", 10), &FusionConfig { alpha: 2.5, ..Default::default() }).unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), ["x", "a", "m"]);
    }

    #[test]
    fn identical_lists_double_scores() {
        let a = list("q", &[("x", 3.0), ("a", 2.0), ("m", 1.0)]);
        let out = fuse(&a, &a, &FusionConfig::default()).unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), ["x", "a", "m"]);
        assert_eq!(scores(&out), [2.0, 1.0, 0.0]);
    }

    #[test]
    fn query_mismatch_and_depth() {
        let a = list("q1", &[("x", 1.0)]);
        let b = list("q2", &[("y", 1.0)]);
        assert!(matches!(fuse(&a, &b, &FusionConfig::default()), Err(Error::QueryIdMismatch(..))));
        let b = list("q1", &[("y", 1.0), ("z", 0.5)]);
        let out = fuse(&a, &b, &FusionConfig { depth: 2, ..Default::default() }).unwrap();
        assert_eq!(out.len(), 2);
    }
}
