//! Text analysis, BM25 sparse retrieval and exact dense retrieval.

pub mod analyzer;
pub mod dense;
pub mod persist;
pub mod porter;
pub mod sparse;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::RunEntry;
use crate::error::{Error, Result};

pub use analyzer::{analyze, AnalyzerConfig, Stemmer, StopwordList};
pub use dense::{CachedEmbedder, DenseRetriever, Embedder, HashEmbedder, HttpEmbedder, Similarity, VectorIndex};
pub use persist::{IndexManifest, StoredIndex};
pub use sparse::{bm25_score, build_index, idf, Bm25Params, InvertedIndex, Posting, SparseRetriever};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending doc_id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Ranked results for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub depth: usize,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>, depth: usize) -> Self {
        Self { query_id: query_id.into(), hits: Vec::new(), depth }
    }

    /// Sorts by the canonical order and keeps the top `depth`.
    pub fn from_scores(query_id: impl Into<String>, scores: impl IntoIterator<Item = (String, f64)>, depth: usize) -> Self {
        let mut hits: Vec<Hit> = scores.into_iter().map(|(doc_id, score)| Hit { doc_id, score }).collect();
        hits.sort_by(hit_order);
        hits.truncate(depth);
        Self { query_id: query_id.into(), hits, depth }
    }

    /// Keeps the file order of `entries`, which must all belong to one query.
    pub fn from_run_entries(query_id: impl Into<String>, entries: &[RunEntry]) -> Self {
        let hits: Vec<Hit> = entries
            .iter()
            .map(|e| Hit { doc_id: e.doc_id.clone(), score: e.score })
            .collect();
        let depth = hits.len();
        Self { query_id: query_id.into(), hits, depth }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }

    pub fn to_run_entries(&self, tag: &str) -> Vec<RunEntry> {
        self.hits
            .iter()
            .enumerate()
            .map(|(i, h)| RunEntry {
                query_id: self.query_id.clone(),
                doc_id: h.doc_id.clone(),
                rank: i + 1,
                score: h.score,
                tag: tag.to_string(),
            })
            .collect()
    }

    /// Sorted, unique, tie-broken by doc_id, within depth.
    pub fn validate(&self) -> Result<()> {
        if self.hits.len() > self.depth {
            return Err(Error::Invalid(format!("{}: {} hits exceed depth {}", self.query_id, self.hits.len(), self.depth)));
        }
        let mut seen = HashSet::new();
        for h in &self.hits {
            if !seen.insert(h.doc_id.as_str()) {
                return Err(Error::Invalid(format!("{}: duplicate doc {}", self.query_id, h.doc_id)));
            }
        }
        for w in self.hits.windows(2) {
            if hit_order(&w[0], &w[1]) != Ordering::Less {
                return Err(Error::Invalid(format!(
                    "{}: {} must not precede {}",
                    self.query_id, w[0].doc_id, w[1].doc_id
                )));
            }
        }
        Ok(())
    }
}

/// Splits a run into per-query lists, in order of first appearance.
pub fn group_run(entries: &[RunEntry]) -> Vec<RankedList> {
    let mut out: Vec<RankedList> = Vec::new();
    let mut start = 0;
    for i in 1..=entries.len() {
        if i == entries.len() || entries[i].query_id != entries[start].query_id {
            let qid = entries[start].query_id.clone();
            let list = RankedList::from_run_entries(qid.clone(), &entries[start..i]);
            match out.iter_mut().find(|l| l.query_id == qid) {
                Some(existing) => {
                    existing.hits.extend(list.hits);
                    existing.depth = existing.hits.len();
                }
                None => out.push(list),
            }
            start = i;
        }
    }
    out
}

/// Anything that turns a text query into a ranked list.
pub trait Retriever: Send + Sync {
    fn search(&self, query_id: &str, query: &str, k: usize) -> Result<RankedList>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_doc_id() {
        let l = RankedList::from_scores("q", [("b".to_string(), 1.0), ("a".to_string(), 1.0), ("c".to_string(), 2.0)], 10);
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["c", "a", "b"]);
        l.validate().unwrap();
    }

    #[test]
    fn validate_catches_violations() {
        let bad = RankedList {
            query_id: "q".into(),
            hits: vec![Hit { doc_id: "b".into(), score: 1.0 }, Hit { doc_id: "a".into(), score: 1.0 }],
            depth: 5,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn group_keeps_order() {
        let e = |q: &str, d: &str, r| RunEntry { query_id: q.into(), doc_id: d.into(), rank: r, score: 1.0 / r as f64, tag: "t".into() };
        let lists = group_run(&[e("q2", "a", 1), e("q2", "b", 2), e("q1", "c", 1)]);
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].query_id, "q2");
        assert_eq!(lists[0].len(), 2);
    }
}
