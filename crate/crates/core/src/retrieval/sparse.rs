//! BM25 over an in-memory inverted index.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ unique(q)} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! The idf is the Lucene form, always positive, so scores are never negative.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::analyzer::{analyze, AnalyzerConfig};
use super::{RankedList, Retriever};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::text::{truncate_back, QUERY_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub const TOPIOCQA: Bm25Params = Bm25Params { k1: 0.9, b: 0.4 };
    pub const QRECC: Bm25Params = Bm25Params { k1: 0.82, b: 0.68 };

    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Invalid(format!("bm25 params out of range: k1={} b={}", self.k1, self.b)));
        }
        Ok(())
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::TOPIOCQA
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub(crate) postings: BTreeMap<String, Vec<Posting>>,
    pub(crate) doc_lengths: Vec<u32>,
    pub(crate) doc_ids: Vec<String>,
    pub(crate) texts: Vec<String>,
    pub(crate) avgdl: f64,
    pub(crate) analyzer: AnalyzerConfig,
    pub(crate) passage_token_limit: usize,
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn analyzer(&self) -> &AnalyzerConfig {
        &self.analyzer
    }

    pub fn passage_token_limit(&self) -> usize {
        self.passage_token_limit
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    /// Stored passage text (untruncated).
    pub fn text(&self, ordinal: usize) -> &str {
        &self.texts[ordinal]
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn passage(&self, doc_id: &str) -> Option<Passage> {
        self.ordinal(doc_id).map(|i| Passage { doc_id: self.doc_ids[i].clone(), text: self.texts[i].clone() })
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_freq(&self, term: &str, ordinal: usize) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&(ordinal as u32), |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Rebuilds from raw parts, recomputing avgdl. Used when loading from disk.
    pub(crate) fn from_parts(
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        doc_ids: Vec<String>,
        texts: Vec<String>,
        analyzer: AnalyzerConfig,
        passage_token_limit: usize,
    ) -> Self {
        let avgdl = mean_length(&doc_lengths);
        Self { postings, doc_lengths, doc_ids, texts, avgdl, analyzer, passage_token_limit }
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

/// Indexes passages after truncating each to `passage_token_limit`
/// whitespace tokens.
pub fn build_index(collection: &[Passage], analyzer: &AnalyzerConfig, passage_token_limit: usize) -> Result<InvertedIndex> {
    if collection.is_empty() {
        return Err(Error::Invalid("cannot index an empty collection".into()));
    }
    let mut seen = HashSet::new();
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(collection.len());
    let mut doc_ids = Vec::with_capacity(collection.len());
    let mut texts = Vec::with_capacity(collection.len());

    for (ordinal, passage) in collection.iter().enumerate() {
        if !seen.insert(passage.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(passage.doc_id.clone()));
        }
        let terms = analyze(truncate_back(&passage.text, passage_token_limit), analyzer);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &terms {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting { doc: ordinal as u32, tf: count });
        }
        doc_lengths.push(terms.len() as u32);
        doc_ids.push(passage.doc_id.clone());
        texts.push(passage.text.clone());
    }
    Ok(InvertedIndex::from_parts(
        postings,
        doc_lengths,
        doc_ids,
        texts,
        analyzer.clone(),
        passage_token_limit,
    ))
}

pub fn idf(num_docs: usize, doc_freq: usize) -> f64 {
    let n = num_docs as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn unique_terms(terms: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    terms.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
}

fn term_weight(tf: f64, dl: f64, avgdl: f64, params: &Bm25Params) -> f64 {
    let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// Score of one document for already analyzed query terms.
pub fn bm25_score(index: &InvertedIndex, params: &Bm25Params, query_terms: &[String], ordinal: usize) -> f64 {
    let n = index.num_docs();
    let dl = index.doc_lengths[ordinal] as f64;
    unique_terms(query_terms)
        .into_iter()
        .map(|t| {
            let tf = index.term_freq(t, ordinal);
            if tf == 0 {
                0.0
            } else {
                idf(n, index.doc_freq(t)) * term_weight(tf as f64, dl, index.avgdl, params)
            }
        })
        .sum()
}

/// Top-k documents containing at least one query term.
///
/// The query is cut to 32 whitespace tokens before analysis.
pub fn search_sparse(index: &InvertedIndex, params: &Bm25Params, query_id: &str, query: &str, k: usize) -> RankedList {
    let terms = analyze(truncate_back(query, QUERY_TOKEN_LIMIT), &index.analyzer);
    let n = index.num_docs();
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for t in unique_terms(&terms) {
        let list = index.postings(t);
        if list.is_empty() {
            continue;
        }
        let w = idf(n, list.len());
        for p in list {
            let dl = index.doc_lengths[p.doc as usize] as f64;
            *acc.entry(p.doc).or_insert(0.0) += w * term_weight(p.tf as f64, dl, index.avgdl, params);
        }
    }
    RankedList::from_scores(
        query_id,
        acc.into_iter().map(|(doc, s)| (index.doc_ids[doc as usize].clone(), s)),
        k,
    )
}

/// BM25 search with a fixed parameter set.
#[derive(Debug, Clone)]
pub struct SparseRetriever {
    pub index: InvertedIndex,
    pub params: Bm25Params,
}

impl SparseRetriever {
    pub fn new(index: InvertedIndex, params: Bm25Params) -> Self {
        Self { index, params }
    }

    /// Refuses to search with an analyzer that differs from the index's.
    pub fn with_query_analyzer(index: InvertedIndex, params: Bm25Params, query_analyzer: &AnalyzerConfig) -> Result<Self> {
        let built = index.analyzer.fingerprint();
        let query = query_analyzer.fingerprint();
        if built != query {
            return Err(Error::AnalyzerMismatch { index: built, query });
        }
        Ok(Self::new(index, params))
    }
}

impl Retriever for SparseRetriever {
    fn search(&self, query_id: &str, query: &str, k: usize) -> Result<RankedList> {
        Ok(search_sparse(&self.index, &self.params, query_id, query, k))
    }
}
