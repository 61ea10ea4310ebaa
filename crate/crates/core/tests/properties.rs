//! Invariants over generated inputs.

use std::collections::HashSet;

use proptest::prelude::*;

use chiq::corpus::{format_run, parse_run, Passage, Qrels};
use chiq::fusion::{fuse, normalize_scores, FusionConfig};
use chiq::metrics::{mrr, ndcg_at_k, recall_at_k};
use chiq::retrieval::sparse::search_sparse;
use chiq::retrieval::{build_index, AnalyzerConfig, Bm25Params, RankedList};
use chiq::rewrite::extract_query;
use chiq::supervision::{parse_candidate_list, select_best};
use chiq::text::{token_count, truncate_back, truncate_front, PASSAGE_TOKEN_LIMIT};

const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "running", "runs", "the", "cats", "cat", "of", "energy", "rover"];

fn word_text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..=max).prop_map(|w| w.join(" "))
}

fn ranked(max_len: usize) -> impl Strategy<Value = RankedList> {
    prop::collection::btree_map(0u32..80, -50i32..50, 0..max_len).prop_map(|m| {
        RankedList::from_scores("q", m.into_iter().map(|(d, s)| (format!("d{d}"), s as f64 / 4.0)), 1000)
    })
}

fn ids(l: &RankedList) -> Vec<String> {
    l.doc_ids().map(str::to_string).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bm25_ignores_collection_order(docs in prop::collection::vec(word_text(12), 1..40), query in word_text(5), seed in any::<u64>()) {
        let passages: Vec<Passage> = docs.iter().enumerate().map(|(i, t)| Passage { doc_id: format!("p{i}"), text: t.clone() }).collect();
        let mut shuffled = passages.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed.rotate_left(i as u32) as usize) % n);
        }
        let analyzer = AnalyzerConfig::default();
        let a = build_index(&passages, &analyzer, PASSAGE_TOKEN_LIMIT).unwrap();
        let b = build_index(&shuffled, &analyzer, PASSAGE_TOKEN_LIMIT).unwrap();
        let ra = search_sparse(&a, &Bm25Params::default(), "q", &query, 100);
        let rb = search_sparse(&b, &Bm25Params::default(), "q", &query, 100);
        prop_assert_eq!(ids(&ra), ids(&rb));
        for (x, y) in ra.hits.iter().zip(&rb.hits) {
            prop_assert!((x.score - y.score).abs() < 1e-12);
        }
    }

    #[test]
    fn bm25_scores_sorted_and_positive(docs in prop::collection::vec(word_text(12), 1..40), query in word_text(5), k in 1usize..30) {
        let passages: Vec<Passage> = docs.iter().enumerate().map(|(i, t)| Passage { doc_id: format!("p{i}"), text: t.clone() }).collect();
        let index = build_index(&passages, &AnalyzerConfig::default(), PASSAGE_TOKEN_LIMIT).unwrap();
        let r = search_sparse(&index, &Bm25Params::default(), "q", &query, k);
        prop_assert!(r.hits.len() <= k);
        prop_assert!(r.validate().is_ok());
        prop_assert!(r.hits.iter().all(|h| h.score > 0.0));
    }

    #[test]
    fn normalized_scores_lie_in_unit_interval(l in ranked(30)) {
        let n = normalize_scores(&l);
        prop_assert_eq!(ids(&n), ids(&l));
        prop_assert!(n.hits.iter().all(|h| (0.0..=1.0).contains(&h.score)));
    }

    #[test]
    fn fusion_covers_union_and_is_sorted(a in ranked(30), b in ranked(30), alpha in 0.0f64..4.0) {
        let out = fuse(&a, &b, &FusionConfig { alpha, depth: 1000, ..Default::default() }).unwrap();
        let union: HashSet<String> = ids(&a).into_iter().chain(ids(&b)).collect();
        let got: HashSet<String> = ids(&out).into_iter().collect();
        prop_assert_eq!(got, union);
        prop_assert!(out.validate().is_ok());
        prop_assert!(out.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn fusion_respects_depth(a in ranked(30), b in ranked(30), depth in 1usize..20) {
        let out = fuse(&a, &b, &FusionConfig { depth, ..Default::default() }).unwrap();
        prop_assert!(out.len() <= depth);
    }

    #[test]
    fn metrics_are_bounded(l in ranked(30), judged in prop::collection::btree_map(0u32..80, 0u32..4, 0..15), thr in 1u32..3) {
        let mut qrels = Qrels::new(thr);
        for (d, g) in &judged {
            qrels.insert("q", format!("d{d}"), *g);
        }
        let m = mrr(&l, &qrels, thr, None);
        let n = ndcg_at_k(&l, &qrels, 3);
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        let any_relevant = judged.values().any(|g| *g >= thr);
        match recall_at_k(&l, &qrels, thr, 10) {
            Some(r) => prop_assert!(any_relevant && (0.0..=1.0).contains(&r)),
            None => prop_assert!(!any_relevant),
        }
    }

    #[test]
    fn ideal_ranking_has_unit_ndcg(judged in prop::collection::btree_map(0u32..80, 1u32..4, 1..15)) {
        let mut qrels = Qrels::new(1);
        for (d, g) in &judged {
            qrels.insert("q", format!("d{d}"), *g);
        }
        let l = RankedList::from_scores("q", judged.iter().map(|(d, g)| (format!("d{d}"), *g as f64)), 100);
        prop_assert!((ndcg_at_k(&l, &qrels, 3) - 1.0).abs() < 1e-12);
        prop_assert_eq!(mrr(&l, &qrels, 1, None), 1.0);
    }

    #[test]
    fn run_text_round_trips(l in ranked(30), tag in "[a-z][a-z0-9-]{0,8}") {
        let text = format_run(&l.to_run_entries(&tag)).unwrap();
        let parsed = parse_run(&text).unwrap();
        prop_assert_eq!(format_run(&parsed).unwrap(), text);
        prop_assert_eq!(parsed.iter().map(|e| e.doc_id.clone()).collect::<Vec<_>>(), ids(&l));
        prop_assert!(parsed.iter().enumerate().all(|(i, e)| e.rank == i + 1));
    }

    #[test]
    fn extract_query_never_panics_and_is_trimmed(s in ".{0,200}") {
        if let Some(q) = extract_query(&s) {
            prop_assert!(!q.is_empty());
            prop_assert_eq!(q.trim(), q.as_str());
        }
    }

    #[test]
    fn extract_query_finds_embedded_json(prefix in "[a-zA-Z :\n]{0,40}", query in "[a-z][a-z ]{0,30}[a-z]", suffix in "[a-z .\n]{0,40}") {
        let text = format!("{prefix}{{\"query\": \"{query}\"}}{suffix}");
        prop_assert_eq!(extract_query(&text), Some(query));
    }

    #[test]
    fn candidate_lists_are_capped_and_distinct(items in prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 0..12), m in 1usize..8) {
        let text: String = items.iter().enumerate().map(|(i, q)| format!("{}. {q}\n", i + 1)).collect();
        let parsed = parse_candidate_list(&text, m);
        prop_assert!(parsed.len() <= m);
        prop_assert_eq!(parsed.iter().collect::<HashSet<_>>().len(), parsed.len());
        let mut expected: Vec<&String> = Vec::new();
        for q in &items {
            if !expected.contains(&q) {
                expected.push(q);
            }
        }
        expected.truncate(m);
        prop_assert_eq!(parsed.iter().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn selection_picks_first_maximum(scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]), 1..10)) {
        let (i, zero) = select_best(&scores).unwrap();
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(scores[i], best);
        prop_assert!(scores[..i].iter().all(|s| *s < best));
        prop_assert_eq!(zero, best == 0.0);
    }

    #[test]
    fn truncation_keeps_token_budget(words in prop::collection::vec("[a-z]{1,5}", 0..60), sep in "[ \t\n]{1,3}", limit in 0usize..40) {
        let text = words.join(&sep);
        let back = truncate_back(&text, limit);
        let front = truncate_front(&text, limit);
        prop_assert_eq!(token_count(back), words.len().min(limit));
        prop_assert_eq!(token_count(front), words.len().min(limit));
        prop_assert!(text.starts_with(back));
        prop_assert!(text.ends_with(front));
    }
}
