use std::collections::HashMap;
use std::path::Path;

use chiq::corpus::{load_collection, load_sessions, parse_qrels, CollectionFormat, Passage};
use chiq::gateway::{Gateway, MatchKind};
use chiq::retrieval::{build_index, AnalyzerConfig, Bm25Params, SparseRetriever};
use chiq::supervision::{build_ft_dataset, Ablation, SupervisionConfig, SupervisionInputs};
use chiq::text::PASSAGE_TOKEN_LIMIT;

fn toy(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy").join(name)
}

#[test]
fn skips_are_counted_and_fallback_used() {
    let passages = load_collection(&toy("collection.tsv"), CollectionFormat::from_path(&toy("collection.tsv"))).unwrap();
    let sessions = load_sessions(&toy("sessions.jsonl")).unwrap();
    let index = build_index(&passages, &AnalyzerConfig::default(), PASSAGE_TOKEN_LIMIT).unwrap();
    let retriever = SparseRetriever::new(index, Bm25Params::default());
    let by_id: HashMap<String, Passage> = passages.into_iter().map(|p| (p.doc_id.clone(), p)).collect();
    let lookup = |id: &str| by_id.get(id).cloned();
    let enhanced = HashMap::new();

    // fig1_4 is judged; coffee_1 points at a passage absent from the collection;
    // every other turn is unjudged.
    let qrels = parse_qrels("fig1_4 0 bio04 2\ncoffee_1 0 missing 1\n", 1).unwrap();
    let gateway = Gateway::mock();
    gateway.register_mock(MatchKind::Substring, "", "I cannot produce a list, sorry.").unwrap();
    let inputs = SupervisionInputs { gateway: &gateway, retriever: &retriever, qrels: &qrels, passages: &lookup, enhanced: &enhanced };

    let ds = build_ft_dataset(&inputs, &sessions, &SupervisionConfig::default()).unwrap();
    assert_eq!(ds.stats.sessions, sessions.len());
    assert_eq!(ds.stats.records, 1);
    assert_eq!(ds.stats.skipped_missing_gold, 1);
    assert_eq!(ds.stats.skipped_unjudged, sessions.len() - 2);
    assert_eq!(ds.stats.list_fallbacks, 1);
    assert_eq!(ds.records[0].turn_id, "fig1_4");
    assert_eq!(ds.records[0].target_text, "I cannot produce a list, sorry.");
    // Five enhancement calls build the prompt history, then one list call.
    assert_eq!(gateway.call_count(), 6);

    // Without the gold passage the missing document no longer blocks the turn.
    let config = SupervisionConfig { ablation: Ablation::NoGold, ..Default::default() };
    let ds = build_ft_dataset(&inputs, &sessions, &config).unwrap();
    assert_eq!(ds.stats.records, 2);
    assert_eq!(ds.stats.skipped_missing_gold, 0);
    // Neither turn can score: the refusal text retrieves nothing judged.
    assert_eq!(ds.stats.zero_signal, 2);
}
