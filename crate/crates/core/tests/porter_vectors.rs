use chiq::retrieval::porter::stem;

#[test]
fn matches_reference_stemmer_on_vocabulary() {
    let text = include_str!("data/porter_vectors.txt");
    let mut mismatches = Vec::new();
    let mut total = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (word, expected) = line.split_once(' ').expect("word stem pair");
        total += 1;
        let got = stem(word);
        if got != expected {
            mismatches.push(format!("{word}: {got} != {expected}"));
        }
    }
    assert!(total > 1000, "only {total} vectors");
    assert!(mismatches.is_empty(), "{} of {total} differ: {:?}", mismatches.len(), &mismatches[..mismatches.len().min(20)]);
}
