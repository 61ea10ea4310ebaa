//! Passage collections, conversation sessions, qrels and TREC run files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub question: String,
    #[serde(default)]
    pub response: String,
}

impl ConversationTurn {
    pub fn new(question: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            response: response.into(),
        }
    }
}

/// One evaluation point: the prior history `turns` and the question to answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSession {
    pub session_id: String,
    pub turn_id: String,
    pub turns: Vec<ConversationTurn>,
    pub current_question: String,
}

impl ConversationSession {
    /// Position of the current question within its conversation, 1-based.
    pub fn turn_index(&self) -> usize {
        self.turns.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectionFormat {
    Tsv,
    #[serde(rename = "jsonl")]
    JsonLines,
}

impl CollectionFormat {
    /// Picks the format from the file extension; anything but `.jsonl`/`.json` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CollectionFormat::JsonLines,
            _ => CollectionFormat::Tsv,
        }
    }
}

#[derive(Deserialize)]
struct JsonPassage {
    id: String,
    contents: String,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn parse_passage(path: &Path, line_no: usize, line: &str, format: CollectionFormat) -> Result<Passage> {
    let passage = match format {
        CollectionFormat::Tsv => {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected doc_id<TAB>text"))?;
            Passage {
                doc_id: id.trim().to_string(),
                text: text.to_string(),
            }
        }
        CollectionFormat::JsonLines => {
            let rec: JsonPassage = serde_json::from_str(line)
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            Passage {
                doc_id: rec.id,
                text: rec.contents,
            }
        }
    };
    if passage.doc_id.is_empty() {
        return Err(Error::parse(path, line_no, "empty doc_id"));
    }
    if passage.text.trim().is_empty() {
        return Err(Error::parse(path, line_no, format!("empty text for {}", passage.doc_id)));
    }
    Ok(passage)
}

/// Reads a passage collection in file order. Blank lines are skipped.
pub fn load_collection(path: &Path, format: CollectionFormat) -> Result<Vec<Passage>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let passage = parse_passage(path, line_no, &line, format)?;
        if !seen.insert(passage.doc_id.clone()) {
            return Err(Error::DuplicateDocId(passage.doc_id));
        }
        out.push(passage);
    }
    Ok(out)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::Invalid(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct SessionRecord {
    session_id: String,
    turn_id: String,
    history: Vec<ConversationTurn>,
    question: String,
}

/// Loads json-lines session records and groups them by `session_id`.
///
/// Sessions keep the order in which their ids first appear; within a session,
/// records are sorted by turn index (history length + 1).
pub fn load_sessions(path: &Path) -> Result<Vec<ConversationSession>> {
    let mut groups: Vec<(String, Vec<ConversationSession>)> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut keys = HashSet::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SessionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, line_no, format!("record {line_no}: {e}")))?;
        if rec.question.trim().is_empty() {
            return Err(Error::parse(path, line_no, "empty question"));
        }
        if let Some(i) = rec.history.iter().position(|t| t.question.trim().is_empty()) {
            return Err(Error::parse(path, line_no, format!("history turn {} has an empty question", i + 1)));
        }
        if !keys.insert((rec.session_id.clone(), rec.turn_id.clone())) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate (session_id, turn_id) = ({}, {})", rec.session_id, rec.turn_id),
            ));
        }
        let session = ConversationSession {
            session_id: rec.session_id,
            turn_id: rec.turn_id,
            turns: rec.history,
            current_question: rec.question,
        };
        let slot = *by_id.entry(session.session_id.clone()).or_insert_with(|| {
            groups.push((session.session_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(session);
    }

    let mut out = Vec::new();
    for (session_id, mut records) in groups {
        let in_order = records.windows(2).all(|w| w[0].turn_index() + 1 == w[1].turn_index());
        if !in_order {
            log::warn!("session {session_id}: non-contiguous turn indices, re-sorting");
            records.sort_by_key(ConversationSession::turn_index);
        }
        out.extend(records);
    }
    Ok(out)
}

/// Graded relevance judgments. Unjudged pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    pub binary_threshold: u32,
}

impl Qrels {
    pub fn new(binary_threshold: u32) -> Self {
        Self {
            judgments: BTreeMap::new(),
            binary_threshold,
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|q| q.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id) >= self.binary_threshold
    }

    /// All judgments for one query, including zero grades.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.judgments.get(query_id).is_some_and(|j| !j.is_empty())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Docs at or above the threshold for `query_id`.
    pub fn relevant_docs<'a>(&'a self, query_id: &str, threshold: u32) -> impl Iterator<Item = &'a str> + 'a {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(move |j| j.iter().filter(move |(_, &g)| g >= threshold).map(|(d, _)| d.as_str()))
    }

    /// The highest-graded relevant doc (ties by doc_id), the `p*` of a turn.
    pub fn gold_doc(&self, query_id: &str) -> Option<&str> {
        let judged = self.judgments.get(query_id)?;
        judged
            .iter()
            .filter(|(_, &g)| g >= self.binary_threshold)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(d, _)| d.as_str())
    }

    /// Restricts to the judgments of one query.
    pub fn slice(&self, query_id: &str) -> Qrels {
        let mut out = Qrels::new(self.binary_threshold);
        if let Some(j) = self.judgments.get(query_id) {
            out.judgments.insert(query_id.to_string(), j.clone());
        }
        out
    }
}

/// Reads TREC qrels: `query_id literal doc_id grade`.
pub fn load_qrels(path: &Path, threshold: u32) -> Result<Qrels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, threshold).map_err(|(line, msg)| Error::parse(path, line, msg))
}

pub fn parse_qrels(text: &str, threshold: u32) -> std::result::Result<Qrels, (usize, String)> {
    let mut qrels = Qrels::new(threshold);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err((line_no, format!("expected 4 columns, found {}", cols.len())));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| (line_no, format!("non-integer grade {:?}", cols[3])))?;
        if grade < 0 {
            return Err((line_no, format!("negative grade {grade}")));
        }
        qrels.insert(cols[0], cols[2], grade as u32);
    }
    Ok(qrels)
}

/// Drops sessions whose turn has no relevant passage. Returns the kept
/// sessions and the number dropped.
pub fn drop_unjudged(sessions: Vec<ConversationSession>, qrels: &Qrels) -> (Vec<ConversationSession>, usize) {
    let before = sessions.len();
    let kept: Vec<_> = sessions
        .into_iter()
        .filter(|s| qrels.gold_doc(&s.turn_id).is_some())
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Checks contiguous ranks and non-increasing scores per query.
///
/// Entries of one query must be adjacent; ranks start at 1.
pub fn validate_run(entries: &[RunEntry]) -> Result<()> {
    let mut finished = HashSet::new();
    let mut prev: Option<&RunEntry> = None;
    for e in entries {
        match prev {
            Some(p) if p.query_id == e.query_id => {
                if e.rank != p.rank + 1 {
                    return Err(Error::InvalidRun(format!("rank gap at {}", e.query_id)));
                }
                if e.score > p.score {
                    return Err(Error::InvalidRun(format!("score inversion at {} rank {}", e.query_id, e.rank)));
                }
            }
            _ => {
                if let Some(p) = prev {
                    finished.insert(p.query_id.as_str());
                }
                if finished.contains(e.query_id.as_str()) {
                    return Err(Error::InvalidRun(format!("query {} is not contiguous", e.query_id)));
                }
                if e.rank != 1 {
                    return Err(Error::InvalidRun(format!("rank gap at {}", e.query_id)));
                }
            }
        }
        prev = Some(e);
    }
    Ok(())
}

pub fn format_run(entries: &[RunEntry]) -> Result<String> {
    validate_run(entries)?;
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{} Q0 {} {} {:.6} {}", e.query_id, e.doc_id, e.rank, e.score, e.tag)
            .expect("write to String");
    }
    Ok(out)
}

/// Writes `query_id Q0 doc_id rank score tag` lines, score at 6 decimals.
pub fn write_run(entries: &[RunEntry], path: &Path) -> Result<()> {
    let text = format_run(entries)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_run(text: &str) -> std::result::Result<Vec<RunEntry>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err((line_no, format!("expected 6 columns, found {}", cols.len())));
        }
        let rank = cols[3]
            .parse()
            .map_err(|_| (line_no, format!("bad rank {:?}", cols[3])))?;
        let score = cols[4]
            .parse()
            .map_err(|_| (line_no, format!("bad score {:?}", cols[4])))?;
        out.push(RunEntry {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
    }
    Ok(out)
}

pub fn read_run(path: &Path) -> Result<Vec<RunEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tsv_and_jsonl_collections() {
        let f = temp_file("d1\thello world\n\n", ".tsv");
        let docs = load_collection(f.path(), CollectionFormat::Tsv).unwrap();
        assert_eq!(docs, vec![Passage { doc_id: "d1".into(), text: "hello world".into() }]);

        let f = temp_file("{\"id\":\"d2\",\"contents\":\"abc\"}\n", ".jsonl");
        assert_eq!(CollectionFormat::from_path(f.path()), CollectionFormat::JsonLines);
        let docs = load_collection(f.path(), CollectionFormat::JsonLines).unwrap();
        assert_eq!(docs[0].doc_id, "d2");
        assert_eq!(docs[0].text, "abc");
    }

    #[test]
    fn duplicate_doc_id_is_named() {
        let f = temp_file("d1\ta\nd1\tb\n", ".tsv");
        let err = load_collection(f.path(), CollectionFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("\"d1\""), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = temp_file("d1\ta\nnot-a-tab-line\n", ".tsv");
        match load_collection(f.path(), CollectionFormat::Tsv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sessions_grouped_and_sorted() {
        let f = temp_file(
            concat!(
                r#"{"session_id":"s1","turn_id":"s1_2","history":[{"question":"q1","response":"r1"}],"question":"q2"}"#, "\n",
                r#"{"session_id":"s2","turn_id":"s2_1","history":[],"question":"x"}"#, "\n",
                r#"{"session_id":"s1","turn_id":"s1_1","history":[],"question":"q1"}"#, "\n",
            ),
            ".jsonl",
        );
        let sessions = load_sessions(f.path()).unwrap();
        let ids: Vec<_> = sessions.iter().map(|s| s.turn_id.as_str()).collect();
        assert_eq!(ids, ["s1_1", "s1_2", "s2_1"]);
        assert!(sessions[0].turns.is_empty());
        assert_eq!(sessions[1].turns.len(), 1);
    }

    #[test]
    fn session_missing_question_is_schema_error() {
        let f = temp_file(
            "{\"session_id\":\"s\",\"turn_id\":\"t\",\"history\":[]}\n",
            ".jsonl",
        );
        let err = load_sessions(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(err.to_string().contains("question"));
    }

    #[test]
    fn qrels_threshold_is_not_destructive() {
        let q = parse_qrels("q1 0 d1 2\nq1 0 d2 1\n", 2).unwrap();
        assert_eq!(q.grade("q1", "d1"), 2);
        assert!(q.is_relevant("q1", "d1"));
        assert_eq!(q.grade("q1", "d2"), 1);
        assert!(!q.is_relevant("q1", "d2"));
        assert_eq!(q.grade("q1", "nope"), 0);
        assert_eq!(q.grade("q9", "d1"), 0);
    }

    #[test]
    fn qrels_rejects_bad_grades() {
        assert!(parse_qrels("q1 0 d3 -1\n", 1).is_err());
        assert!(parse_qrels("q1 0 d3 high\n", 1).is_err());
    }

    #[test]
    fn gold_doc_prefers_highest_grade() {
        let q = parse_qrels("q1 0 b 1\nq1 0 c 2\nq1 0 a 2\nq2 0 z 0\n", 1).unwrap();
        assert_eq!(q.gold_doc("q1"), Some("a"));
        assert_eq!(q.gold_doc("q2"), None);
    }

    fn entry(q: &str, d: &str, rank: usize, score: f64) -> RunEntry {
        RunEntry { query_id: q.into(), doc_id: d.into(), rank, score, tag: "chiq".into() }
    }

    #[test]
    fn run_line_format() {
        let text = format_run(&[entry("q1", "d9", 1, 12.5)]).unwrap();
        assert_eq!(text, "q1 Q0 d9 1 12.500000 chiq\n");
    }

    #[test]
    fn run_rank_gap_rejected() {
        let err = format_run(&[entry("q1", "a", 1, 2.0), entry("q1", "b", 3, 1.0)]).unwrap_err();
        assert_eq!(err.to_string(), "invalid run: rank gap at q1");
        assert!(format_run(&[entry("q1", "a", 1, 1.0), entry("q1", "b", 2, 2.0)]).is_err());
    }

    #[test]
    fn run_round_trip() {
        let entries = vec![
            entry("q1", "d1", 1, 3.25),
            entry("q1", "d2", 2, 1.5),
            entry("q2", "d7", 1, 0.125),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_run(&entries, f.path()).unwrap();
        assert_eq!(read_run(f.path()).unwrap(), entries);
    }
}
