use serde::{Deserialize, Serialize};

use super::porter;
use crate::gateway::sha256_hex;

/// Lucene's default English stop set.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "no", "not", "of",
    "on", "or", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to", "was", "will", "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stemmer {
    None,
    Porter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopwordList {
    None,
    English,
}

impl StopwordList {
    pub fn words(self) -> &'static [&'static str] {
        match self {
            StopwordList::None => &[],
            StopwordList::English => ENGLISH_STOPWORDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub stemmer: Stemmer,
    pub stopwords: StopwordList,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            stemmer: Stemmer::Porter,
            stopwords: StopwordList::English,
        }
    }
}

impl AnalyzerConfig {
    pub fn raw() -> Self {
        Self {
            lowercase: false,
            strip_punctuation: false,
            stemmer: Stemmer::None,
            stopwords: StopwordList::None,
        }
    }

    /// Hash of the configuration and the stopword contents.
    pub fn fingerprint(&self) -> String {
        let material = serde_json::json!({
            "version": 1,
            "config": self,
            "stopwords": self.stopwords.words(),
        });
        sha256_hex(material.to_string().as_bytes())[..16].to_string()
    }
}

/// lowercase → punctuation strip → whitespace split → stopwords → stemming.
pub fn analyze(text: &str, config: &AnalyzerConfig) -> Vec<String> {
    let mut s = if config.lowercase { text.to_lowercase() } else { text.to_string() };
    if config.strip_punctuation {
        s = s
            .chars()
            .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
            .collect();
    }
    let stop = config.stopwords.words();
    s.split_whitespace()
        .filter(|t| !stop.contains(t))
        .map(|t| match config.stemmer {
            Stemmer::Porter => porter::stem(t),
            Stemmer::None => t.to_string(),
        })
        .collect()
}
