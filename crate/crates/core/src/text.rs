//! Whitespace-token budgets.
//!
//! Length limits for queries, model inputs and passages are counted in
//! whitespace-separated tokens, an approximation of model tokens that does not
//! tie the pipeline to one vocabulary.

pub const QUERY_TOKEN_LIMIT: usize = 32;
pub const INPUT_TOKEN_LIMIT: usize = 512;
pub const PASSAGE_TOKEN_LIMIT: usize = 384;

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Byte offsets of the start of every whitespace token.
fn token_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            starts.push(i);
            in_token = true;
        }
    }
    starts
}

/// Keeps the first `limit` tokens. Text within the kept span is untouched.
pub fn truncate_back(text: &str, limit: usize) -> &str {
    let starts = token_starts(text);
    if starts.len() <= limit {
        return text.trim_end();
    }
    text[..starts[limit]].trim_end()
}

/// Keeps the last `limit` tokens, dropping older content from the front.
pub fn truncate_front(text: &str, limit: usize) -> &str {
    let starts = token_starts(text);
    if starts.len() <= limit {
        return text.trim_start();
    }
    if limit == 0 {
        return "";
    }
    &text[starts[starts.len() - limit]..]
}
