//! Lexical diversity (distinct n-grams) and turn length.
//!
//! Tokenization (version `v1`): lowercase, drop every character that is
//! neither alphanumeric nor whitespace, split on whitespace. N-grams never
//! cross response boundaries.

use std::collections::HashSet;

/// Identifier stamped on reports so numbers can be compared like for like.
pub const TOKENIZATION_VERSION: &str = "v1";

pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Unique n-grams over total n-grams, pooled across `responses`.
/// Returns 0 when no response has at least `n` tokens.
pub fn dist_n<S: AsRef<str>>(responses: &[S], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut unique: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for response in responses {
        let tokens = tokenize(response.as_ref());
        for gram in tokens.windows(n) {
            total += 1;
            unique.insert(gram.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn mean_words<S: AsRef<str>>(responses: &[S]) -> Option<f64> {
    if responses.is_empty() {
        return None;
    }
    let total: usize = responses.iter().map(|r| word_count(r.as_ref())).sum();
    Some(total as f64 / responses.len() as f64)
}
