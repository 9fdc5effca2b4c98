//! Tokenization and n-gram counting shared by the caption metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// A lowercase token stream; no empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> TokenSequence {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, strips punctuation to spaces, splits on whitespace, drops
/// empties. Deterministic.
pub fn tokenize(text: &str) -> TokenSequence {
    let tokens = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    TokenSequence::new(tokens)
}

/// Counts of all n-grams of order `n`, keyed by the joined gram.
pub fn ngram_counts(seq: &TokenSequence, n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || seq.len() < n {
        return counts;
    }
    for window in seq.tokens.windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    counts
}
