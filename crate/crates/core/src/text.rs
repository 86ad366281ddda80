//! Word tokenization and n-gram helpers shared by the filters, the novelty
//! bonus and the quality metrics.

use std::collections::HashSet;

/// Lowercased words of `text`, split on whitespace with punctuation stripped
/// from token edges. Tokens that are pure punctuation are dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| {
            tok.trim_matches(|ch: char| !ch.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Unique words of `text`.
pub fn vocabulary(text: &str) -> HashSet<String> {
    words(text).into_iter().collect()
}

/// All contiguous word n-grams in order, including repeats.
pub fn ngrams(words: &[String], n: usize) -> Vec<&[String]> {
    if n == 0 || words.len() < n {
        return Vec::new();
    }
    words.windows(n).collect()
}

/// Distinct word n-grams.
pub fn ngram_set(words: &[String], n: usize) -> HashSet<Vec<String>> {
    ngrams(words, n)
        .into_iter()
        .map(<[String]>::to_vec)
        .collect()
}
