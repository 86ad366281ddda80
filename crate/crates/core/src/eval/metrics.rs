use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

fn check_rate(fp: f64) -> Result<()> {
    if !(fp > 0.0 && fp < 1.0) {
        return Err(Error::InvalidRate(fp));
    }
    Ok(())
}

/// Smallest null score `t` such that the share of null scores strictly above
/// `t` is at most `fp`.
pub fn calibrate_threshold(null_scores: &[f64], fp: f64) -> Result<f64> {
    check_rate(fp)?;
    if null_scores.is_empty() {
        return Err(Error::EmptyNull);
    }
    let mut sorted = null_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let t = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == t {
            j += 1;
        }
        // sorted[j..] are strictly greater than t
        if (n - j) as f64 <= fp * n as f64 {
            return Ok(t);
        }
        i = j;
    }
    Ok(sorted[n - 1])
}

/// True-positive rate at the threshold calibrated on `neg` for rate `fp`.
pub fn tp_at_fp(pos: &[f64], neg: &[f64], fp: f64) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::EmptyList);
    }
    let tau = calibrate_threshold(neg, fp)?;
    Ok(pos.iter().filter(|p| **p > tau).count() as f64 / pos.len() as f64)
}

/// Mann-Whitney AUC: share of (pos, neg) pairs ordered correctly, ties
/// counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|p| (*p, true))
        .chain(neg.iter().map(|q| (*q, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of midranks (1-based) over positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = all[i..j].iter().filter(|(_, is_pos)| *is_pos).count();
        rank_sum += midrank * positives as f64;
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok((u / (np * nn)).clamp(0.0, 1.0))
}

/// Percentage of sentences (trimmed, lowercased) that repeat an earlier one.
pub fn sentence_duplicate_pct(sentences: &[String]) -> f64 {
    if sentences.is_empty() {
        return 0.0;
    }
    let unique: HashSet<String> = sentences.iter().map(|s| s.trim().to_lowercase()).collect();
    100.0 * (sentences.len() - unique.len()) as f64 / sentences.len() as f64
}

/// Distinct bigrams over all bigrams; 0 for fewer than two words.
pub fn distinct_2(text: &str) -> f64 {
    let words = text::words(text);
    let grams = text::ngrams(&words, 2);
    if grams.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&[String]> = grams.iter().copied().collect();
    unique.len() as f64 / grams.len() as f64
}

/// Percentage of 4-gram occurrences beyond the first of each; 0 for fewer
/// than four words.
pub fn fourgram_repeat_pct(text: &str) -> f64 {
    let words = text::words(text);
    let grams = text::ngrams(&words, 4);
    if grams.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&[String]> = grams.iter().copied().collect();
    100.0 * (grams.len() - unique.len()) as f64 / grams.len() as f64
}

/// Mean diversity metrics over a set of documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub sd_pct: f64,
    pub distinct2: f64,
    pub fourgram_pct: f64,
}

impl QualitySummary {
    pub fn of_documents<S: AsRef<[String]>>(docs: &[S]) -> Self {
        if docs.is_empty() {
            return Self::default();
        }
        let n = docs.len() as f64;
        let mut q = Self::default();
        for doc in docs {
            let sentences = doc.as_ref();
            let joined = sentences.join(" ");
            q.sd_pct += sentence_duplicate_pct(sentences);
            q.distinct2 += distinct_2(&joined);
            q.fourgram_pct += fourgram_repeat_pct(&joined);
        }
        q.sd_pct /= n;
        q.distinct2 /= n;
        q.fourgram_pct /= n;
        q
    }
}
