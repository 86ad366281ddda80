//! Per-candidate filters, bonuses and the selection rule.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::embedders::{unit_cosine, UnitEmbedding};
use crate::error::{Error, Result};
use crate::keycore::{membership_sign, FlagPattern, PivotSet};
use crate::text;

/// How per-channel signed cosines are turned into a watermark score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreTransform {
    /// sum_j tanh(kappa * sigma_j)
    #[default]
    Tanh,
    /// sum_j sigma_j, the untransformed ablation.
    Linear,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    #[default]
    None,
    Ngram,
    Semantic,
}

/// One scored member of a candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSentence {
    pub text: String,
    pub embedding: UnitEmbedding,
    /// Unsigned cosine against each pivot.
    pub cosines: Vec<f64>,
    /// r_j * cos(e, v_j).
    pub sigma: Vec<f64>,
    pub rho_ngram: f64,
    pub rho_sem: f64,
    pub novelty: f64,
    pub s_wm: f64,
    pub score: f64,
    pub matched: bool,
    pub filtered_by: FilterStage,
}

/// Share of the candidate's distinct word n-grams that already occur in the
/// context. Zero when the candidate has fewer than `n` words.
pub fn ngram_overlap_ratio(candidate: &str, context: &str, n: usize) -> f64 {
    let ctx = text::ngram_set(&text::words(context), n);
    ngram_overlap_with(&text::words(candidate), &ctx, n)
}

pub(crate) fn ngram_overlap_with(
    candidate_words: &[String],
    context_ngrams: &HashSet<Vec<String>>,
    n: usize,
) -> f64 {
    let grams: HashSet<&[String]> = text::ngrams(candidate_words, n).into_iter().collect();
    if grams.is_empty() {
        return 0.0;
    }
    let shared = grams
        .iter()
        .filter(|g| context_ngrams.contains(**g))
        .count();
    shared as f64 / grams.len() as f64
}

/// Largest cosine between `e` and any history embedding; 0 for an empty history.
pub fn semantic_similarity_ratio(e: &UnitEmbedding, history: &[UnitEmbedding]) -> f64 {
    history
        .iter()
        .map(|h| unit_cosine(e.as_slice(), h.as_slice()))
        .reduce(f64::max)
        .unwrap_or(0.0)
}

pub fn diversity_bonus(e: &UnitEmbedding, history: &[UnitEmbedding]) -> f64 {
    1.0 - semantic_similarity_ratio(e, history)
}

/// Fraction of the candidate's unique words that are absent from `seen_vocab`.
pub fn novelty_bonus(candidate: &str, seen_vocab: &HashSet<String>) -> f64 {
    let vocab = text::vocabulary(candidate);
    if vocab.is_empty() {
        return 0.0;
    }
    let unseen = vocab.iter().filter(|w| !seen_vocab.contains(*w)).count();
    unseen as f64 / vocab.len() as f64
}

pub fn watermark_score(sigma: &[f64], kappa: f64) -> f64 {
    sigma.iter().map(|s| (kappa * s).tanh()).sum()
}

pub(crate) fn transformed_score(sigma: &[f64], kappa: f64, transform: ScoreTransform) -> f64 {
    match transform {
        ScoreTransform::Tanh => watermark_score(sigma, kappa),
        ScoreTransform::Linear => sigma.iter().sum(),
    }
}

pub fn total_score(
    s_wm: f64,
    diversity: f64,
    novelty: f64,
    lambda_div: f64,
    lambda_nov: f64,
) -> f64 {
    s_wm + lambda_div * diversity + lambda_nov * novelty
}

/// Indices of pool members whose channel signs match `flags`; updates
/// `matched` on every candidate.
pub fn match_channels(
    pool: &mut [CandidateSentence],
    pivots: &PivotSet,
    flags: &FlagPattern,
) -> Vec<usize> {
    debug_assert_eq!(pivots.channels(), flags.len());
    let mut out = Vec::new();
    for (i, cand) in pool.iter_mut().enumerate() {
        cand.matched = cand
            .cosines
            .iter()
            .zip(flags.as_slice())
            .all(|(cos, r)| membership_sign(*cos) == *r);
        if cand.matched {
            out.push(i);
        }
    }
    out
}

/// q_i = exp(eps * S_i) / sum_k exp(eps * S_k), evaluated after shifting by
/// the maximum score.
pub fn softmax_probabilities(scores: &[f64], epsilon: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (epsilon * (s - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Samples an index into `matched` from the softmax over their total scores.
pub fn softmax_select(
    matched: &[CandidateSentence],
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    let scores: Vec<f64> = matched.iter().map(|c| c.score).collect();
    sample_softmax(&scores, epsilon, rng)
}

pub(crate) fn sample_softmax(scores: &[f64], epsilon: f64, rng: &mut dyn RngCore) -> Result<usize> {
    match scores.len() {
        0 => Err(Error::EmptyPool),
        1 => Ok(0),
        _ => {
            let probs = softmax_probabilities(scores, epsilon);
            let dist = WeightedIndex::new(&probs)
                .map_err(|e| Error::Backend(format!("degenerate selection weights: {e}")))?;
            Ok(dist.sample(rng))
        }
    }
}
