//! Blind detection.
//!
//! Sentences are embedded and projected on the key's pivots; the target flag
//! of each channel is recovered by majority vote over the sentence responses,
//! the responses are aligned and passed through tanh, and the mean alignment
//! is turned into a z-statistic.
//!
//! All reductions sum values in sorted order, so the statistic is a function
//! of the multiset of sentences and is bit-identical under any reordering.

use serde::{Deserialize, Serialize};

use crate::embedders::{Embedder, UnitEmbedding};
use crate::error::{Error, Result};
use crate::keycore::{derive_pivots, step_flag_pattern, FlagPattern, PivotSet, PrivateKey};

const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "e.g.", "i.e.", "cf.",
    "fig.", "inc.", "ltd.", "co.", "no.", "approx.", "dept.", "gen.", "gov.", "lt.", "col.",
    "sgt.", "capt.", "mt.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.",
];

/// Splits on runs of `.`, `!` or `?` followed by whitespace or end of text,
/// except after a known abbreviation. Segments are trimmed; empty ones are
/// dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if !matches!(ch, '.' | '!' | '?') {
            continue;
        }
        let mut end = i + ch.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if matches!(next, '.' | '!' | '?') {
                end = j + next.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let at_boundary = chars.peek().is_none_or(|(_, next)| next.is_whitespace());
        if !at_boundary {
            continue;
        }
        let segment = &text[start..end];
        let last_word = segment
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("")
            .to_lowercase();
        if ch == '.' && ABBREVIATIONS.contains(&last_word.as_str()) {
            continue;
        }
        push_trimmed(&mut out, segment);
        start = end;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, segment: &str) {
    let s = segment.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// n x c cosines between sentence embeddings and pivots, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResponseMatrix {
    n: usize,
    c: usize,
    entries: Vec<f64>,
}

impl ChannelResponseMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if n == 0 || c == 0 {
            return Err(Error::TooFewSamples {
                sentences: n,
                channels: c,
            });
        }
        let mut entries = Vec::with_capacity(n * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(Error::Config(format!("response {bad} outside [-1, 1]")));
            }
            entries.extend(row);
        }
        Ok(Self { n, c, entries })
    }

    pub fn from_embeddings(embeddings: &[UnitEmbedding], pivots: &PivotSet) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::TooFewSamples {
                sentences: 0,
                channels: pivots.channels(),
            });
        }
        let mut entries = Vec::with_capacity(embeddings.len() * pivots.channels());
        for e in embeddings {
            entries.extend(pivots.cosines(e.as_slice())?);
        }
        Ok(Self {
            n: embeddings.len(),
            c: pivots.channels(),
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.c..(i + 1) * self.c]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.get(i, j))
    }
}

/// Embeds `sentences` and computes their responses against `pivots`.
pub fn channel_response_matrix(
    sentences: &[String],
    embedder: &dyn Embedder,
    pivots: &PivotSet,
) -> Result<ChannelResponseMatrix> {
    if sentences.is_empty() {
        return Err(Error::TooFewSamples {
            sentences: 0,
            channels: pivots.channels(),
        });
    }
    ChannelResponseMatrix::from_embeddings(&embedder.embed_batch(sentences)?, pivots)
}

/// Majority vote per channel: the sign of the column sum, with a zero sum
/// voting +1.
pub fn infer_flags(responses: &ChannelResponseMatrix) -> FlagPattern {
    let flags = (0..responses.channels())
        .map(|j| {
            if sorted_sum(responses.column(j).collect()) >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    FlagPattern::new(flags).expect("at least one channel")
}

/// tanh(kappa * C_ij * r_j) evidence per sentence and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    n: usize,
    c: usize,
    entries: Vec<f64>,
}

impl AlignmentMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(n * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: row.len(),
                });
            }
            entries.extend(row);
        }
        Ok(Self { n, c, entries })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.c + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

pub fn alignment_matrix(
    responses: &ChannelResponseMatrix,
    flags: &FlagPattern,
    kappa: f64,
) -> AlignmentMatrix {
    assert_eq!(
        flags.len(),
        responses.channels(),
        "flag count must match channels"
    );
    let c = responses.channels();
    let entries = responses
        .entries
        .iter()
        .enumerate()
        .map(|(k, x)| (kappa * x * flags.sign(k % c)).tanh())
        .collect();
    AlignmentMatrix {
        n: responses.rows(),
        c,
        entries,
    }
}

/// Per-position alignment for the step-keyed scheme: row i uses the flags of
/// step i.
fn step_alignment_matrix(
    responses: &ChannelResponseMatrix,
    key: &PrivateKey,
    kappa: f64,
) -> Result<AlignmentMatrix> {
    let c = responses.channels();
    let mut entries = Vec::with_capacity(responses.rows() * c);
    for i in 0..responses.rows() {
        let flags = step_flag_pattern(key, i, c)?;
        entries.extend(
            responses
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, x)| (kappa * x * flags.sign(j)).tanh()),
        );
    }
    Ok(AlignmentMatrix {
        n: responses.rows(),
        c,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStatistic {
    pub z: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// z = mean(A) * sqrt(nc) / sd(A), with the population standard deviation
/// (divisor nc).
pub fn z_statistic(alignment: &AlignmentMatrix) -> Result<ZStatistic> {
    let count = alignment.entries.len();
    if count < 2 {
        return Err(Error::TooFewSamples {
            sentences: alignment.rows(),
            channels: alignment.channels(),
        });
    }
    let nc = count as f64;
    let mean = sorted_sum(alignment.entries.clone()) / nc;
    let sq_dev = alignment
        .entries
        .iter()
        .map(|a| (a - mean).powi(2))
        .collect();
    let stddev = (sorted_sum(sq_dev) / nc).sqrt();
    if stddev < 1e-12 {
        return Err(Error::ZeroVariance);
    }
    Ok(ZStatistic {
        z: mean * nc.sqrt() / stddev,
        mean,
        stddev,
    })
}

/// Detector parameters. `tau` is calibrated externally on unwatermarked text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub channels: usize,
    pub dimension: usize,
    pub kappa: f64,
    pub tau: f64,
}

/// Detector output without a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub z: f64,
    /// Majority-vote flags; absent for the step-keyed scheme.
    pub inferred_flags: Option<FlagPattern>,
    pub mean_alignment: f64,
    pub stddev_alignment: f64,
    pub n: usize,
}

impl DetectionScore {
    pub fn decide(self, tau: f64) -> DetectionResult {
        DetectionResult {
            decision: self.z > tau,
            tau,
            z: self.z,
            inferred_flags: self.inferred_flags,
            mean_alignment: self.mean_alignment,
            stddev_alignment: self.stddev_alignment,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub z: f64,
    pub inferred_flags: Option<FlagPattern>,
    pub mean_alignment: f64,
    pub stddev_alignment: f64,
    pub n: usize,
    /// z > tau.
    pub decision: bool,
    pub tau: f64,
}

/// Key-bound detector; derives the pivots once.
#[derive(Debug, Clone)]
pub struct Detector {
    key: PrivateKey,
    pivots: PivotSet,
    kappa: f64,
}

impl Detector {
    pub fn new(key: PrivateKey, channels: usize, dimension: usize, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config("kappa must be positive".into()));
        }
        let pivots = derive_pivots(&key, channels, dimension)?;
        Ok(Self { key, pivots, kappa })
    }

    pub fn from_config(key: PrivateKey, cfg: &DetectionConfig) -> Result<Self> {
        if !cfg.tau.is_finite() {
            return Err(Error::Config("tau must be finite".into()));
        }
        Self::new(key, cfg.channels, cfg.dimension, cfg.kappa)
    }

    pub fn pivots(&self) -> &PivotSet {
        &self.pivots
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<()> {
        if embedder.dimension() != self.pivots.dim() {
            return Err(Error::Config(format!(
                "embedder dimension {} does not match detector dimension {}",
                embedder.dimension(),
                self.pivots.dim()
            )));
        }
        Ok(())
    }

    fn embed(&self, sentences: &[String], embedder: &dyn Embedder) -> Result<Vec<UnitEmbedding>> {
        self.check_embedder(embedder)?;
        if sentences.is_empty() {
            return Err(Error::TooFewSamples {
                sentences: 0,
                channels: self.pivots.channels(),
            });
        }
        embedder.embed_batch(sentences)
    }

    pub fn score_embeddings(&self, embeddings: &[UnitEmbedding]) -> Result<DetectionScore> {
        let responses = ChannelResponseMatrix::from_embeddings(embeddings, &self.pivots)?;
        let flags = infer_flags(&responses);
        let stats = z_statistic(&alignment_matrix(&responses, &flags, self.kappa))?;
        Ok(DetectionScore {
            z: stats.z,
            inferred_flags: Some(flags),
            mean_alignment: stats.mean,
            stddev_alignment: stats.stddev,
            n: responses.rows(),
        })
    }

    pub fn score_sentences(
        &self,
        sentences: &[String],
        embedder: &dyn Embedder,
    ) -> Result<DetectionScore> {
        self.score_embeddings(&self.embed(sentences, embedder)?)
    }

    pub fn score_text(&self, text: &str, embedder: &dyn Embedder) -> Result<DetectionScore> {
        self.score_sentences(&segment_sentences(text), embedder)
    }

    /// Step-keyed comparison statistic. Depends on sentence order.
    pub fn score_step_keyed_embeddings(
        &self,
        embeddings: &[UnitEmbedding],
    ) -> Result<DetectionScore> {
        let responses = ChannelResponseMatrix::from_embeddings(embeddings, &self.pivots)?;
        let stats = z_statistic(&step_alignment_matrix(&responses, &self.key, self.kappa)?)?;
        Ok(DetectionScore {
            z: stats.z,
            inferred_flags: None,
            mean_alignment: stats.mean,
            stddev_alignment: stats.stddev,
            n: responses.rows(),
        })
    }

    pub fn score_step_keyed(
        &self,
        sentences: &[String],
        embedder: &dyn Embedder,
    ) -> Result<DetectionScore> {
        self.score_step_keyed_embeddings(&self.embed(sentences, embedder)?)
    }
}

/// Segments `text` and runs blind detection with threshold `cfg.tau`.
pub fn detect(
    text: &str,
    key: &PrivateKey,
    cfg: &DetectionConfig,
    embedder: &dyn Embedder,
) -> Result<DetectionResult> {
    Ok(Detector::from_config(key.clone(), cfg)?
        .score_text(text, embedder)?
        .decide(cfg.tau))
}

/// Blind detection on an already segmented sentence list.
pub fn detect_sentences(
    sentences: &[String],
    key: &PrivateKey,
    cfg: &DetectionConfig,
    embedder: &dyn Embedder,
) -> Result<DetectionResult> {
    Ok(Detector::from_config(key.clone(), cfg)?
        .score_sentences(sentences, embedder)?
        .decide(cfg.tau))
}

/// Detection for the step-keyed comparison scheme.
pub fn detect_step_keyed(
    sentences: &[String],
    key: &PrivateKey,
    cfg: &DetectionConfig,
    embedder: &dyn Embedder,
) -> Result<DetectionResult> {
    Ok(Detector::from_config(key.clone(), cfg)?
        .score_step_keyed(sentences, embedder)?
        .decide(cfg.tau))
}
