//! Simulated attacks: sentence reordering, word deletion, word substitution,
//! and an embedding-space rotation standing in for paraphrasing.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::segment_sentences;
use crate::embedders::{dot, UnitEmbedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Shuffle,
    WordDelete,
    WordSubstitute,
    EmbedNoise,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Shuffle => "shuffle",
            AttackKind::WordDelete => "word-delete",
            AttackKind::WordSubstitute => "word-substitute",
            AttackKind::EmbedNoise => "embed-noise",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(AttackKind::Shuffle),
            "word-delete" => Ok(AttackKind::WordDelete),
            "word-substitute" => Ok(AttackKind::WordSubstitute),
            "embed-noise" => Ok(AttackKind::EmbedNoise),
            other => Err(Error::Config(format!("unknown attack kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of words touched by word attacks.
    #[serde(default)]
    pub ratio: f64,
    /// Rotation angle in radians for embed-noise.
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn shuffle(seed: u64) -> Self {
        Self {
            kind: AttackKind::Shuffle,
            ratio: 0.0,
            angle: 0.0,
            seed,
        }
    }

    pub fn word_delete(ratio: f64, seed: u64) -> Self {
        Self {
            kind: AttackKind::WordDelete,
            ratio,
            angle: 0.0,
            seed,
        }
    }

    pub fn word_substitute(ratio: f64, seed: u64) -> Self {
        Self {
            kind: AttackKind::WordSubstitute,
            ratio,
            angle: 0.0,
            seed,
        }
    }

    pub fn embed_noise(angle: f64, seed: u64) -> Self {
        Self {
            kind: AttackKind::EmbedNoise,
            ratio: 0.0,
            angle,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!(
                "attack ratio {} outside [0, 1]",
                self.ratio
            )));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.angle) {
            return Err(Error::Config(format!(
                "attack angle {} outside [0, pi/2]",
                self.angle
            )));
        }
        Ok(())
    }

    /// Short label used in condition names, e.g. `word-delete@0.15`.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Shuffle => self.kind.as_str().to_owned(),
            AttackKind::WordDelete | AttackKind::WordSubstitute => {
                format!("{}@{}", self.kind.as_str(), self.ratio)
            }
            AttackKind::EmbedNoise => format!("{}@{}", self.kind.as_str(), self.angle),
        }
    }
}

/// Seeded uniform permutation.
pub fn shuffle_sentences<T: Clone>(sentences: &[T], seed: u64) -> Vec<T> {
    let mut out = sentences.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

fn touched_count(ratio: f64, words: usize) -> usize {
    // The epsilon keeps products like 0.29 * 100 from flooring one short.
    (((ratio * words as f64) + 1e-9).floor() as usize).min(words)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "attack ratio {ratio} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Removes floor(ratio * words) uniformly chosen words, keeping the order of
/// the rest.
pub fn delete_words(sentence: &str, ratio: f64, seed: u64) -> Result<String> {
    check_ratio(ratio)?;
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let k = touched_count(ratio, tokens.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed: BTreeSet<usize> = index::sample(&mut rng, tokens.len(), k)
        .into_iter()
        .collect();
    Ok(tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, t)| *t)
        .collect::<Vec<_>>()
        .join(" "))
}

/// Replacement table for word substitution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    words: Vec<String>,
}

impl Lexicon {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (word, replacement) in pairs {
            let word = word.into().to_lowercase();
            let replacement = replacement.into();
            let list = entries.entry(word).or_default();
            if !list.contains(&replacement) {
                list.push(replacement);
            }
        }
        let words: BTreeSet<String> = entries
            .iter()
            .flat_map(|(k, v)| std::iter::once(k.clone()).chain(v.iter().cloned()))
            .collect();
        Self {
            entries,
            words: words.into_iter().collect(),
        }
    }

    /// Parses a two-column file: `word replacement` per line, separated by
    /// whitespace. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            match (cols.next(), cols.next(), cols.next()) {
                (Some(w), Some(r), None) => pairs.push((w.to_owned(), r.to_owned())),
                _ => {
                    return Err(Error::Config(format!(
                        "lexicon line {} must have exactly two columns",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read lexicon {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// A replacement different from `word`: a listed synonym when one exists,
    /// otherwise any lexicon word.
    fn replacement(&self, word: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let lower = word.to_lowercase();
        let differs = |w: &&String| w.to_lowercase() != lower;
        let synonyms: Vec<&String> = self
            .entries
            .get(&lower)
            .map(|v| v.iter().filter(differs).collect())
            .unwrap_or_default();
        if let Some(s) = synonyms.choose(rng) {
            return Some((*s).clone());
        }
        let others: Vec<&String> = self.words.iter().filter(differs).collect();
        others.choose(rng).map(|s| (*s).clone())
    }
}

/// Splits a token into leading punctuation, core word and trailing punctuation.
fn split_token(token: &str) -> (&str, &str, &str) {
    let core_start = token.find(char::is_alphanumeric).unwrap_or(token.len());
    let core_end = token.rfind(char::is_alphanumeric).map_or(core_start, |i| {
        i + token[i..].chars().next().map_or(1, char::len_utf8)
    });
    let core_end = core_end.max(core_start);
    (
        &token[..core_start],
        &token[core_start..core_end],
        &token[core_end..],
    )
}

/// Replaces floor(ratio * words) uniformly chosen words with a lexicon entry.
/// Edge punctuation of a replaced token is kept.
pub fn substitute_words(
    sentence: &str,
    ratio: f64,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<String> {
    check_ratio(ratio)?;
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    let mut tokens: Vec<String> = sentence.split_whitespace().map(str::to_owned).collect();
    let k = touched_count(ratio, tokens.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = index::sample(&mut rng, tokens.len(), k).into_vec();
    positions.sort_unstable();
    for i in positions {
        let (pre, core, post) = split_token(&tokens[i]);
        let replacement = lexicon
            .replacement(core, &mut rng)
            .ok_or(Error::EmptyLexicon)?;
        tokens[i] = format!("{pre}{replacement}{post}");
    }
    Ok(tokens.join(" "))
}

/// Word deletion over the whole paragraph, re-segmented afterwards.
pub fn delete_words_document(sentences: &[String], ratio: f64, seed: u64) -> Result<Vec<String>> {
    Ok(segment_sentences(&delete_words(
        &sentences.join(" "),
        ratio,
        seed,
    )?))
}

/// Word substitution over the whole paragraph, re-segmented afterwards.
pub fn substitute_words_document(
    sentences: &[String],
    ratio: f64,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Vec<String>> {
    Ok(segment_sentences(&substitute_words(
        &sentences.join(" "),
        ratio,
        lexicon,
        seed,
    )?))
}

/// Applies a text-level attack to a sentence list. Embedding-space noise has
/// no text form and is rejected here.
pub fn attack_sentences(
    sentences: &[String],
    spec: &AttackSpec,
    lexicon: Option<&Lexicon>,
) -> Result<Vec<String>> {
    spec.validate()?;
    match spec.kind {
        AttackKind::Shuffle => Ok(shuffle_sentences(sentences, spec.seed)),
        AttackKind::WordDelete => delete_words_document(sentences, spec.ratio, spec.seed),
        AttackKind::WordSubstitute => {
            let lexicon = lexicon.ok_or(Error::EmptyLexicon)?;
            substitute_words_document(sentences, spec.ratio, lexicon, spec.seed)
        }
        AttackKind::EmbedNoise => Err(Error::Config(
            "embed-noise acts on embeddings and has no text form".into(),
        )),
    }
}

/// cos(angle) * e + sin(angle) * u for a seeded random unit u orthogonal to e.
pub fn rotate_embedding(e: &UnitEmbedding, angle: f64, seed: u64) -> Result<UnitEmbedding> {
    if !(0.0..=FRAC_PI_2).contains(&angle) {
        return Err(Error::Config(format!(
            "rotation angle {angle} outside [0, pi/2]"
        )));
    }
    let x = e.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..8)
        .find_map(|_| {
            let mut u: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let proj = dot(&u, x);
            u.iter_mut().zip(x).for_each(|(ui, xi)| *ui -= proj * xi);
            UnitEmbedding::new(u).ok()
        })
        .ok_or(Error::ZeroVector)?;
    let (s, c) = angle.sin_cos();
    UnitEmbedding::new(
        x.iter()
            .zip(u.as_slice())
            .map(|(xi, ui)| c * xi + s * ui)
            .collect(),
    )
}
