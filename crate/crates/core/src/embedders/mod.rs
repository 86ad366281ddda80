//! Sentence embedding backends.
//!
//! Every backend returns unit-norm vectors. The built-in [`HashEmbedder`] is a
//! deterministic bag-of-words feature hasher for offline runs; the
//! [`RemoteEmbedder`] talks to an HTTP embedding service.

mod cache;
mod hash;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hash::{hash_embed, HashEmbedder};
pub use remote::{remote_embed, EmbedRequest, EmbedResponse, RemoteEmbedder};

/// Default embedding width, matching all-mpnet-base-v2.
pub const DEFAULT_DIMENSION: usize = 768;

/// A d-dimensional vector with Euclidean norm 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitEmbedding(Vec<f64>);

impl UnitEmbedding {
    /// Normalizes `values` to unit length.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    /// The standard basis vector e_index.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[index] = 1.0;
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for UnitEmbedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<UnitEmbedding> for Vec<f64> {
    fn from(e: UnitEmbedding) -> Self {
        e.0
    }
}

/// The embedding function used on both the generation and detection side.
pub trait Embedder: Send + Sync {
    /// Width of every vector this backend returns.
    fn dimension(&self) -> usize;

    /// Embeds a batch, preserving order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<UnitEmbedding>>;

    fn embed(&self, text: &str) -> Result<UnitEmbedding> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        out.pop()
            .ok_or_else(|| Error::Backend("embedder returned no vectors".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<UnitEmbedding>> {
        (**self).embed_batch(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<UnitEmbedding>> {
        (**self).embed_batch(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    BuiltinHash,
    Remote,
}

/// Backend selection and client settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Salt mixed into the feature hash (builtin only).
    pub salt: String,
    pub endpoint_url: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub cache_capacity: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::BuiltinHash,
            dimension: DEFAULT_DIMENSION,
            salt: "anchormark".into(),
            endpoint_url: None,
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 100,
            cache_capacity: 4096,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 1 {
            return Err(Error::Config(
                "embedder dimension must be at least 1".into(),
            ));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint_url.is_none() {
            return Err(Error::Config(
                "remote embedder requires endpoint_url".into(),
            ));
        }
        Ok(())
    }

    /// Instantiates the configured backend.
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::BuiltinHash => Box::new(HashEmbedder::new(
                self.dimension,
                self.salt.as_bytes().to_vec(),
            )),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Cosine between two vectors already known to be unit norm.
pub(crate) fn unit_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}
