use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::cache::LruCache;
use super::{Embedder, EmbedderConfig, EmbedderKind, UnitEmbedding};
use crate::error::{Error, Result};
use crate::http::JsonClient;

/// Request body sent to an embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

/// Expected response body: one vector per requested text, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

/// HTTP client for an external embedding service.
///
/// Results are cached per text; only cache misses go over the wire.
#[derive(Debug)]
pub struct RemoteEmbedder {
    dimension: usize,
    client: JsonClient,
    cache: Mutex<LruCache<UnitEmbedding>>,
}

impl RemoteEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        if cfg.kind != EmbedderKind::Remote {
            return Err(Error::Config(
                "RemoteEmbedder requires kind = remote".into(),
            ));
        }
        cfg.validate()?;
        let url = cfg.endpoint_url.as_deref().unwrap_or_default();
        Ok(Self {
            dimension: cfg.dimension,
            client: JsonClient::new(url, cfg.timeout_ms, cfg.max_retries, cfg.backoff_ms),
            cache: Mutex::new(LruCache::new(cfg.cache_capacity)),
        })
    }

    fn fetch(&self, texts: Vec<String>) -> Result<Vec<UnitEmbedding>> {
        let expected = texts.len();
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        if resp.embeddings.len() != expected {
            return Err(Error::Remote(format!(
                "expected {expected} embeddings, service returned {}",
                resp.embeddings.len()
            )));
        }
        resp.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.dimension,
                        actual: v.len(),
                    });
                }
                UnitEmbedding::new(v)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<UnitEmbedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut found: HashMap<&str, UnitEmbedding> = HashMap::new();
        let mut missing: Vec<String> = Vec::new();
        {
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for t in texts {
                if found.contains_key(t.as_str()) || missing.contains(t) {
                    continue;
                }
                match cache.get(t) {
                    Some(e) => {
                        found.insert(t, e);
                    }
                    None => missing.push(t.clone()),
                }
            }
        }
        if !missing.is_empty() {
            let fetched = self.fetch(missing.clone())?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (text, emb) in missing.iter().zip(fetched) {
                cache.insert(text.clone(), emb.clone());
                let key = texts.iter().find(|t| *t == text).expect("requested text");
                found.insert(key.as_str(), emb);
            }
        }
        Ok(texts.iter().map(|t| found[t.as_str()].clone()).collect())
    }
}

/// One-shot convenience wrapper: builds a client from `cfg` and embeds `texts`.
pub fn remote_embed(texts: &[String], cfg: &EmbedderConfig) -> Result<Vec<UnitEmbedding>> {
    if texts.is_empty() {
        return Err(Error::Config(
            "remote_embed requires a non-empty batch".into(),
        ));
    }
    RemoteEmbedder::new(cfg.clone())?.embed_batch(texts)
}
