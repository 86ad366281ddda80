use sha2::{Digest, Sha256};

use super::{Embedder, UnitEmbedding};
use crate::error::Result;
use crate::text;

/// Feature-hashes the lowercase words of `text` into a signed count vector of
/// width `d` and L2-normalizes it. Texts without words map to e_1.
pub fn hash_embed(text: &str, d: usize, salt: &[u8]) -> UnitEmbedding {
    assert!(d >= 1, "embedding dimension must be at least 1");
    let mut counts = vec![0.0; d];
    for word in text::words(text) {
        let (index, sign) = bucket(&word, d, salt);
        counts[index] += sign;
    }
    // Signed collisions can cancel to an all-zero vector.
    UnitEmbedding::new(counts).unwrap_or_else(|_| UnitEmbedding::basis(d, 0))
}

fn bucket(word: &str, d: usize, salt: &[u8]) -> (usize, f64) {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update([0u8]);
    hasher.update(word.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let index = (u64::from_le_bytes(head) % d as u64) as usize;
    let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Deterministic offline embedder backed by [`hash_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    salt: Vec<u8>,
}

impl HashEmbedder {
    pub fn new(dim: usize, salt: impl Into<Vec<u8>>) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        Self {
            dim,
            salt: salt.into(),
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(super::DEFAULT_DIMENSION, b"anchormark".to_vec())
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<UnitEmbedding>> {
        Ok(texts
            .iter()
            .map(|t| hash_embed(t, self.dim, &self.salt))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedders::{cosine, l2_norm};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic() {
        let a = hash_embed("The quick brown fox.", 768, b"k");
        let b = hash_embed("The quick brown fox.", 768, b"k");
        assert_eq!(a, b);
    }

    #[test]
    fn unit_norm() {
        for text in ["a", "hello world", "one two three four five six seven"] {
            let e = hash_embed(text, 768, b"salt");
            assert_abs_diff_eq!(l2_norm(e.as_slice()), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_text_maps_to_first_basis_vector() {
        let e = hash_embed("  ... ", 16, b"");
        assert_eq!(e, UnitEmbedding::basis(16, 0));
    }

    #[test]
    fn bag_of_words_ignores_order() {
        let ab = hash_embed("a b", 768, b"s");
        let ba = hash_embed("b a", 768, b"s");
        assert_abs_diff_eq!(
            cosine(ab.as_slice(), ba.as_slice()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn salt_changes_geometry() {
        let a = hash_embed("alpha beta gamma", 768, b"one");
        let b = hash_embed("alpha beta gamma", 768, b"two");
        assert_ne!(a, b);
    }

    #[test]
    fn disjoint_sentences_nearly_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut word_id = 0u32;
        let mut fresh_sentence = |rng: &mut ChaCha8Rng| {
            (0..10)
                .map(|_| {
                    word_id += 1;
                    format!("w{word_id}x{}", rng.random::<u16>())
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        for _ in 0..100 {
            let s1 = fresh_sentence(&mut rng);
            let s2 = fresh_sentence(&mut rng);
            let c = cosine(
                hash_embed(&s1, 768, b"x").as_slice(),
                hash_embed(&s2, 768, b"x").as_slice(),
            )
            .unwrap();
            assert!(c.abs() < 0.5, "{s1} / {s2} -> {c}");
        }
    }
}
