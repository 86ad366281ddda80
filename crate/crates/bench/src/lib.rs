//! Fixtures shared by the benchmarks.

use anchormark::embedders::{Embedder, HashEmbedder, UnitEmbedding};
use anchormark::generator::MockSampler;
use anchormark::CandidateSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` mock sentences drawn with a fixed seed.
pub fn sentences(n: usize, seed: u64) -> Vec<String> {
    MockSampler::default()
        .sample("", n, &mut rng(seed))
        .expect("mock sampler")
}

pub fn embeddings(n: usize, seed: u64) -> Vec<UnitEmbedding> {
    HashEmbedder::default()
        .embed_batch(&sentences(n, seed))
        .expect("hash embedder")
}
