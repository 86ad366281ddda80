//! Candidate sentence sources.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::segment_sentences;
use crate::error::{Error, Result};
use crate::http::JsonClient;

/// Produces `n` candidate next sentences for a running context.
pub trait CandidateSampler: Send + Sync {
    fn sample(&self, context: &str, n: usize, rng: &mut dyn RngCore) -> Result<Vec<String>>;
}

impl<S: CandidateSampler + ?Sized> CandidateSampler for &S {
    fn sample(&self, context: &str, n: usize, rng: &mut dyn RngCore) -> Result<Vec<String>> {
        (**self).sample(context, n, rng)
    }
}

impl<S: CandidateSampler + ?Sized> CandidateSampler for Box<S> {
    fn sample(&self, context: &str, n: usize, rng: &mut dyn RngCore) -> Result<Vec<String>> {
        (**self).sample(context, n, rng)
    }
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "ch", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k", "l", "m", "n", "p", "pl",
    "qu", "r", "s", "sh", "sk", "st", "t", "th", "tr", "v", "w", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "x"];

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "this", "that", "every", "each", "some", "one", "another", "its", "their", "our",
    "near", "over", "under", "beside", "within", "across", "beyond", "against", "after", "before",
    "during", "without", "toward", "among", "behind", "around", "through", "upon", "and", "while",
    "yet", "so", "because", "although", "then", "still", "also", "often",
];

/// Part-of-speech slots a template is composed of.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Function,
    Noun,
    Verb,
    Adjective,
    Adverb,
}

use Slot::{Adjective as J, Adverb as R, Function as F, Noun as N, Verb as V};

const TEMPLATES: &[&[Slot]] = &[
    &[F, J, N, V, F, J, N],
    &[F, N, R, V, F, N, F, J, N],
    &[J, N, V, F, N, F, R, J, N],
    &[F, J, J, N, V, N, F, N],
    &[N, V, J, N, F, F, N, R, V],
    &[F, N, F, J, N, V, R, F, J, N, N],
    &[R, F, J, N, V, F, N, F, N],
    &[F, N, V, F, J, N, F, V, J, N],
];

#[derive(Debug)]
struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
    adverbs: Vec<String>,
}

impl Lexicon {
    fn generate(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashSet<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        let mut words = Vec::with_capacity(size);
        while words.len() < size {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut rng).expect("onsets"));
                w.push_str(NUCLEI.choose(&mut rng).expect("nuclei"));
            }
            w.push_str(CODAS.choose(&mut rng).expect("codas"));
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let quarter = size / 4;
        let adverbs = words.split_off(3 * quarter);
        let adjectives = words.split_off(2 * quarter);
        let verbs = words.split_off(quarter);
        Self {
            nouns: words,
            verbs,
            adjectives,
            adverbs,
        }
    }

    fn pick(&self, slot: Slot, rng: &mut dyn RngCore) -> &str {
        let pool: &[String] = match slot {
            Slot::Function => return FUNCTION_WORDS.choose(rng).expect("function words"),
            Slot::Noun => &self.nouns,
            Slot::Verb => &self.verbs,
            Slot::Adjective => &self.adjectives,
            Slot::Adverb => &self.adverbs,
        };
        pool.choose(rng).expect("non-empty lexicon")
    }
}

/// Offline sampler composing sentences from templates over a synthetic
/// vocabulary. It ignores the context: every candidate is a fresh draw, so
/// hash-embedder channel signs are close to fair coins.
#[derive(Debug, Clone)]
pub struct MockSampler {
    lexicon: Arc<Lexicon>,
}

impl MockSampler {
    /// `vocab_size` content words (at least 8) generated from `vocab_seed`.
    pub fn new(vocab_size: usize, vocab_seed: u64) -> Self {
        Self {
            lexicon: Arc::new(Lexicon::generate(vocab_size.max(8), vocab_seed)),
        }
    }

    pub fn sentence(&self, rng: &mut dyn RngCore) -> String {
        let template = TEMPLATES.choose(rng).expect("templates");
        let mut out = String::new();
        for (i, slot) in template.iter().enumerate() {
            let w = self.lexicon.pick(*slot, rng);
            if i == 0 {
                let mut chars = w.chars();
                if let Some(first) = chars.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(chars.as_str());
                }
            } else {
                out.push(' ');
                out.push_str(w);
            }
        }
        out.push('.');
        out
    }
}

impl Default for MockSampler {
    fn default() -> Self {
        Self::new(4000, 0)
    }
}

impl CandidateSampler for MockSampler {
    fn sample(&self, _context: &str, n: usize, rng: &mut dyn RngCore) -> Result<Vec<String>> {
        Ok((0..n).map(|_| self.sentence(rng)).collect())
    }
}

/// Degenerate sampler that keeps proposing a few fixed "motif" sentences.
///
/// Each candidate is, with probability `repeat_fraction`, one of the motifs;
/// otherwise it is a fresh [`MockSampler`] sentence. With one motif and
/// fraction 1.0 every pool is N copies of the same sentence.
#[derive(Debug, Clone)]
pub struct RepeatingSampler {
    base: MockSampler,
    motifs: Vec<String>,
    repeat_fraction: f64,
}

impl RepeatingSampler {
    pub fn new(base: MockSampler, motif_count: usize, repeat_fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motifs = (0..motif_count.max(1))
            .map(|_| base.sentence(&mut rng))
            .collect();
        Self::with_motifs(base, motifs, repeat_fraction)
    }

    pub fn with_motifs(base: MockSampler, motifs: Vec<String>, repeat_fraction: f64) -> Self {
        assert!(!motifs.is_empty(), "at least one motif is required");
        Self {
            base,
            motifs,
            repeat_fraction: repeat_fraction.clamp(0.0, 1.0),
        }
    }

    pub fn motifs(&self) -> &[String] {
        &self.motifs
    }
}

impl CandidateSampler for RepeatingSampler {
    fn sample(&self, _context: &str, n: usize, rng: &mut dyn RngCore) -> Result<Vec<String>> {
        Ok((0..n)
            .map(|_| {
                if rng.random::<f64>() < self.repeat_fraction {
                    self.motifs.choose(rng).expect("motifs").clone()
                } else {
                    self.base.sentence(rng)
                }
            })
            .collect())
    }
}

/// Request body sent to a text-generation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompt: String,
    pub n: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
}

/// Expected response: `n` sampled continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub candidates: Vec<String>,
}

/// HTTP client for an external text-generation service. Each continuation is
/// cut down to its first sentence; requests repeat until `n` candidates have
/// accumulated.
#[derive(Debug, Clone)]
pub struct RemoteSampler {
    client: JsonClient,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    max_rounds: usize,
}

impl RemoteSampler {
    pub fn new(cfg: &SamplerConfig) -> Result<Self> {
        let url = cfg
            .endpoint_url
            .as_deref()
            .ok_or_else(|| Error::Config("remote sampler requires endpoint_url".into()))?;
        Ok(Self {
            client: JsonClient::new(url, cfg.timeout_ms, cfg.max_retries, cfg.backoff_ms),
            max_tokens: cfg.max_tokens,
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_rounds: cfg.max_rounds.max(1),
        })
    }
}

impl CandidateSampler for RemoteSampler {
    fn sample(&self, context: &str, n: usize, _rng: &mut dyn RngCore) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..self.max_rounds {
            if out.len() >= n {
                break;
            }
            let resp: SampleResponse = self.client.post(&SampleRequest {
                prompt: context.to_owned(),
                n: n - out.len(),
                max_tokens: self.max_tokens,
                temperature: self.temperature,
                top_p: self.top_p,
            })?;
            out.extend(
                resp.candidates
                    .iter()
                    .filter_map(|c| segment_sentences(c).into_iter().next()),
            );
        }
        if out.len() < n {
            return Err(Error::Remote(format!(
                "sampler produced {} of {n} candidates after {} rounds",
                out.len(),
                self.max_rounds
            )));
        }
        out.truncate(n);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Mock,
    Repeating,
    Remote,
}

/// Sampler selection and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub vocab_size: usize,
    pub vocab_seed: u64,
    /// Repeating sampler only.
    pub motif_count: usize,
    pub repeat_fraction: f64,
    pub endpoint_url: Option<String>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_rounds: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Mock,
            vocab_size: 4000,
            vocab_seed: 0,
            motif_count: 3,
            repeat_fraction: 0.5,
            endpoint_url: None,
            max_tokens: 64,
            temperature: 0.7,
            top_p: 0.95,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
            max_rounds: 8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.repeat_fraction) {
            return Err(Error::Config("repeat_fraction must lie in [0, 1]".into()));
        }
        if self.kind == SamplerKind::Remote && self.endpoint_url.is_none() {
            return Err(Error::Config("remote sampler requires endpoint_url".into()));
        }
        Ok(())
    }

    /// Instantiates the configured sampler. `doc_seed` fixes the motifs of the
    /// repeating sampler and is ignored by the other kinds.
    pub fn build(&self, doc_seed: u64) -> Result<Box<dyn CandidateSampler>> {
        self.validate()?;
        Ok(match self.kind {
            SamplerKind::Mock => Box::new(MockSampler::new(self.vocab_size, self.vocab_seed)),
            SamplerKind::Repeating => Box::new(RepeatingSampler::new(
                MockSampler::new(self.vocab_size, self.vocab_seed),
                self.motif_count,
                self.repeat_fraction,
                doc_seed,
            )),
            SamplerKind::Remote => Box::new(RemoteSampler::new(self)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text;

    #[test]
    fn mock_sampler_is_deterministic() {
        let s = MockSampler::default();
        let a = s
            .sample("ctx", 5, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let b = s
            .sample("ctx", 5, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for sentence in &a {
            assert!(sentence.ends_with('.'));
            assert!(sentence.chars().next().unwrap().is_uppercase());
            assert!(text::words(sentence).len() >= 7);
        }
    }

    #[test]
    fn lexicon_has_requested_size() {
        let l = Lexicon::generate(400, 1);
        let total = l.nouns.len() + l.verbs.len() + l.adjectives.len() + l.adverbs.len();
        assert_eq!(total, 400);
    }

    #[test]
    fn repeating_sampler_full_repeat() {
        let s =
            RepeatingSampler::with_motifs(MockSampler::default(), vec!["Same thing.".into()], 1.0);
        let pool = s.sample("", 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pool.len(), 64);
        assert!(pool.iter().all(|p| p == "Same thing."));
    }

    #[test]
    fn repeating_sampler_mixes() {
        let s = RepeatingSampler::new(MockSampler::default(), 3, 0.5, 9);
        let pool = s
            .sample("", 200, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let repeats = pool.iter().filter(|p| s.motifs().contains(p)).count();
        assert!((60..140).contains(&repeats), "{repeats}");
    }
}
