//! Watermarked generation: candidate pooling, hard filters, channel matching,
//! hyperbolic scoring with diversity bonuses, and softmax selection.

mod sampler;
mod scoring;

use std::collections::HashSet;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::embedders::{Embedder, UnitEmbedding};
use crate::error::{Error, Result};
use crate::keycore::{
    derive_pivots, matching_channels, sample_flag_pattern, step_flag_pattern, FlagPattern,
    PivotSet, PrivateKey,
};
use crate::text;

pub use sampler::{
    CandidateSampler, MockSampler, RemoteSampler, RepeatingSampler, SampleRequest, SampleResponse,
    SamplerConfig, SamplerKind,
};
pub use scoring::{
    diversity_bonus, match_channels, ngram_overlap_ratio, novelty_bonus, semantic_similarity_ratio,
    softmax_probabilities, softmax_select, total_score, watermark_score, CandidateSentence,
    FilterStage, ScoreTransform,
};

use scoring::{ngram_overlap_with, sample_softmax, transformed_score};

/// Generation parameters. Defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Number of channels c.
    pub channels: usize,
    /// Candidates drawn per step, N.
    pub budget: usize,
    /// tanh sharpness.
    pub kappa: f64,
    /// Softmax temperature applied to the total score.
    pub epsilon: f64,
    pub lambda_div: f64,
    pub lambda_nov: f64,
    pub theta_ngram: f64,
    pub theta_sem: f64,
    pub ngram_n: usize,
    /// Sentences to generate, T.
    pub max_sentences: usize,
    pub max_pool_retries: usize,
    /// Disables both hard filters when false.
    pub filters_enabled: bool,
    pub score_transform: ScoreTransform,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            channels: 2,
            budget: 64,
            kappa: 30.0,
            epsilon: 2.0,
            lambda_div: 0.35,
            lambda_nov: 0.2,
            theta_ngram: 0.4,
            theta_sem: 0.8,
            ngram_n: 4,
            max_sentences: 12,
            max_pool_retries: 3,
            filters_enabled: true,
            score_transform: ScoreTransform::Tanh,
        }
    }
}

impl GenerationConfig {
    /// Pure watermark-driven selection: no hard filters, no bonuses.
    pub fn without_quality_terms(mut self) -> Self {
        self.filters_enabled = false;
        self.lambda_div = 0.0;
        self.lambda_nov = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.channels < 1 {
            return fail("channels must be at least 1");
        }
        if self.budget < 1 {
            return fail("budget must be at least 1");
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return fail("kappa must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be positive");
        }
        if !self.lambda_div.is_finite() || !self.lambda_nov.is_finite() {
            return fail("lambda weights must be finite");
        }
        for (name, t) in [
            ("theta_ngram", self.theta_ngram),
            ("theta_sem", self.theta_sem),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {t}")));
            }
        }
        if self.ngram_n < 1 {
            return fail("ngram_n must be at least 1");
        }
        Ok(())
    }
}

/// Pipeline stage that left no candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyStage {
    NgramFilter,
    SemanticFilter,
    ChannelMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackAction {
    /// A fresh pool was drawn.
    Resampled,
    /// Hard-filtered candidates were let back in.
    ReadmittedFiltered,
    /// No candidate matched; the one matching the most channels was taken.
    NearestMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEvent {
    /// Zero-based sentence index.
    pub step: usize,
    pub stage: EmptyStage,
    pub action: FallbackAction,
}

/// Flags a document was generated under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagAssignment {
    /// One pattern for the whole document.
    Document(FlagPattern),
    /// One pattern per sentence position (step-keyed comparison scheme).
    PerStep(Vec<FlagPattern>),
}

impl FlagAssignment {
    pub fn document(&self) -> Option<&FlagPattern> {
        match self {
            FlagAssignment::Document(f) => Some(f),
            FlagAssignment::PerStep(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkedDocument {
    pub sentences: Vec<String>,
    pub flags: FlagAssignment,
    pub fallback_events: Vec<FallbackEvent>,
    pub config: GenerationConfig,
}

impl WatermarkedDocument {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

enum FlagSchedule<'k> {
    Document(FlagPattern),
    StepKeyed(&'k PrivateKey),
}

/// Running state of one document: context n-grams, seen words and the
/// embeddings of already selected sentences.
struct DocState {
    context: String,
    tail: Vec<String>,
    context_ngrams: HashSet<Vec<String>>,
    seen_vocab: HashSet<String>,
    history: Vec<UnitEmbedding>,
    sentences: Vec<String>,
    n: usize,
}

impl DocState {
    fn new(prompt: &str, n: usize) -> Self {
        let mut state = Self {
            context: String::new(),
            tail: Vec::new(),
            context_ngrams: HashSet::new(),
            seen_vocab: HashSet::new(),
            history: Vec::new(),
            sentences: Vec::new(),
            n,
        };
        state.extend_context(prompt);
        state
    }

    fn extend_context(&mut self, sentence: &str) {
        if !self.context.is_empty() && !sentence.is_empty() {
            self.context.push(' ');
        }
        self.context.push_str(sentence);
        let new_words = text::words(sentence);
        self.seen_vocab.extend(new_words.iter().cloned());
        let mut window = std::mem::take(&mut self.tail);
        window.extend(new_words);
        self.context_ngrams.extend(text::ngram_set(&window, self.n));
        let keep = self.n.saturating_sub(1).min(window.len());
        self.tail = window.split_off(window.len() - keep);
    }

    fn accept(&mut self, cand: CandidateSentence) {
        self.extend_context(&cand.text);
        self.history.push(cand.embedding);
        self.sentences.push(cand.text);
    }
}

/// Holds the key-derived pivots and the configuration for a batch of
/// documents.
#[derive(Debug, Clone)]
pub struct Watermarker {
    key: PrivateKey,
    pivots: PivotSet,
    cfg: GenerationConfig,
}

impl Watermarker {
    pub fn new(key: PrivateKey, cfg: GenerationConfig, dimension: usize) -> Result<Self> {
        cfg.validate()?;
        let pivots = derive_pivots(&key, cfg.channels, dimension)?;
        Ok(Self { key, pivots, cfg })
    }

    pub fn pivots(&self) -> &PivotSet {
        &self.pivots
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    /// Generates one document under a freshly drawn flag pattern.
    pub fn generate(
        &self,
        sampler: &dyn CandidateSampler,
        embedder: &dyn Embedder,
        prompt: &str,
        rng: &mut dyn RngCore,
    ) -> Result<WatermarkedDocument> {
        let flags = sample_flag_pattern(rng, self.cfg.channels)?;
        self.run(
            sampler,
            embedder,
            prompt,
            FlagSchedule::Document(flags),
            rng,
        )
    }

    /// Generates one document under a fixed flag pattern.
    pub fn generate_with_flags(
        &self,
        sampler: &dyn CandidateSampler,
        embedder: &dyn Embedder,
        prompt: &str,
        flags: FlagPattern,
        rng: &mut dyn RngCore,
    ) -> Result<WatermarkedDocument> {
        if flags.len() != self.cfg.channels {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.channels,
                actual: flags.len(),
            });
        }
        self.run(
            sampler,
            embedder,
            prompt,
            FlagSchedule::Document(flags),
            rng,
        )
    }

    /// Comparison scheme whose flags are re-derived from (key, position) at
    /// every step.
    pub fn generate_step_keyed(
        &self,
        sampler: &dyn CandidateSampler,
        embedder: &dyn Embedder,
        prompt: &str,
        rng: &mut dyn RngCore,
    ) -> Result<WatermarkedDocument> {
        self.run(
            sampler,
            embedder,
            prompt,
            FlagSchedule::StepKeyed(&self.key),
            rng,
        )
    }

    fn run(
        &self,
        sampler: &dyn CandidateSampler,
        embedder: &dyn Embedder,
        prompt: &str,
        schedule: FlagSchedule<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<WatermarkedDocument> {
        if embedder.dimension() != self.pivots.dim() {
            return Err(Error::Config(format!(
                "embedder dimension {} does not match pivot dimension {}",
                embedder.dimension(),
                self.pivots.dim()
            )));
        }
        let mut state = DocState::new(prompt, self.cfg.ngram_n);
        let mut events = Vec::new();
        let mut step_flags = Vec::new();
        for step in 0..self.cfg.max_sentences {
            let flags = match &schedule {
                FlagSchedule::Document(f) => f.clone(),
                FlagSchedule::StepKeyed(key) => step_flag_pattern(key, step, self.cfg.channels)?,
            };
            let chosen = self.step(sampler, embedder, &state, &flags, step, rng, &mut events)?;
            state.accept(chosen);
            step_flags.push(flags);
        }
        let flags = match schedule {
            FlagSchedule::Document(f) => FlagAssignment::Document(f),
            FlagSchedule::StepKeyed(_) => FlagAssignment::PerStep(step_flags),
        };
        Ok(WatermarkedDocument {
            sentences: state.sentences,
            flags,
            fallback_events: events,
            config: self.cfg.clone(),
        })
    }

    fn build_pool(
        &self,
        texts: Vec<String>,
        embeddings: Vec<UnitEmbedding>,
        state: &DocState,
        flags: &FlagPattern,
    ) -> Result<Vec<CandidateSentence>> {
        let cfg = &self.cfg;
        texts
            .into_iter()
            .zip(embeddings)
            .map(|(text, embedding)| {
                let cosines = self.pivots.cosines(embedding.as_slice())?;
                let sigma: Vec<f64> = cosines
                    .iter()
                    .enumerate()
                    .map(|(j, c)| flags.sign(j) * c)
                    .collect();
                let words = text::words(&text);
                let rho_ngram = ngram_overlap_with(&words, &state.context_ngrams, cfg.ngram_n);
                let rho_sem = semantic_similarity_ratio(&embedding, &state.history);
                let novelty = novelty_bonus(&text, &state.seen_vocab);
                let s_wm = transformed_score(&sigma, cfg.kappa, cfg.score_transform);
                let score =
                    total_score(s_wm, 1.0 - rho_sem, novelty, cfg.lambda_div, cfg.lambda_nov);
                Ok(CandidateSentence {
                    text,
                    embedding,
                    cosines,
                    sigma,
                    rho_ngram,
                    rho_sem,
                    novelty,
                    s_wm,
                    score,
                    matched: false,
                    filtered_by: FilterStage::None,
                })
            })
            .collect()
    }

    /// Applies the hard filters and returns the surviving indices, or the
    /// stage that emptied the pool.
    fn hard_filter(&self, pool: &mut [CandidateSentence]) -> Result<Vec<usize>, EmptyStage> {
        let all: Vec<usize> = (0..pool.len()).collect();
        if !self.cfg.filters_enabled {
            return Ok(all);
        }
        let mut survivors = Vec::new();
        for i in all {
            if pool[i].rho_ngram >= self.cfg.theta_ngram {
                pool[i].filtered_by = FilterStage::Ngram;
            } else {
                survivors.push(i);
            }
        }
        if survivors.is_empty() {
            return Err(EmptyStage::NgramFilter);
        }
        survivors.retain(|&i| {
            if pool[i].rho_sem >= self.cfg.theta_sem {
                pool[i].filtered_by = FilterStage::Semantic;
                false
            } else {
                true
            }
        });
        if survivors.is_empty() {
            return Err(EmptyStage::SemanticFilter);
        }
        Ok(survivors)
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        sampler: &dyn CandidateSampler,
        embedder: &dyn Embedder,
        state: &DocState,
        flags: &FlagPattern,
        step: usize,
        rng: &mut dyn RngCore,
        events: &mut Vec<FallbackEvent>,
    ) -> Result<CandidateSentence> {
        let mut attempt = 0;
        loop {
            let texts = sampler.sample(&state.context, self.cfg.budget, rng)?;
            if texts.is_empty() {
                return Err(Error::Backend("sampler returned no candidates".into()));
            }
            let embeddings = embedder.embed_batch(&texts)?;
            if embeddings.len() != texts.len() {
                return Err(Error::Backend(format!(
                    "embedder returned {} vectors for {} texts",
                    embeddings.len(),
                    texts.len()
                )));
            }
            let mut pool = self.build_pool(texts, embeddings, state, flags)?;

            let filtered = self.hard_filter(&mut pool);
            let outcome = match &filtered {
                Ok(survivors) => {
                    let matched = self.matched_among(&mut pool, survivors, flags);
                    if matched.is_empty() {
                        Err(EmptyStage::ChannelMatch)
                    } else {
                        Ok(matched)
                    }
                }
                Err(stage) => Err(*stage),
            };

            let stage = match outcome {
                Ok(matched) => return self.select(pool, &matched, rng),
                Err(stage) => stage,
            };
            if attempt < self.cfg.max_pool_retries {
                attempt += 1;
                events.push(FallbackEvent {
                    step,
                    stage,
                    action: FallbackAction::Resampled,
                });
                continue;
            }

            let candidates: Vec<usize> = match filtered {
                Ok(survivors) => survivors,
                Err(stage) => {
                    events.push(FallbackEvent {
                        step,
                        stage,
                        action: FallbackAction::ReadmittedFiltered,
                    });
                    let all: Vec<usize> = (0..pool.len()).collect();
                    let matched = self.matched_among(&mut pool, &all, flags);
                    if !matched.is_empty() {
                        return self.select(pool, &matched, rng);
                    }
                    all
                }
            };
            events.push(FallbackEvent {
                step,
                stage: EmptyStage::ChannelMatch,
                action: FallbackAction::NearestMatch,
            });
            let best = candidates
                .into_iter()
                .max_by(|&a, &b| {
                    let ka = matching_channels(&pool[a].cosines, flags);
                    let kb = matching_channels(&pool[b].cosines, flags);
                    ka.cmp(&kb)
                        .then(pool[a].s_wm.total_cmp(&pool[b].s_wm))
                        .then(b.cmp(&a))
                })
                .expect("non-empty pool");
            return Ok(pool.swap_remove(best));
        }
    }

    fn matched_among(
        &self,
        pool: &mut [CandidateSentence],
        indices: &[usize],
        flags: &FlagPattern,
    ) -> Vec<usize> {
        let mut matched = Vec::new();
        for &i in indices {
            let hit = matching_channels(&pool[i].cosines, flags) == flags.len();
            pool[i].matched = hit;
            if hit {
                matched.push(i);
            }
        }
        matched
    }

    fn select(
        &self,
        mut pool: Vec<CandidateSentence>,
        matched: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<CandidateSentence> {
        let scores: Vec<f64> = matched.iter().map(|&i| pool[i].score).collect();
        let pick = sample_softmax(&scores, self.cfg.epsilon, rng)?;
        Ok(pool.swap_remove(matched[pick]))
    }
}

/// Generates a watermarked document, deriving the pivots from `key`.
pub fn generate_document(
    sampler: &dyn CandidateSampler,
    embedder: &dyn Embedder,
    key: &PrivateKey,
    prompt: &str,
    cfg: &GenerationConfig,
    rng: &mut dyn RngCore,
) -> Result<WatermarkedDocument> {
    Watermarker::new(key.clone(), cfg.clone(), embedder.dimension())?
        .generate(sampler, embedder, prompt, rng)
}

/// Step-keyed comparison generator; see [`Watermarker::generate_step_keyed`].
pub fn generate_document_step_keyed(
    sampler: &dyn CandidateSampler,
    embedder: &dyn Embedder,
    key: &PrivateKey,
    prompt: &str,
    cfg: &GenerationConfig,
    rng: &mut dyn RngCore,
) -> Result<WatermarkedDocument> {
    Watermarker::new(key.clone(), cfg.clone(), embedder.dimension())?
        .generate_step_keyed(sampler, embedder, prompt, rng)
}

/// Unwatermarked control: each sentence is a uniform pick from an unfiltered
/// pool drawn by the same sampler.
pub fn generate_control(
    sampler: &dyn CandidateSampler,
    prompt: &str,
    cfg: &GenerationConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<String>> {
    let mut context = prompt.to_owned();
    let mut sentences = Vec::with_capacity(cfg.max_sentences);
    for _ in 0..cfg.max_sentences {
        let mut pool = sampler.sample(&context, cfg.budget, rng)?;
        if pool.is_empty() {
            return Err(Error::Backend("sampler returned no candidates".into()));
        }
        let pick = rng.random_range(0..pool.len());
        let s = pool.swap_remove(pick);
        if !context.is_empty() {
            context.push(' ');
        }
        context.push_str(&s);
        sentences.push(s);
    }
    Ok(sentences)
}
