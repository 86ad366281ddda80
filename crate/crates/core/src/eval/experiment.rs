use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_report, Condition, ExperimentReport, Histogram, QualitySummary, ScoreSample};
use crate::attacks::{attack_sentences, rotate_embedding, AttackKind, AttackSpec, Lexicon};
use crate::detector::Detector;
use crate::embedders::{Embedder, UnitEmbedding};
use crate::error::{Error, Result};
use crate::generator::{
    generate_control, CandidateSampler, GenerationConfig, WatermarkedDocument, Watermarker,
};
use crate::keycore::PrivateKey;

/// Stream domain for watermarked documents.
pub const WATERMARK_STREAM: u64 = 0x5741_544d_4152_4b00;
/// Stream domain for unwatermarked control documents.
pub const CONTROL_STREAM: u64 = 0x434f_4e54_524f_4c00;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generation: GenerationConfig,
    pub attacks: Vec<AttackSpec>,
    pub fp_rates: Vec<f64>,
    pub seed: u64,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            attacks: Vec::new(),
            fp_rates: super::DEFAULT_FP_RATES.to_vec(),
            seed: 0,
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub samples: Vec<ScoreSample>,
    pub histogram: Histogram,
    pub watermarked: Vec<WatermarkedDocument>,
    pub controls: Vec<Vec<String>>,
}

/// Per-document generator stream: one ChaCha stream per index under a seed
/// shared by the whole run.
pub fn document_rng(seed: u64, domain: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(index as u64);
    rng
}

/// Derives an independent 64-bit seed from a base seed and an index.
pub fn stream_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the attack on document `doc`. Independent of the attack strength
/// so that a grid over angles or ratios stays paired.
fn attack_seed(spec: &AttackSpec, doc: usize) -> u64 {
    stream_seed(spec.seed, doc as u64)
}

struct DocResult {
    watermarked: WatermarkedDocument,
    control: Vec<String>,
    samples: Vec<ScoreSample>,
    warnings: Vec<String>,
}

fn record(
    samples: &mut Vec<ScoreSample>,
    warnings: &mut Vec<String>,
    doc_id: &str,
    condition: Condition,
    z: Result<f64>,
) -> Result<()> {
    match z {
        Ok(z) if z.is_finite() => samples.push(ScoreSample {
            doc_id: doc_id.to_owned(),
            condition,
            z,
        }),
        Ok(z) => warnings.push(format!("{doc_id} ({condition}): non-finite z {z}")),
        Err(e) if e.is_backend() => return Err(e),
        Err(e) => warnings.push(format!("{doc_id} ({condition}): {e}")),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_document(
    index: usize,
    prompt: &str,
    cfg: &ExperimentConfig,
    watermarker: &Watermarker,
    detector: &Detector,
    sampler: &dyn CandidateSampler,
    embedder: &dyn Embedder,
    lexicon: Option<&Lexicon>,
) -> Result<DocResult> {
    let doc_id = format!("doc-{index:05}");
    let mut rng = document_rng(cfg.seed, WATERMARK_STREAM, index);
    let watermarked = watermarker.generate(sampler, embedder, prompt, &mut rng)?;
    let mut rng = document_rng(cfg.seed, CONTROL_STREAM, index);
    let control = generate_control(sampler, prompt, &cfg.generation, &mut rng)?;

    let mut samples = Vec::new();
    let mut warnings = Vec::new();

    let embeddings: Vec<UnitEmbedding> = embedder.embed_batch(&watermarked.sentences)?;
    record(
        &mut samples,
        &mut warnings,
        &doc_id,
        Condition::Watermarked,
        detector.score_embeddings(&embeddings).map(|s| s.z),
    )?;
    record(
        &mut samples,
        &mut warnings,
        &doc_id,
        Condition::Unwatermarked,
        detector.score_sentences(&control, embedder).map(|s| s.z),
    )?;

    for spec in &cfg.attacks {
        let seed = attack_seed(spec, index);
        let z = match spec.kind {
            AttackKind::EmbedNoise => embeddings
                .iter()
                .enumerate()
                .map(|(k, e)| rotate_embedding(e, spec.angle, stream_seed(seed, k as u64)))
                .collect::<Result<Vec<_>>>()
                .and_then(|rotated| detector.score_embeddings(&rotated))
                .map(|s| s.z),
            _ => {
                let seeded = AttackSpec { seed, ..*spec };
                attack_sentences(&watermarked.sentences, &seeded, lexicon)
                    .and_then(|attacked| detector.score_sentences(&attacked, embedder))
                    .map(|s| s.z)
            }
        };
        record(
            &mut samples,
            &mut warnings,
            &doc_id,
            Condition::Attacked(spec.label()),
            z,
        )?;
    }

    Ok(DocResult {
        watermarked,
        control,
        samples,
        warnings,
    })
}

/// Generates a watermarked and a control document per prompt, attacks the
/// watermarked ones with every spec in the grid, scores everything and
/// calibrates on the control scores.
pub fn run_experiment(
    prompts: &[String],
    cfg: &ExperimentConfig,
    key: &PrivateKey,
    sampler: &dyn CandidateSampler,
    embedder: &dyn Embedder,
    lexicon: Option<&Lexicon>,
) -> Result<ExperimentOutcome> {
    if prompts.is_empty() {
        return Err(Error::EmptyList);
    }
    for spec in &cfg.attacks {
        spec.validate()?;
        if spec.kind == AttackKind::WordSubstitute && lexicon.is_none_or(Lexicon::is_empty) {
            return Err(Error::EmptyLexicon);
        }
    }
    let watermarker = Watermarker::new(key.clone(), cfg.generation.clone(), embedder.dimension())?;
    let detector = Detector::new(
        key.clone(),
        cfg.generation.channels,
        embedder.dimension(),
        cfg.generation.kappa,
    )?;

    let results = prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            run_document(
                i,
                prompt,
                cfg,
                &watermarker,
                &detector,
                sampler,
                embedder,
                lexicon,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut watermarked = Vec::with_capacity(results.len());
    let mut controls = Vec::with_capacity(results.len());
    for r in results {
        samples.extend(r.samples);
        warnings.extend(r.warnings);
        watermarked.push(r.watermarked);
        controls.push(r.control);
    }

    let wm_sentences: Vec<&[String]> = watermarked.iter().map(|d| d.sentences.as_slice()).collect();
    let mut report = build_report(
        &samples,
        &cfg.fp_rates,
        QualitySummary::of_documents(&wm_sentences),
    )?;
    report.control_quality = Some(QualitySummary::of_documents(&controls));
    report.warnings.extend(warnings);
    let histogram = Histogram::from_samples(&samples, cfg.histogram_bins);

    Ok(ExperimentOutcome {
        report,
        samples,
        histogram,
        watermarked,
        controls,
    })
}
