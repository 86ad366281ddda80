use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anchormark::attacks::attack_sentences;
use anchormark::eval::{
    build_report, document_rng, run_experiment, stream_seed, QualitySummary, CONTROL_STREAM,
    WATERMARK_STREAM,
};
use anchormark::generator::generate_control;
use anchormark::{
    AttackKind, AttackSpec, CandidateSampler, Condition, DetectionScore, Detector, Embedder,
    ExperimentReport, Histogram, SamplerKind, ScoreSample, Watermarker,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::records::{
    read_documents, read_prompts, write_json, write_jsonl, DocumentRecord, RecordMeta,
};

/// Detection statistic to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Scheme {
    /// Blind detection with majority-vote flag inference.
    #[default]
    SelfAnchored,
    /// Position-keyed flags; only meaningful for step-keyed documents.
    StepKeyed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum GenerateMode {
    #[default]
    Watermarked,
    StepKeyed,
    /// Unwatermarked control: uniform picks from the sampler's pools.
    Control,
}

/// The repeating sampler draws its motifs per document; every other kind is
/// shared across the batch.
struct Samplers<'a> {
    cfg: &'a RunConfig,
    shared: Option<Box<dyn CandidateSampler>>,
}

impl<'a> Samplers<'a> {
    fn new(cfg: &'a RunConfig) -> CliResult<Self> {
        let shared = match cfg.sampler.kind {
            SamplerKind::Repeating => None,
            _ => Some(cfg.sampler.build(cfg.seed)?),
        };
        Ok(Self { cfg, shared })
    }

    fn with<T>(
        &self,
        index: usize,
        f: impl FnOnce(&dyn CandidateSampler) -> anchormark::Result<T>,
    ) -> anchormark::Result<T> {
        match &self.shared {
            Some(s) => f(s.as_ref()),
            None => f(self
                .cfg
                .sampler
                .build(stream_seed(self.cfg.seed, index as u64))?
                .as_ref()),
        }
    }
}

pub fn generate(config: &Path, prompts: &Path, out: &Path, mode: GenerateMode) -> CliResult<usize> {
    let cfg = RunConfig::load(config)?;
    let prompts = read_prompts(prompts)?;
    let embedder = cfg.embedder.build()?;
    let generation = cfg.generation();
    let watermarker = Watermarker::new(cfg.key()?, generation.clone(), embedder.dimension())?;
    let samplers = Samplers::new(&cfg)?;

    let records = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            samplers.with(i, |sampler| {
                let (sentences, condition, meta) = match mode {
                    GenerateMode::Control => {
                        let mut rng = document_rng(cfg.seed, CONTROL_STREAM, i);
                        let sentences =
                            generate_control(sampler, &p.prompt, &generation, &mut rng)?;
                        (sentences, Condition::Unwatermarked, RecordMeta::default())
                    }
                    _ => {
                        let mut rng = document_rng(cfg.seed, WATERMARK_STREAM, i);
                        let doc = if mode == GenerateMode::StepKeyed {
                            watermarker.generate_step_keyed(
                                sampler,
                                embedder.as_ref(),
                                &p.prompt,
                                &mut rng,
                            )?
                        } else {
                            watermarker.generate(sampler, embedder.as_ref(), &p.prompt, &mut rng)?
                        };
                        let meta = RecordMeta {
                            flags_used: Some(doc.flags),
                            fallback_events: Some(doc.fallback_events),
                            ..RecordMeta::default()
                        };
                        (doc.sentences, Condition::Watermarked, meta)
                    }
                };
                Ok(DocumentRecord {
                    id: p.id.clone(),
                    prompt: p.prompt.clone(),
                    sentences,
                    condition: condition.to_string(),
                    meta,
                })
            })
        })
        .collect::<anchormark::Result<Vec<_>>>()?;

    write_jsonl(out, &records)?;
    info!("wrote {} document(s) to {}", records.len(), out.display());
    Ok(records.len())
}

fn score(
    detector: &Detector,
    scheme: Scheme,
    sentences: &[String],
    embedder: &dyn Embedder,
) -> anchormark::Result<DetectionScore> {
    match scheme {
        Scheme::SelfAnchored => detector.score_sentences(sentences, embedder),
        Scheme::StepKeyed => detector.score_step_keyed(sentences, embedder),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectSummary {
    pub records: usize,
    pub errors: usize,
}

pub fn detect(
    config: &Path,
    docs: &Path,
    out: &Path,
    tau: Option<f64>,
    scheme: Scheme,
) -> CliResult<DetectSummary> {
    let cfg = RunConfig::load(config)?;
    let tau = tau.or(cfg.tau).ok_or_else(|| {
        CliError::config("no detection threshold: pass --tau or set tau in the config")
    })?;
    if !tau.is_finite() {
        return Err(CliError::config("tau must be finite"));
    }
    let docs = read_documents(docs)?;
    let embedder = cfg.embedder.build()?;
    let detector = Detector::new(cfg.key()?, cfg.channels, cfg.embedder.dimension, cfg.kappa)?;

    let records = docs
        .into_par_iter()
        .map(|mut rec| {
            rec.meta.clear_detection();
            match score(&detector, scheme, &rec.sentences, embedder.as_ref()) {
                Ok(s) => {
                    rec.meta.decision = Some(s.z > tau);
                    rec.meta.z = Some(s.z);
                    rec.meta.tau = Some(tau);
                }
                Err(e) if e.is_backend() => return Err(e),
                Err(e) => rec.meta.error = Some(e.kind().to_owned()),
            }
            Ok(rec)
        })
        .collect::<anchormark::Result<Vec<_>>>()?;

    let errors = records.iter().filter(|r| r.meta.error.is_some()).count();
    if errors > 0 {
        warn!("{errors} record(s) could not be scored; see meta.error");
    }
    write_jsonl(out, &records)?;
    Ok(DetectSummary {
        records: records.len(),
        errors,
    })
}

pub fn attack(config: &Path, docs: &Path, out: &Path, spec: AttackSpec) -> CliResult<usize> {
    spec.validate()?;
    if spec.kind == AttackKind::EmbedNoise {
        return Err(CliError::config(
            "embed-noise perturbs embeddings and has no text form; add it to the attack grid of `experiment` instead",
        ));
    }
    let cfg = RunConfig::load(config)?;
    let lexicon = match spec.kind {
        AttackKind::WordSubstitute => Some(
            cfg.load_lexicon()?
                .ok_or_else(|| CliError::config("word-substitute needs `lexicon` in the config"))?,
        ),
        _ => None,
    };
    let docs = read_documents(docs)?;
    let condition = Condition::Attacked(spec.label()).to_string();

    let records = docs
        .into_par_iter()
        .enumerate()
        .map(|(i, mut rec)| {
            let seeded = AttackSpec {
                seed: stream_seed(spec.seed, i as u64),
                ..spec
            };
            rec.sentences = attack_sentences(&rec.sentences, &seeded, lexicon.as_ref())?;
            rec.meta.clear_detection();
            rec.meta.extra.insert(
                "source_condition".into(),
                serde_json::Value::String(rec.condition),
            );
            rec.condition = condition.clone();
            Ok(rec)
        })
        .collect::<anchormark::Result<Vec<_>>>()?;

    write_jsonl(out, &records)?;
    Ok(records.len())
}

/// `report.json` -> `report.<suffix>`
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Uses a stored `meta.z` when present and runs detection otherwise.
fn collect_scores(
    docs: &[DocumentRecord],
    condition_of: impl Fn(&DocumentRecord) -> Condition + Sync,
    detector: &Detector,
    embedder: &dyn Embedder,
) -> CliResult<(Vec<ScoreSample>, Vec<String>)> {
    let scored = docs
        .par_iter()
        .map(|rec| {
            let z = match rec.meta.z {
                Some(z) => Ok(z),
                None => detector
                    .score_sentences(&rec.sentences, embedder)
                    .map(|s| s.z),
            };
            match z {
                Ok(z) if z.is_finite() => Ok(Ok(ScoreSample {
                    doc_id: rec.id.clone(),
                    condition: condition_of(rec),
                    z,
                })),
                Ok(z) => Ok(Err(format!("{}: non-finite z {z}", rec.id))),
                Err(e) if e.is_backend() => Err(e),
                Err(e) => Ok(Err(format!("{}: {e}", rec.id))),
            }
        })
        .collect::<anchormark::Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for s in scored {
        match s {
            Ok(sample) => samples.push(sample),
            Err(w) => warnings.push(w),
        }
    }
    Ok((samples, warnings))
}

fn write_sidecars(out: &Path, samples: &[ScoreSample], bins: usize) -> CliResult<()> {
    write_json(
        &sidecar(out, "histogram.json"),
        &Histogram::from_samples(samples, bins),
    )?;
    write_jsonl(&sidecar(out, "scores.jsonl"), samples)
}

pub fn evaluate(config: &Path, pos: &Path, neg: &Path, out: &Path) -> CliResult<ExperimentReport> {
    let cfg = RunConfig::load(config)?;
    let pos_docs = read_documents(pos)?;
    let neg_docs = read_documents(neg)?;
    let embedder = cfg.embedder.build()?;
    let detector = Detector::new(cfg.key()?, cfg.channels, cfg.embedder.dimension, cfg.kappa)?;

    let positive_condition = |rec: &DocumentRecord| match rec.condition.parse::<Condition>() {
        Ok(Condition::Unwatermarked) | Err(_) => Condition::Watermarked,
        Ok(c) => c,
    };
    let (mut samples, mut warnings) =
        collect_scores(&pos_docs, positive_condition, &detector, embedder.as_ref())?;
    let (neg_samples, neg_warnings) = collect_scores(
        &neg_docs,
        |_| Condition::Unwatermarked,
        &detector,
        embedder.as_ref(),
    )?;
    samples.extend(neg_samples);
    warnings.extend(neg_warnings);

    let pos_sentences: Vec<&[String]> = pos_docs.iter().map(|d| d.sentences.as_slice()).collect();
    let neg_sentences: Vec<&[String]> = neg_docs.iter().map(|d| d.sentences.as_slice()).collect();
    let mut report = build_report(
        &samples,
        &cfg.fp_rates,
        QualitySummary::of_documents(&pos_sentences),
    )?;
    report.control_quality = Some(QualitySummary::of_documents(&neg_sentences));
    report.warnings.extend(warnings);
    for w in &report.warnings {
        warn!("{w}");
    }

    write_json(out, &report)?;
    write_sidecars(out, &samples, cfg.histogram_bins)?;
    Ok(report)
}

/// Full pipeline into `out_dir`: report, raw scores, histogram and both
/// document sets.
pub fn experiment(config: &Path, prompts: &Path, out_dir: &Path) -> CliResult<ExperimentReport> {
    let cfg = RunConfig::load(config)?;
    let prompts = read_prompts(prompts)?;
    let embedder = cfg.embedder.build()?;
    let sampler = cfg.sampler.build(cfg.seed)?;
    let lexicon = cfg.load_lexicon()?;
    let texts: Vec<String> = prompts.iter().map(|p| p.prompt.clone()).collect();
    let mut outcome = run_experiment(
        &texts,
        &cfg.experiment(),
        &cfg.key()?,
        sampler.as_ref(),
        embedder.as_ref(),
        lexicon.as_ref(),
    )?;

    let ids: HashMap<String, &str> = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("doc-{i:05}"), p.id.as_str()))
        .collect();
    for s in &mut outcome.samples {
        if let Some(id) = ids.get(&s.doc_id) {
            s.doc_id = (*id).to_owned();
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let watermarked: Vec<DocumentRecord> = prompts
        .iter()
        .zip(outcome.watermarked)
        .map(|(p, doc)| DocumentRecord {
            id: p.id.clone(),
            prompt: p.prompt.clone(),
            sentences: doc.sentences,
            condition: Condition::Watermarked.to_string(),
            meta: RecordMeta {
                flags_used: Some(doc.flags),
                fallback_events: Some(doc.fallback_events),
                ..RecordMeta::default()
            },
        })
        .collect();
    let controls: Vec<DocumentRecord> = prompts
        .iter()
        .zip(outcome.controls)
        .map(|(p, sentences)| DocumentRecord {
            id: p.id.clone(),
            prompt: p.prompt.clone(),
            sentences,
            condition: Condition::Unwatermarked.to_string(),
            meta: RecordMeta::default(),
        })
        .collect();

    let report_path = out_dir.join("report.json");
    write_json(&report_path, &outcome.report)?;
    write_sidecars(&report_path, &outcome.samples, cfg.histogram_bins)?;
    write_jsonl(&out_dir.join("watermarked.jsonl"), &watermarked)?;
    write_jsonl(&out_dir.join("control.jsonl"), &controls)?;
    Ok(outcome.report)
}
