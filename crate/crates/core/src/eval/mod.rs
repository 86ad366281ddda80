//! Calibration, detection metrics, diversity metrics and the experiment
//! runner.

mod experiment;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use experiment::{
    document_rng, run_experiment, stream_seed, ExperimentConfig, ExperimentOutcome, CONTROL_STREAM,
    WATERMARK_STREAM,
};
pub use metrics::{
    auc, calibrate_threshold, distinct_2, fourgram_repeat_pct, sentence_duplicate_pct, tp_at_fp,
    QualitySummary,
};

/// Which population a score was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Condition {
    Watermarked,
    Unwatermarked,
    /// Carries the attack label, e.g. `word-delete@0.15`.
    Attacked(String),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Watermarked => f.write_str("watermarked"),
            Condition::Unwatermarked => f.write_str("unwatermarked"),
            Condition::Attacked(label) => write!(f, "attacked:{label}"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "watermarked" => Ok(Condition::Watermarked),
            "unwatermarked" => Ok(Condition::Unwatermarked),
            _ => match s.strip_prefix("attacked:") {
                Some(label) if !label.is_empty() => Ok(Condition::Attacked(label.to_owned())),
                _ => Err(Error::Config(format!("unknown condition {s:?}"))),
            },
        }
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> Self {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub doc_id: String,
    pub condition: Condition,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    /// Against the unwatermarked scores; absent for the null itself or when
    /// there is no null.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_at_fp1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_at_fp5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

/// TP rate at one calibrated operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fp: f64,
    pub tau: f64,
    pub tp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tp_at_fp1: f64,
    pub tp_at_fp5: f64,
    pub auc: f64,
    /// Threshold calibrated at the smallest configured FP rate.
    pub tau_used: f64,
    pub operating_points: Vec<OperatingPoint>,
    pub conditions: BTreeMap<String, ConditionSummary>,
    pub quality: QualitySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_quality: Option<QualitySummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Per-condition counts over shared bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

impl Histogram {
    pub fn from_samples(samples: &[ScoreSample], bins: usize) -> Self {
        let bins = bins.max(1);
        let (mut lo, mut hi) = samples
            .iter()
            .map(|s| s.z)
            .filter(|z| z.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
                (lo.min(z), hi.max(z))
            });
        if lo > hi {
            lo = 0.0;
            hi = 1.0;
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for s in samples.iter().filter(|s| s.z.is_finite()) {
            let bin = (((s.z - lo) / width) as usize).min(bins - 1);
            counts
                .entry(s.condition.to_string())
                .or_insert_with(|| vec![0; bins])[bin] += 1;
        }
        Self { edges, counts }
    }
}

fn summarize(z: &[f64]) -> ConditionSummary {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ConditionSummary {
        count: z.len(),
        mean,
        stddev: var.sqrt(),
        min: z.iter().copied().fold(f64::INFINITY, f64::min),
        max: z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        tp_at_fp1: None,
        tp_at_fp5: None,
        auc: None,
    }
}

pub const DEFAULT_FP_RATES: [f64; 2] = [0.01, 0.05];

/// Builds a report from raw scores. Unwatermarked samples form the null;
/// the headline figures use the watermarked samples, or every non-null
/// sample when no watermarked ones are present.
pub fn build_report(
    samples: &[ScoreSample],
    fp_rates: &[f64],
    quality: QualitySummary,
) -> Result<ExperimentReport> {
    for &fp in fp_rates {
        if !(fp > 0.0 && fp < 1.0) {
            return Err(Error::InvalidRate(fp));
        }
    }
    let mut by_condition: BTreeMap<&Condition, Vec<f64>> = BTreeMap::new();
    for s in samples {
        by_condition.entry(&s.condition).or_default().push(s.z);
    }
    let neg = by_condition
        .get(&Condition::Unwatermarked)
        .cloned()
        .ok_or(Error::EmptyNull)?;
    let pos: Vec<f64> = match by_condition.get(&Condition::Watermarked) {
        Some(z) => z.clone(),
        None => samples
            .iter()
            .filter(|s| s.condition != Condition::Unwatermarked)
            .map(|s| s.z)
            .collect(),
    };
    if pos.is_empty() {
        return Err(Error::EmptyList);
    }

    let mut warnings = Vec::new();
    let min_fp = if fp_rates.is_empty() {
        DEFAULT_FP_RATES[0]
    } else {
        fp_rates.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let needed = (1.0 / min_fp).ceil() as usize;
    if neg.len() < needed {
        warnings.push(format!(
            "only {} unwatermarked scores; at least {needed} are needed to calibrate FP rate {min_fp}",
            neg.len()
        ));
    }

    let mut conditions = BTreeMap::new();
    for (cond, z) in &by_condition {
        let mut summary = summarize(z);
        if **cond != Condition::Unwatermarked {
            summary.tp_at_fp1 = Some(tp_at_fp(z, &neg, 0.01)?);
            summary.tp_at_fp5 = Some(tp_at_fp(z, &neg, 0.05)?);
            summary.auc = Some(auc(z, &neg)?);
        }
        conditions.insert(cond.to_string(), summary);
    }

    let operating_points = fp_rates
        .iter()
        .map(|&fp| {
            Ok(OperatingPoint {
                fp,
                tau: calibrate_threshold(&neg, fp)?,
                tp: tp_at_fp(&pos, &neg, fp)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentReport {
        tp_at_fp1: tp_at_fp(&pos, &neg, 0.01)?,
        tp_at_fp5: tp_at_fp(&pos, &neg, 0.05)?,
        auc: auc(&pos, &neg)?,
        tau_used: calibrate_threshold(&neg, min_fp)?,
        operating_points,
        conditions,
        quality,
        control_quality: None,
        warnings,
    })
}
