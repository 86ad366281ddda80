//! TOML run configuration.
//!
//! Top-level keys mirror the generation parameters; `[embedder]` and
//! `[sampler]` select the backends and `[[attacks]]` lists the attack grid.
//! Endpoint URLs may be overridden with `ANCHORMARK_EMBEDDER_URL` and
//! `ANCHORMARK_SAMPLER_URL`.

use std::path::{Path, PathBuf};

use anchormark::eval::DEFAULT_FP_RATES;
use anchormark::generator::ScoreTransform;
use anchormark::{
    AttackKind, AttackSpec, DetectionConfig, EmbedderConfig, ExperimentConfig, GenerationConfig,
    Lexicon, PrivateKey, SamplerConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const EMBEDDER_URL_VAR: &str = "ANCHORMARK_EMBEDDER_URL";
pub const SAMPLER_URL_VAR: &str = "ANCHORMARK_SAMPLER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub key_hex: String,
    pub channels: usize,
    /// Overrides `embedder.dimension` when set.
    pub dimension: Option<usize>,
    pub kappa: f64,
    pub epsilon: f64,
    pub lambda_div: f64,
    pub lambda_nov: f64,
    pub theta_ngram: f64,
    pub theta_sem: f64,
    pub ngram_n: usize,
    #[serde(alias = "budget_n")]
    pub budget: usize,
    pub max_sentences: usize,
    pub max_pool_retries: usize,
    pub filters_enabled: bool,
    pub score_transform: ScoreTransform,
    /// Detection threshold; `detect --tau` takes precedence.
    pub tau: Option<f64>,
    pub fp_rates: Vec<f64>,
    pub seed: u64,
    /// Two-column substitution lexicon, relative to the config file.
    pub lexicon: Option<PathBuf>,
    pub histogram_bins: usize,
    pub embedder: EmbedderConfig,
    pub sampler: SamplerConfig,
    pub attacks: Vec<AttackSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            key_hex: String::new(),
            channels: g.channels,
            dimension: None,
            kappa: g.kappa,
            epsilon: g.epsilon,
            lambda_div: g.lambda_div,
            lambda_nov: g.lambda_nov,
            theta_ngram: g.theta_ngram,
            theta_sem: g.theta_sem,
            ngram_n: g.ngram_n,
            budget: g.budget,
            max_sentences: g.max_sentences,
            max_pool_retries: g.max_pool_retries,
            filters_enabled: g.filters_enabled,
            score_transform: g.score_transform,
            tau: None,
            fp_rates: DEFAULT_FP_RATES.to_vec(),
            seed: 0,
            lexicon: None,
            histogram_bins: 40,
            embedder: EmbedderConfig::default(),
            sampler: SamplerConfig::default(),
            attacks: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Parses, applies environment overrides and validates.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(lex) = &cfg.lexicon {
            if lex.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.lexicon = Some(dir.join(lex));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(EMBEDDER_URL_VAR) {
            self.embedder.endpoint_url = Some(url);
        }
        if let Ok(url) = std::env::var(SAMPLER_URL_VAR) {
            self.sampler.endpoint_url = Some(url);
        }
        if let Some(d) = self.dimension {
            self.embedder.dimension = d;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.key()?;
        self.generation().validate()?;
        self.embedder.validate()?;
        self.sampler.validate()?;
        if self.channels > self.embedder.dimension {
            return Err(anchormark::Error::InvalidChannelCount {
                channels: self.channels,
                dimension: self.embedder.dimension,
            }
            .into());
        }
        if let Some(tau) = self.tau {
            if !tau.is_finite() {
                return Err(CliError::config("tau must be finite"));
            }
        }
        for &fp in &self.fp_rates {
            if !(fp > 0.0 && fp < 1.0) {
                return Err(anchormark::Error::InvalidRate(fp).into());
            }
        }
        for spec in &self.attacks {
            spec.validate()?;
            if spec.kind == AttackKind::WordSubstitute && self.lexicon.is_none() {
                return Err(CliError::config("word-substitute attacks need a lexicon"));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> CliResult<PrivateKey> {
        if self.key_hex.is_empty() {
            return Err(CliError::config("config: key_hex is required"));
        }
        Ok(PrivateKey::from_hex(&self.key_hex)?)
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            channels: self.channels,
            budget: self.budget,
            kappa: self.kappa,
            epsilon: self.epsilon,
            lambda_div: self.lambda_div,
            lambda_nov: self.lambda_nov,
            theta_ngram: self.theta_ngram,
            theta_sem: self.theta_sem,
            ngram_n: self.ngram_n,
            max_sentences: self.max_sentences,
            max_pool_retries: self.max_pool_retries,
            filters_enabled: self.filters_enabled,
            score_transform: self.score_transform,
        }
    }

    pub fn detection(&self, tau: f64) -> DetectionConfig {
        DetectionConfig {
            channels: self.channels,
            dimension: self.embedder.dimension,
            kappa: self.kappa,
            tau,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            generation: self.generation(),
            attacks: self.attacks.clone(),
            fp_rates: self.fp_rates.clone(),
            seed: self.seed,
            histogram_bins: self.histogram_bins,
        }
    }

    pub fn load_lexicon(&self) -> CliResult<Option<Lexicon>> {
        match &self.lexicon {
            Some(path) => Ok(Some(Lexicon::load(path)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse("key_hex = \"00ff\"\n").unwrap();
        assert_eq!(cfg.generation(), GenerationConfig::default());
        assert_eq!(cfg.embedder.dimension, 768);
        assert_eq!(cfg.tau, None);
        assert_eq!(cfg.fp_rates, vec![0.01, 0.05]);
    }

    #[test]
    fn sections_and_grid_parse() {
        let cfg = RunConfig::parse(
            r#"
key_hex = "abcd"
dimension = 128
budget_n = 32
seed = 4
tau = 3.5

[embedder]
kind = "builtin-hash"
salt = "s"

[sampler]
kind = "repeating"
motif_count = 2

[[attacks]]
kind = "shuffle"

[[attacks]]
kind = "embed-noise"
angle = 0.2
"#,
        )
        .unwrap();
        assert_eq!(cfg.embedder.dimension, 128);
        assert_eq!(cfg.budget, 32);
        assert_eq!(cfg.detection(1.0).dimension, 128);
        assert_eq!(cfg.attacks.len(), 2);
        assert_eq!(cfg.attacks[1].angle, 0.2);
        assert_eq!(cfg.tau, Some(3.5));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "",
            "key_hex = \"zz\"",
            "key_hex = \"00\"\nkappa = -1.0",
            "key_hex = \"00\"\nunknown = 1",
            "key_hex = \"00\"\nfp_rates = [0.0]",
            "key_hex = \"00\"\n[[attacks]]\nkind = \"word-delete\"\nratio = 1.5",
            "key_hex = \"00\"\n[[attacks]]\nkind = \"word-substitute\"\nratio = 0.1",
            "key_hex = \"00\"\nchannels = 9\ndimension = 4",
            "key_hex = \"00\"\n[sampler]\nkind = \"remote\"",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?}");
        }
    }
}
