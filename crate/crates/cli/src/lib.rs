//! Batch front end: TOML config, JSONL documents and the five commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod records;

use std::path::PathBuf;

use anchormark::{AttackKind, AttackSpec};
use clap::{Parser, Subcommand};

pub use commands::{GenerateMode, Scheme};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use records::{DocumentRecord, PromptRecord, RecordMeta};

#[derive(Debug, Parser)]
#[command(
    name = "anchormark",
    version,
    about = "Order-invariant semantic watermarking"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one watermarked document per prompt.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// JSONL with `id` and `prompt`.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Write unwatermarked control documents instead.
        #[arg(long)]
        control: bool,
        /// Use position-keyed flags (comparison scheme).
        #[arg(long, conflicts_with = "control")]
        step_keyed: bool,
    },
    /// Score documents and record z and the decision in their metadata.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Threshold; falls back to `tau` in the config.
        #[arg(long, allow_negative_numbers = true)]
        tau: Option<f64>,
        #[arg(long, value_enum, default_value_t = Scheme::SelfAnchored)]
        scheme: Scheme,
    },
    /// Write attacked copies of documents.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// shuffle, word-delete or word-substitute.
        #[arg(long)]
        attack: AttackKind,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        ratio: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        angle: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Calibrate on negatives and report TP rates, AUC and diversity.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        neg: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate, attack, detect and evaluate in one run.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate {
            config,
            prompts,
            out,
            control,
            step_keyed,
        } => {
            let mode = match (control, step_keyed) {
                (true, _) => GenerateMode::Control,
                (_, true) => GenerateMode::StepKeyed,
                _ => GenerateMode::Watermarked,
            };
            commands::generate(&config, &prompts, &out, mode)?;
        }
        Command::Detect {
            config,
            docs,
            out,
            tau,
            scheme,
        } => {
            let summary = commands::detect(&config, &docs, &out, tau, scheme)?;
            log::info!(
                "scored {} record(s), {} error(s)",
                summary.records,
                summary.errors
            );
        }
        Command::Attack {
            config,
            docs,
            out,
            attack,
            ratio,
            angle,
            seed,
        } => {
            let spec = AttackSpec {
                kind: attack,
                ratio,
                angle,
                seed,
            };
            commands::attack(&config, &docs, &out, spec)?;
        }
        Command::Evaluate {
            config,
            pos,
            neg,
            out,
        } => {
            let report = commands::evaluate(&config, &pos, &neg, &out)?;
            println!(
                "tp@fp1 {:.4}  tp@fp5 {:.4}  auc {:.4}  tau {:.4}",
                report.tp_at_fp1, report.tp_at_fp5, report.auc, report.tau_used
            );
        }
        Command::Experiment {
            config,
            prompts,
            out_dir,
        } => {
            let report = commands::experiment(&config, &prompts, &out_dir)?;
            println!(
                "tp@fp1 {:.4}  tp@fp5 {:.4}  auc {:.4}  tau {:.4}",
                report.tp_at_fp1, report.tp_at_fp5, report.auc, report.tau_used
            );
        }
    }
    Ok(())
}
