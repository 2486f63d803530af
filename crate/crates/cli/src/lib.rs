//! Command-line driver for the trace-inversion pipeline. Each subcommand is
//! one stage; stages communicate through files in the run directory and a
//! run manifest that chains their digests.

pub mod commands;
pub mod config;
pub mod report;
pub mod runlog;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tinv_core::stages::CollectRole;
use tinv_core::{InversionSetting, StudentVariant};

pub use commands::Outcome;
pub use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "tinv",
    version,
    about = "Trace-inversion distillation pipeline"
)]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "tinv.json")]
    pub config: PathBuf,
    /// Run directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Summary,
    NoSummary,
}

impl From<SettingArg> for InversionSetting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Summary => InversionSetting::Summary,
            SettingArg::NoSummary => InversionSetting::NoSummary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Surrogate,
    Victim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    SynthesizedTrace,
    VictimTrace,
    SurrogateTrace,
    AnswerOnly,
    AnswerPlusSummary,
}

impl From<VariantArg> for StudentVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::SynthesizedTrace => StudentVariant::SynthesizedTrace,
            VariantArg::VictimTrace => StudentVariant::VictimTrace,
            VariantArg::SurrogateTrace => StudentVariant::SurrogateTrace,
            VariantArg::AnswerOnly => StudentVariant::AnswerOnly,
            VariantArg::AnswerPlusSummary => StudentVariant::AnswerPlusSummary,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write disjoint surrogate and victim id lists.
    Split,
    /// Query the surrogate or victim endpoint over its split.
    Collect {
        #[arg(long)]
        role: RoleArg,
        /// Collect only this many victim ids (a prefix of the budget order).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Attach compressor summaries to surrogate traces.
    Compress,
    /// Build the inversion-model fine-tuning set.
    BuildInversion {
        #[arg(long)]
        setting: Option<SettingArg>,
    },
    /// Synthesize traces for victim records with the served inversion model.
    Invert {
        #[arg(long)]
        setting: Option<SettingArg>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Build a student fine-tuning set.
    BuildSft {
        #[arg(long)]
        variant: VariantArg,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score candidate traces against reference traces by id.
    Score {
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Consolidate the run directory into one report.
    Report,
}

/// Loads the config, applies flag overrides and runs the subcommand.
pub fn run(cli: Cli) -> Result<Outcome> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let setting = |arg: Option<SettingArg>| arg.map(Into::into).unwrap_or(config.setting);
    match cli.command {
        Command::Split => commands::split(&config),
        Command::Collect { role, budget } => {
            let role = match role {
                RoleArg::Surrogate => CollectRole::Surrogate,
                RoleArg::Victim => CollectRole::Victim,
            };
            commands::collect_role(&config, role, budget)
        }
        Command::Compress => commands::compress(&config),
        Command::BuildInversion { setting: s } => commands::build_inversion(&config, setting(s)),
        Command::Invert { setting: s, budget } => commands::run_invert(&config, setting(s), budget),
        Command::BuildSft { variant, budget } => {
            commands::build_sft(&config, variant.into(), budget)
        }
        Command::Score {
            candidates,
            references,
            budget,
        } => commands::score(&config, candidates, references, budget),
        Command::Report => {
            let report = report::build(&config)?.with_context(|| {
                format!(
                    "no {} in {}",
                    runlog::RUN_MANIFEST,
                    config.out_dir.display()
                )
            })?;
            let layout = commands::Layout::new(&config.out_dir);
            let text = report.to_text();
            std::fs::write(
                layout.report("json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            std::fs::write(layout.report("txt"), &text)?;
            print!("{text}");
            for gap in &report.gaps {
                log::warn!("stage {gap} has not run");
            }
            Ok(report.outcome())
        }
    }
}
