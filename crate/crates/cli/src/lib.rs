//! Command-line front end: data ingestion, QoE and policy training,
//! trace-driven evaluation and report tables.

pub mod data_cmd;
pub mod eval_cmd;
pub mod qoe_cmd;
pub mod report_cmd;
pub mod settings;
pub mod train_cmd;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use settings::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "rankabr", version, about = "Rank-trained QoE models and ABR policy training")]
pub struct Cli {
    /// TOML file with one table per command; its values override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate external traces, manifests or ratings and store them canonically.
    Ingest(data_cmd::IngestArgs),
    /// Generate synthetic traces, a manifest and a rater panel.
    Synth(data_cmd::SynthArgs),
    /// Train the rank-based neural QoE model and the linear surrogate.
    TrainQoe(qoe_cmd::TrainQoeArgs),
    /// Identity Rate of trained QoE models on a ratings set.
    EvalQoe(qoe_cmd::EvalQoeArgs),
    /// Train the bitrate policy.
    TrainAbr(train_cmd::TrainAbrArgs),
    /// Play ABRs over a trace set and write session, aggregate and CDF tables.
    EvalAbr(eval_cmd::EvalAbrArgs),
    /// Turn run logs and evaluation reports into plot-ready tables.
    Report(report_cmd::ReportArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Ingest(a) => data_cmd::run_ingest(a, &cfg),
        Command::Synth(a) => data_cmd::run_synth(a, &cfg),
        Command::TrainQoe(a) => qoe_cmd::run_train(a, &cfg),
        Command::EvalQoe(a) => qoe_cmd::run_eval(a, &cfg),
        Command::TrainAbr(a) => train_cmd::run(a, &cfg),
        Command::EvalAbr(a) => eval_cmd::run(a, &cfg),
        Command::Report(a) => report_cmd::run(a, &cfg),
    }
}
