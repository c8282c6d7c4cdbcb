//! `aq`: calibrate, score, allocate, quantize, pack and evaluate a toy
//! policy from one TOML configuration.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{substream_seed, Loaded, PipelineConfig};
pub use error::{CliError, ErrorClass};
use report::Render;

#[derive(Debug, Parser)]
#[command(name = "aq", version, about = "Mixed-precision weight quantization pipeline for the toy reaching policy")]
pub struct Cli {
    /// Pipeline configuration (TOML). Relative paths inside it resolve
    /// against its directory. Defaults apply when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate, score, allocate, quantize, pack and evaluate; writes the
    /// JSON report to paths.report.
    Run,
    /// Train the policy and write the checkpoint to paths.policy.
    Train,
    /// Write a calibration set from on-policy states.
    Calibrate,
    /// Score every tensor in the calibration set.
    Sensitivity,
    /// Choose one type per tensor under the budget.
    Allocate {
        /// Enumerate every assignment instead of the greedy solver.
        #[arg(long)]
        exact: bool,
    },
    /// Search block scales for every assigned tensor.
    Quantize,
    /// Attach provenance metadata and write the final pack.
    Pack,
    /// Describe a pack file.
    Inspect {
        /// Pack to read instead of paths.pack.
        #[arg(long)]
        pack: Option<PathBuf>,
    },
    /// Closed-loop success of the policy and its quantized pack.
    Eval {
        /// Pack to evaluate instead of paths.pack.
        #[arg(long)]
        pack: Option<PathBuf>,
    },
    /// Run the five-rung ablation ladder.
    Ablate {
        /// Budget instead of quantize.budget.
        #[arg(long)]
        budget: Option<f64>,
        /// Also write the per-run table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration, defaults included.
    Config,
}

fn emit<T: Serialize + Render>(v: &T, json: bool) -> String {
    if json {
        let mut s = serde_json::to_string_pretty(v).expect("serializable");
        s.push('\n');
        s
    } else {
        v.render()
    }
}

/// Executes one command and returns what it prints on stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let loaded = PipelineConfig::load(cli.config.as_deref())?;
    loaded.config.validate()?;
    let l = &loaded;
    let j = cli.json;
    Ok(match &cli.command {
        Command::Run => emit(&pipeline::run(l)?, j),
        Command::Train => emit(&pipeline::train(l)?, j),
        Command::Calibrate => emit(&pipeline::calibrate(l)?, j),
        Command::Sensitivity => emit(&pipeline::sensitivity(l)?, j),
        Command::Allocate { exact } => emit(&pipeline::allocate(l, *exact)?, j),
        Command::Quantize => emit(&pipeline::quantize(l)?, j),
        Command::Pack => emit(&pipeline::pack(l)?, j),
        Command::Inspect { pack } => emit(&pipeline::inspect(l, pack.as_deref())?, j),
        Command::Eval { pack } => emit(&pipeline::eval(l, pack.as_deref())?, j),
        Command::Ablate { budget, csv } => emit(&pipeline::ablate(l, *budget, csv.as_deref())?, j),
        Command::Config => {
            if j {
                let mut s = serde_json::to_string_pretty(&l.config).expect("serializable");
                s.push('\n');
                s
            } else {
                l.config.to_toml()
            }
        }
    })
}
