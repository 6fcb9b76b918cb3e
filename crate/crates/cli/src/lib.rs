//! Command-line front end: configuration, orchestration and file formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{run, Command, Inputs};
use crate::config::{load_config, parse_config, ExperimentConfig};
use crate::error::CliError;
use crate::io::write_outputs;

#[derive(Debug, Parser)]
#[command(name = "nvdeer", version, about = "NV-ensemble DEER simulation and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: `output.dir` from the config, else `.`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data file to fit.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// ODMR (or hole-burnt) spectrum of a single probe pulse.
    SimulateOdmr(#[command(flatten)] Common),
    /// Rabi oscillation against pulse length.
    SimulateRabi(#[command(flatten)] Common),
    /// Four-phase Hahn-echo trace against τ.
    SimulateEcho(#[command(flatten)] Common),
    /// Four-phase 3-pulse DEER trace against the pump offset.
    SimulateDeer3(#[command(flatten)] Common),
    /// Four-phase 4-pulse DEER trace against the pump offset.
    SimulateDeer4(#[command(flatten)] Common),
    /// Lorentzian triplet fit of a spectrum CSV.
    FitOdmr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Pump efficiency from a hole-burnt and a reference spectrum.
    HoleburnEfficiency {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Spectrum without the pump pulse.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Exponential and complex decay fits of a trace CSV.
    FitDecay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Excited-spin concentration from a decay rate or a trace CSV.
    AnalyzeConcentration {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Decay rate (1/s).
        #[arg(long)]
        rate: Option<f64>,
        /// One-sigma error of the rate (1/s).
        #[arg(long, requires = "rate")]
        rate_err: Option<f64>,
    },
    /// Monte-Carlo DEER trace of a random spin bath.
    McBath(#[command(flatten)] Common),
}

impl Sub {
    fn split(self) -> (Command, Common, Inputs) {
        let none = Inputs::default();
        match self {
            Sub::SimulateOdmr(c) => (Command::SimulateOdmr, c, none),
            Sub::SimulateRabi(c) => (Command::SimulateRabi, c, none),
            Sub::SimulateEcho(c) => (Command::SimulateEcho, c, none),
            Sub::SimulateDeer3(c) => (Command::SimulateDeer3, c, none),
            Sub::SimulateDeer4(c) => (Command::SimulateDeer4, c, none),
            Sub::McBath(c) => (Command::McBath, c, none),
            Sub::FitOdmr { common, input } => (
                Command::FitOdmr,
                common,
                Inputs { input: input.input, ..none },
            ),
            Sub::HoleburnEfficiency { common, input, reference } => (
                Command::HoleburnEfficiency,
                common,
                Inputs { input: input.input, reference, ..none },
            ),
            Sub::FitDecay { common, input } => (
                Command::FitDecay,
                common,
                Inputs { input: input.input, ..none },
            ),
            Sub::AnalyzeConcentration { common, input, rate, rate_err } => (
                Command::AnalyzeConcentration,
                common,
                Inputs { input: input.input, rate, rate_err, ..none },
            ),
        }
    }
}

/// Parses, runs and writes. Returns the written paths.
pub fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (cmd, common, inputs) = cli.command.split();
    let mut config: ExperimentConfig = match &common.config {
        Some(p) => load_config(p)?,
        None => parse_config("{}")?,
    };
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let files = match common.threads {
        Some(0) => return Err(CliError::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| run(cmd, &config, &inputs))?,
        None => run(cmd, &config, &inputs)?,
    };
    write_outputs(&out, &files)
}
