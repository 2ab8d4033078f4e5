//! Command-line arguments. Flags override the matching configuration fields.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{load_config, Estimand, RunConfig, SimulateSpec};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "selbounds", version, about = "Bounds on risk-score performance under selective labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bounds on the performance of a supplied score.
    Evaluate(Common),
    /// Fit and serialize the conditional bound functions.
    LearnBounds(Common),
    /// Max-min decisions from serialized bound functions.
    Decide(Common),
    /// Replication study on simulated data.
    Simulate(Common),
    /// Bounds over a confounding or smoothing grid, with breakdown search.
    Sweep(Common),
    /// Write the simulated dataset (with its score column) to a CSV file.
    Export {
        #[command(flatten)]
        common: Common,
        /// Destination file.
        #[arg(long)]
        to: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Use the default simulated dataset instead of an input file.
    #[arg(long)]
    pub simulate: bool,
    /// Measure name or JSON object; repeatable.
    #[arg(long = "estimand")]
    pub estimands: Vec<String>,
    /// Bounding family as JSON, e.g. '{"family":"worst_case"}'.
    #[arg(long)]
    pub bounding: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub eps_clip: Option<f64>,
    /// Replications for `simulate`.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Serialized bound functions for `decide`.
    #[arg(long)]
    pub bounds_model: Option<PathBuf>,
}

fn flag_json<T: serde::de::DeserializeOwned>(flag: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config {
        path: flag.into(),
        message: e.to_string(),
    })
}

/// Loads the configuration file (if any) and applies flag overrides.
pub fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.input {
        cfg.input = Some(p.clone());
        cfg.simulate = None;
    }
    if c.simulate {
        cfg.simulate = Some(SimulateSpec(Default::default()));
        cfg.input = None;
    }
    if !c.estimands.is_empty() {
        cfg.estimand = None;
        cfg.estimands = c
            .estimands
            .iter()
            .map(|e| {
                let v = if e.trim_start().starts_with('{') {
                    flag_json("--estimand", e)?
                } else {
                    serde_json::Value::String(e.clone())
                };
                Estimand::try_from(v).map_err(|m| CliError::Config {
                    path: "--estimand".into(),
                    message: m,
                })
            })
            .collect::<Result<_>>()?;
    }
    if let Some(b) = &c.bounding {
        cfg.bounding = Some(flag_json("--bounding", b)?);
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.folds {
        cfg.folds = v;
    }
    if let Some(v) = c.eps_clip {
        cfg.eps_clip = v;
    }
    if let Some(v) = c.level {
        cfg.level = v;
    }
    if let Some(v) = &c.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &c.bounds_model {
        cfg.bounds_model = Some(v.clone());
    }
    Ok(cfg)
}

/// Runs one command and returns the files written.
pub fn run(cmd: &Command) -> Result<Vec<PathBuf>> {
    match cmd {
        Command::Evaluate(c) => Ok(commands::evaluate(&resolve(c)?)?.1),
        Command::LearnBounds(c) => Ok(commands::learn_bounds(&resolve(c)?)?.1),
        Command::Decide(c) => Ok(commands::decide(&resolve(c)?)?.1),
        Command::Simulate(c) => Ok(commands::simulate(&resolve(c)?, c.reps)?.1),
        Command::Sweep(c) => Ok(commands::sweep(&resolve(c)?)?.1),
        Command::Export { common, to } => {
            commands::export_simulated(&resolve(common)?, to)?;
            Ok(vec![to.clone()])
        }
    }
}
