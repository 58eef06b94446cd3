//! `kac` — experiment runner for the collision-process toolkit.
//!
//! Every subcommand reads one TOML config (or a built-in default),
//! runs a fully seeded computation, and writes a single machine-readable
//! payload: CSV for curves, JSON for check reports. Payload bytes are a
//! pure function of config + seed — reruns diff clean, and `--workers`
//! only changes how fast the answer arrives. Errors leave a JSON record
//! on stderr and a nonzero exit code; `verify` and `ou-check` exit
//! nonzero when a check fails.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

/// A runner failure. `Config` names the offending field so the fix is
/// mechanical; all variants serialize to a one-line JSON record on
/// stderr.
#[derive(Debug)]
pub enum CliError {
    Config { field: String, message: String },
    Io { path: PathBuf, message: String },
    Run { message: String },
}

impl CliError {
    fn to_json(&self) -> String {
        let record = match self {
            CliError::Config { field, message } => serde_json::json!({
                "error": { "kind": "config", "field": field, "message": message }
            }),
            CliError::Io { path, message } => serde_json::json!({
                "error": { "kind": "io", "path": path.display().to_string(), "message": message }
            }),
            CliError::Run { message } => serde_json::json!({
                "error": { "kind": "run", "message": message }
            }),
        };
        record.to_string()
    }
}

/// A finished subcommand: the payload to write and the process exit
/// code (nonzero only for failed checks).
pub struct Outcome {
    pub payload: String,
    pub exit: i32,
}

#[derive(Parser)]
#[command(
    name = "kac",
    version,
    about = "Simulate and verify collision processes coupled to thermostats and finite reservoirs"
)]
struct Cli {
    /// TOML experiment config; omit to use the subcommand's built-in default.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's random seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: one per core). Never affects results.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Output file (default: the config's `out`, else stdout).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Ensemble kinetic energy vs the moment-ODE oracle (CSV).
    EnergyDecay,
    /// Ensemble momentum vs the moment-ODE oracle (CSV; thermostat only).
    MomentumDecay,
    /// Covariance-sum coefficient, analytic vs history Monte Carlo (JSON).
    KMatrix,
    /// Residual checks for the velocity-regularization semigroup (JSON).
    OuCheck,
    /// Fisher information of the evolved mixture vs its decay envelope (CSV).
    InfoDecay,
    /// Relative entropy of the evolved mixture vs its decay envelope (CSV).
    EntropyDecay,
    /// Run the verification battery; nonzero exit on any failure (JSON).
    Verify,
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => commands::default_config(&cli.command),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone());

    let outcome = match cli.workers {
        Some(0) => {
            return Err(CliError::Config {
                field: "--workers".to_string(),
                message: "must be at least 1".to_string(),
            })
        }
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| CliError::Run {
                    message: format!("building worker pool: {e}"),
                })?;
            pool.install(|| commands::dispatch(&cli.command, &cfg))?
        }
        None => commands::dispatch(&cli.command, &cfg)?,
    };

    output::write_payload(out.as_deref(), &outcome.payload)?;
    if let Some(path) = &out {
        eprintln!("wrote {}", path.display());
    }
    Ok(outcome.exit)
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", err.to_json());
            1
        }
    };
    std::process::exit(code);
}
