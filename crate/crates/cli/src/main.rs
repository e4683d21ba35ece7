//! `tweezer-readout`: depump budgets, count distributions, sweeps, Monte Carlo
//! runs and histogram fits from one scenario config.

mod commands;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tweezer_readout::scenario::ScenarioConfig;

#[derive(Debug, Parser)]
#[command(
    name = "tweezer-readout",
    version,
    about = "Single-atom fluorescence readout model"
)]
struct Cli {
    /// Scenario config (strict JSON).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: paper-sigma, paper-pi, paper-final, paper-lowdepth.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "TWEEZER_READOUT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Depump budget of the trap, probe and Raman channels.
    Rates,
    /// Count distribution for both preparations.
    Distribution {
        /// Largest count to tabulate (default: where the tail is negligible).
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Readout errors over a grid of t_d, threshold, depth_mhz or background.
    Sweep {
        /// `name=start:stop:count` or `name=v1,v2,...`; at most two.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Also estimate loss with this many Monte Carlo shots per preparation.
        #[arg(long)]
        loss_shots: Option<u64>,
        /// Evaluate grid points on one thread.
        #[arg(long)]
        serial: bool,
    },
    /// Monte Carlo run of the adaptive protocol.
    Simulate {
        /// Total shots, alternated bright/dark in batches of 100.
        #[arg(long, default_value_t = 200_000)]
        shots: u64,
        /// Per-shot records CSV.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Directory for count and wait-time histogram CSVs.
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Fit the per-scatter depump probability to a count histogram.
    Fit {
        /// `n,count` CSV; a `.json` sidecar with the same stem is read if present.
        histogram: PathBuf,
        /// Hold the bright rate at the config value.
        #[arg(long)]
        fix_rate: bool,
        /// Residuals against a same-mean Poisson, as CSV.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Analytic summary: budget, errors, optimal threshold and time.
    Report,
    /// Print the resolved config as canonical JSON.
    Config,
}

fn load_config(cli: &Cli) -> anyhow::Result<ScenarioConfig> {
    if let Some(path) = &cli.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return ScenarioConfig::from_json(&text)
            .with_context(|| format!("config {}", path.display()));
    }
    let name = cli.preset.as_deref().unwrap_or("paper-final");
    Ok(ScenarioConfig::preset(name)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(tweezer_readout::Error::Validation {
                path: "threads".into(),
                message: "must be >= 1".into(),
            }
            .into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = load_config(&cli)?;
    let out = output::Sink::new(cli.out.clone());
    match &cli.command {
        Command::Rates => commands::rates(&cfg, cli.format, &out),
        Command::Distribution { n_max } => commands::distribution(&cfg, *n_max, cli.format, &out),
        Command::Sweep {
            params,
            loss_shots,
            serial,
        } => sweep::run(
            &cfg,
            params,
            *loss_shots,
            *serial,
            cli.seed,
            cli.format,
            &out,
        ),
        Command::Simulate {
            shots,
            records,
            histograms,
        } => commands::simulate(
            &cfg,
            *shots,
            cli.seed,
            records.as_deref(),
            histograms.as_deref(),
            cli.format,
            &out,
        ),
        Command::Fit {
            histogram,
            fix_rate,
            residuals,
        } => commands::fit(
            &cfg,
            histogram,
            *fix_rate,
            residuals.as_deref(),
            cli.format,
            &out,
        ),
        Command::Report => commands::report(&cfg, cli.format, &out),
        Command::Config => commands::config(&cfg, cli.format, &out),
    }
}

/// 2 for bad input, 3 for numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tweezer_readout::Error>() {
            return if e.is_validation() { 2 } else { 3 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
