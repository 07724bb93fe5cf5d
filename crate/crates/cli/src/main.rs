//! `wavecat`: ingest sensor data, train, forecast with conformal bands,
//! and run the rolling evaluation with its MCB rank test.
//!
//! Exit codes: 0 success, 1 other failure, 2 schema or config error,
//! 3 empty or too-short data, 4 missing input artifact, 5 numeric failure.
//! Errors are written to stderr as one JSON object.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use wavecat::eval::HorizonLabel;

use crate::commands::{Format, Overrides};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "wavecat", version, about = "Wavelet + ordered-boosting pollutant forecasting")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict the run to one pollutant.
    #[arg(long, global = true)]
    pollutant: Option<String>,
    #[arg(long, global = true, value_parser = parse_horizon)]
    horizon: Option<HorizonLabel>,
    /// Miscoverage level for `forecast`, test level for `mcb`.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// What `eval` prints to stdout.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Minute CSV to hourly, imputed per-pollutant series.
    Ingest {
        /// Overrides `data.raw`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit one model per pollutant and calibrate its intervals.
    Train,
    /// Point forecast, conformal interval and band plot per pollutant.
    Forecast,
    /// Rolling-origin MASE grid over models, pollutants and horizons.
    Eval,
    /// MCB rank test on the eval report.
    Mcb,
    /// ingest, train, forecast, eval and mcb in sequence.
    RunAll {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_horizon(s: &str) -> Result<HorizonLabel, String> {
    s.parse().map_err(|e: wavecat::Error| e.to_string())
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        pollutant: cli.pollutant.clone(),
        horizon: cli.horizon,
    };
    overrides.apply(&mut config)?;
    let format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    if let Some(a) = cli.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("--alpha must be in (0, 1), got {a}")));
        }
    }

    match cli.command {
        Command::Ingest { input } => commands::ingest(&config, input.as_deref()),
        Command::Train => commands::train(&config),
        Command::Forecast => commands::forecast(&config, cli.alpha),
        Command::Eval => {
            let (paths, shown) = commands::eval(&config, format)?;
            print!("{shown}");
            Ok(paths)
        }
        Command::Mcb => commands::mcb(&config, cli.alpha),
        Command::RunAll { input } => {
            let mut all = commands::ingest(&config, input.as_deref())?;
            all.extend(commands::train(&config)?);
            all.extend(commands::forecast(&config, cli.alpha)?);
            all.extend(commands::eval(&config, format)?.0);
            all.extend(commands::mcb(&config, cli.alpha)?);
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let is_eval = matches!(cli.command, Command::Eval);
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                // eval already printed its report to stdout
                if is_eval {
                    eprintln!("wrote {}", p.display());
                } else {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
