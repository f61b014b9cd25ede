mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use output::{write_report, Report};

#[derive(Parser)]
#[command(
    name = "shuffledp",
    version,
    about = "Run, sweep, and exactly audit shuffle-model private protocols"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a protocol for several trials and summarize error quantiles.
    Run(CommonArgs),
    /// Exact (epsilon, delta) audit of one neighboring dataset pair.
    Audit(CommonArgs),
    /// Cartesian grid of protocol parameters, one summary per cell.
    Sweep(CommonArgs),
    /// Poissonized chi-square uniformity test on privatized counts.
    TestUniformity(CommonArgs),
    /// Solve noise parameters or accountant quantities for a budget.
    SolveParams(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Write records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
    /// Overrides the trial count in the config.
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

fn load<T: DeserializeOwned>(path: &PathBuf) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

fn dispatch(cli: Cli) -> Result<(Report, CommonArgs), String> {
    match cli.cmd {
        Cmd::Run(args) => {
            let report = commands::run(load(&args.config)?, args.seed, args.trials)?;
            Ok((report, args))
        }
        Cmd::Audit(args) => Ok((commands::audit(load(&args.config)?)?, args)),
        Cmd::Sweep(args) => {
            let report = commands::sweep(load(&args.config)?, args.seed, args.trials)?;
            Ok((report, args))
        }
        Cmd::TestUniformity(args) => {
            let report = commands::test_uniformity(load(&args.config)?, args.seed, args.trials)?;
            Ok((report, args))
        }
        Cmd::SolveParams(args) => Ok((commands::solve_params(load(&args.config)?)?, args)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok((report, args)) => {
            let format = match args.format {
                FormatArg::Jsonl => output::Format::Jsonl,
                FormatArg::Csv => output::Format::Csv,
            };
            if let Err(e) = write_report(&report, &format, args.out.as_deref()) {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(report.exit)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
