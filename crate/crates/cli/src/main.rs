use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ebflow_cli::commands::{
    cmd_evaluate, cmd_experiment, cmd_fit, cmd_generate, metrics_csv_header, metrics_csv_row,
    resolve_out,
};
use ebflow_cli::config::{ConfigError, ExperimentConfig};

/// Empirical-Bayes prior estimation for linear models: dataset generation,
/// seeded fits, evaluation, and multi-seed experiments.
#[derive(Parser)]
#[command(name = "ebflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Prints a line, ignoring a closed stdout (e.g. piping into `head`).
macro_rules! emit {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout(), $($arg)*);
    };
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset instance from the config's prior/design specs.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Dataset seed; defaults to the config's data_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to <config out_dir>/dataset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured algorithm to a dataset directory with one seed.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the metrics row for an existing result directory.
    Evaluate {
        /// Result directory produced by `fit`.
        #[arg(long)]
        result: PathBuf,
        /// Dataset directory the fit consumed.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run every configured seed against one generated instance and
    /// aggregate the summary table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the seed pool (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let config = ExperimentConfig::from_path(&config)?;
            let seed = seed.unwrap_or(config.data_seed);
            let out = match out {
                Some(o) => o,
                None => resolve_out(None, &config)?.join("dataset"),
            };
            cmd_generate(&config, seed, &out)?;
            emit!("dataset written to {}", out.display());
        }
        Command::Fit {
            config,
            data,
            seed,
            out,
        } => {
            let config = ExperimentConfig::from_path(&config)?;
            cmd_fit(&config, &data, seed, &out)?;
            emit!("result written to {}", out.display());
        }
        Command::Evaluate { result, data } => {
            let metrics = cmd_evaluate(&result, &data)?;
            emit!("{}", metrics_csv_header());
            emit!("{}", metrics_csv_row(&metrics));
        }
        Command::Experiment {
            config,
            out,
            threads,
        } => {
            let config = ExperimentConfig::from_path(&config)?;
            let out = resolve_out(out, &config)?;
            let summary = cmd_experiment(&config, &out, threads)?;
            emit!(
                "{} on {}/{} (n={}, p={}): tv {} +/- {}, iters-to-0.2 {}, failures {}/{}",
                summary.algorithm,
                summary.prior,
                summary.design,
                summary.n,
                summary.p,
                summary
                    .tv_mean
                    .map_or_else(|| "NA".into(), |v| format!("{v:.4}")),
                summary
                    .tv_sd
                    .map_or_else(|| "NA".into(), |v| format!("{v:.4}")),
                summary
                    .iters_to_tv02_median
                    .map_or_else(|| "NA".into(), |v| v.to_string()),
                summary.seeds_failed,
                summary.seeds_total,
            );
            emit!("summary written to {}", out.join("summary.csv").display());
        }
    }
    Ok(())
}

/// Exit codes: 0 success, 2 config error, 3 numerical failure, 1 otherwise.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<ebflow_core::Error>() {
            return if core.is_numerical() { 3 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
