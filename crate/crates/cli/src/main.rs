//! Command-line runner for sequential-in-time training experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqtrain::experiment::{compare, run_to_dir, sweep, ExperimentConfig, RunSummary, SweepAxis};
use seqtrain::Error;

#[derive(Debug, Parser)]
#[command(name = "seqtrain", version, about = "Run, sweep and compare OtD/DtO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// output directory (default: the config's `output.dir`, else `runs/<config stem>`)
        #[arg(long)]
        out: Option<PathBuf>,
        /// exit with status 4 when a bound is falsified
        #[arg(long)]
        strict_bounds: bool,
    },
    /// Run one experiment per value of a swept parameter.
    Sweep {
        config: PathBuf,
        /// dt, tau, n_kernels or L
        #[arg(long)]
        axis: String,
        /// comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict_bounds: bool,
    },
    /// Paired parameter-trajectory difference of two experiments.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_FALSIFIED: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Parse(_) | Error::Precondition(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::RankDeficient { .. } | Error::LinearAlgebra(_) => {
            EXIT_DIVERGENCE
        }
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn print_summary(label: &str, s: &RunSummary) {
    let o = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
    println!(
        "{label}: {} / {}  steps={}  final_error={}  min_bound_margin={}  bounds_valid={}  hash={}",
        s.problem,
        s.scheme,
        s.n_steps,
        o(s.final_error),
        o(s.min_bound_margin),
        s.bounds_valid,
        &s.config_hash[..12]
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> seqtrain::Result<u8> {
    match cli.command {
        Command::Run {
            config,
            out,
            strict_bounds,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir(&stem(&config)));
            let outcome = run_to_dir(&cfg, &dir)?;
            print_summary("run", &outcome.summary);
            println!("artifacts: {}", dir.display());
            Ok(if strict_bounds && !outcome.summary.bounds_valid { EXIT_FALSIFIED } else { 0 })
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            strict_bounds,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let dir = out.unwrap_or_else(|| cfg.output_dir(&format!("{}-sweep-{}", stem(&config), axis.name())));
            let rows = sweep(&cfg, axis, &values, Some(&dir))?;
            for r in &rows {
                print_summary(&format!("{}={}", axis.name(), r.value), &r.summary);
                if let Some(order) = r.observed_order {
                    println!("  observed order {order:.4}");
                }
                if let Some(d) = r.otd_max_theta_diff {
                    println!("  max |theta - theta_otd| = {d:.3e}");
                }
            }
            println!("table: {}", dir.join("sweep.csv").display());
            let falsified = rows.iter().any(|r| !r.summary.bounds_valid);
            Ok(if strict_bounds && falsified { EXIT_FALSIFIED } else { 0 })
        }
        Command::Compare { config_a, config_b, out } => {
            let a = ExperimentConfig::load(&config_a)?;
            let b = ExperimentConfig::load(&config_b)?;
            let dir = out.unwrap_or_else(|| a.output_dir(&format!("compare-{}-{}", stem(&config_a), stem(&config_b))));
            std::fs::create_dir_all(&dir)?;
            let report = compare(&a, &b, Some(&dir))?;
            print_summary("a", &report.summary_a);
            print_summary("b", &report.summary_b);
            println!("max |theta_a - theta_b| over the run = {:.6e}", report.max_theta_diff);
            println!("artifacts: {}", dir.display());
            Ok(0)
        }
    }
}
