use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mango_cli::formats::{read_matrix_csv, write_stream};
use mango_cli::runner::stream_for_seed;
use mango_cli::{emit_reports, parse_config, run_experiment, selftest, Error};

#[derive(Parser)]
#[command(name = "mango", version, about = "Online continual learning with gated, meta-regularized updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write reports.
    Run {
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Write into an existing, non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Generate the configured synthetic stream and write it as a stream file.
    GenStream {
        config: PathBuf,
        out: PathBuf,
        /// Run seed whose stream draw to write.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute metrics from a stored accuracy-matrix CSV.
    EvalMatrix { csv: PathBuf },
    /// Run the oracle suites.
    Selftest,
}

fn fmt_metric(name: &str, value: mango_core::Result<mango_core::Ratio>) -> String {
    match value {
        Ok(v) => format!("{name} = {}", v.to_f64()),
        Err(_) => format!("{name} = n/a"),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
            overwrite,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let report = run_experiment(&cfg)?;
            let files = emit_reports(&report, &cfg.output_dir, overwrite)?;
            for (seed, err) in report.failed() {
                eprintln!("seed {seed} failed: {err}");
            }
            let Some(agg) = report.aggregate else {
                return Err(Error::AllSeedsFailed);
            };
            println!("method = {}", cfg.method);
            println!("acc = {} ± {}", agg.acc.0, agg.acc.1);
            println!("aaa = {} ± {}", agg.aaa.0, agg.aaa.1);
            println!("wc_acc = {} ± {}", agg.wc_acc.0, agg.wc_acc.1);
            println!("bwt = {} ± {}", agg.bwt.0, agg.bwt.1);
            println!("wrote {} files to {}", files.len(), cfg.output_dir.display());
            Ok(if report.failed().next().is_some() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::GenStream { config, out, seed } => {
            let cfg = parse_config(&config)?;
            let tasks = stream_for_seed(&cfg.stream, seed).generate()?;
            write_stream(&out, &tasks)?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::EvalMatrix { csv } => {
            let m = read_matrix_csv(&csv)?;
            println!("{}", fmt_metric("acc", m.final_accuracy()));
            println!("{}", fmt_metric("aaa", m.aaa()));
            println!("{}", fmt_metric("wc_acc", m.wc_acc()));
            println!("{}", fmt_metric("bwt", m.bwt()));
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Config { .. } | Error::Invalid(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
