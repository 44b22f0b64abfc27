use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcbf_cli::{emit_results, parse_scenario, run_sweep, summarize, write_records, write_summary, write_traces, CliError, Format};

#[derive(Parser)]
#[command(name = "mcbf", version, about = "Monte Carlo runs of multicell multicast beamforming schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme of a scenario file over its sweep and trials.
    Run {
        scenario: PathBuf,
        /// Record file; records go to stdout when omitted. Summary and trace
        /// CSVs are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn run(scenario: &Path, out: Option<&Path>, format: Format, trials: Option<usize>, seed: Option<u64>) -> Result<usize, CliError> {
    let mut cfg = parse_scenario(scenario)?;
    if let Some(n) = trials {
        if n == 0 {
            return Err(CliError::Scenario {
                path: "--trials".into(),
                message: "must be at least 1".into(),
            });
        }
        cfg.trials = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    log::info!(
        "{} points x {} trials x {} schemes",
        cfg.points().len(),
        cfg.trials,
        cfg.schemes.len()
    );
    let result = run_sweep(&cfg)?;
    let summary = summarize(&result.records);
    match out {
        Some(path) => {
            emit_results(&result.records, path, format)?;
            write_summary(&summary, std::fs::File::create(sibling(path, "summary"))?)?;
            if !result.traces.is_empty() {
                write_traces(&result.traces, std::fs::File::create(sibling(path, "trace"))?)?;
            }
            write_summary(&summary, io::stderr())?;
        }
        None => write_records(&result.records, format, io::stdout().lock())?,
    }
    Ok(result.errors())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run {
        scenario,
        out,
        format,
        trials,
        seed,
    } = Cli::parse().command;
    match run(&scenario, out.as_deref(), format, trials, seed) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: {n} runs failed; see the message column");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
