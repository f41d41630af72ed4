use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spikefed_cli::commands::{self, collect_runs, comparison_csv, format_comparison, resolve_workers};
use spikefed_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "spikefed", version, about = "Federated spiking-network training under label skew")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file (one run, or a sweep over algorithms and seeds).
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Client training threads; defaults to $FEDLEC_THREADS, then the core count.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `seed`/`seeds` in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Paired-by-seed accuracy deltas between completed runs.
    Compare {
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
        /// Also write the per-seed table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Algorithm the deltas are taken against; defaults to the first run's.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Print the per-client label shares an experiment file produces.
    PartitionReport { config: PathBuf },
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            out,
            workers,
            seed,
            quiet,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = Some(s);
                cfg.seeds = None;
            }
            cfg.validate()?;
            let workers = resolve_workers(workers)?;
            let dirs = commands::run(&cfg, &out, workers, |line| {
                if !quiet {
                    eprintln!("{line}");
                }
            })?;
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Compare { dirs, csv, baseline } => {
            let mut runs = vec![];
            for d in &dirs {
                runs.extend(collect_runs(d)?);
            }
            let cmp = commands::compare(&runs, baseline.as_deref())?;
            print!("{}", format_comparison(&cmp));
            if let Some(path) = csv {
                fs::write(path, comparison_csv(&cmp)?)?;
            }
        }
        Command::PartitionReport { config } => {
            let cfg = RunConfig::load(&config)?;
            print!("{}", commands::partition_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
