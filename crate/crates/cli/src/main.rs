use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use secureafl::orchestrator::Metric;
use secureafl_cli::compare::{compare_table, TableFormat};
use secureafl_cli::probe::probe_dir;
use secureafl_cli::sweep::{run_sweep, SweepOptions};
use secureafl_cli::{CliError, OUT_ENV};

#[derive(Parser)]
#[command(name = "secureafl", version, about = "Asynchronous federated learning defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config over one or more seeds.
    Run {
        config: PathBuf,
        /// Comma-separated seeds; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output root.
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
        /// Seeds run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Tabulate final metrics of several sweeps, defenses by attacks.
    Compare {
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Write convergence reports for a run or sweep directory.
    Probe { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Ter,
    Asr,
    Rmse,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            jobs,
            force,
        } => {
            let manifest = run_sweep(
                &config,
                &SweepOptions {
                    seeds,
                    out_root: out,
                    jobs,
                    force,
                },
            )?;
            println!("{}", manifest.out_dir.display());
        }
        Command::Compare { dirs, metric, format } => {
            let metric = match metric {
                MetricArg::Ter => Metric::Ter,
                MetricArg::Asr => Metric::Asr,
                MetricArg::Rmse => Metric::Rmse,
            };
            let format = match format {
                FormatArg::Text => TableFormat::Text,
                FormatArg::Csv => TableFormat::Csv,
            };
            print!("{}", compare_table(&dirs, metric)?.render(format));
        }
        Command::Probe { dir } => {
            for path in probe_dir(&dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
