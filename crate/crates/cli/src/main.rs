use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use submodcur::submod::ObjectiveKind;
use submodcur_cli::config::{BenchConfig, SEED_ENV};
use submodcur_cli::run::{run_bench, write_bench, BENCH_FILE};
use submodcur_cli::{execute, CliError, ExperimentConfig, Mode, Outcome, Overrides};

#[derive(Parser)]
#[command(name = "submodcur", version, about = "Bandit-driven submodular subset selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// train | simulate | verify-theory | bench-greedy
        #[arg(long)]
        mode: Option<String>,
    },
    /// Time lazy vs naive greedy on random kernels; CSV goes to stdout.
    BenchGreedy {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        budget: f64,
        #[arg(long, value_delimiter = ',', default_value = "fl,gc,logdet")]
        kinds: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write bench.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, out, mode } => {
            let mode = match mode {
                Some(m) => Some(Mode::parse(&m).ok_or_else(|| CliError::Invalid(format!("--mode: unknown mode {m:?}")))?),
                None => None,
            };
            let overrides = Overrides { out, mode, env_seed: std::env::var(SEED_ENV).ok() };
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let outcome = execute(&cfg)?;
            match outcome {
                Outcome::Train { records, .. } => {
                    if let Some(last) = records.last() {
                        eprintln!("{} steps, final val_loss {:.4}, val_acc {:.4}", records.len(), last.val_loss, last.val_acc);
                    }
                }
                Outcome::Simulate { regret } => {
                    eprintln!("regret slope {:?}, mean regret at horizon {:.4e}", regret.slope, regret.mean_at_end)
                }
                Outcome::Verify { all_bounds_hold } => eprintln!("all_bounds_hold: {all_bounds_hold}"),
                Outcome::Bench { rows } => eprintln!("{} bench rows", rows.len()),
            }
            eprintln!("artifacts in {}", cfg.out.display());
            Ok(())
        }
        Command::BenchGreedy { sizes, budget, kinds, seed, out } => {
            let kinds = kinds
                .iter()
                .map(|k| ObjectiveKind::parse(k.trim()).ok_or_else(|| CliError::Invalid(format!("--kinds: unknown kind {k:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = run_bench(&BenchConfig { sizes, budget, kinds }, seed)?;
            let mut stdout = std::io::stdout().lock();
            submodcur::bench::write_bench_csv(&rows, &mut stdout).map_err(|e| CliError::Runtime(e.to_string()))?;
            stdout.flush().ok();
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
                write_bench(&dir.join(BENCH_FILE), &rows)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
