use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hlfd::harness::{self, ExperimentConfig};
use hlfd::{Error, Result};

#[derive(Parser)]
#[command(name = "hlfd", version, about = "Learning from heterogeneous scheduling demonstrations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write training and test demonstrations.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Only this training budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train one method on one budget.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        #[arg(long)]
        budget: usize,
    },
    /// Evaluate trained models on the test demonstrators.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Generate, train and evaluate every method at every budget.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn print_table(t: &harness::MetricTable) {
    print!("{}", t.to_csv());
    for f in &t.failures {
        eprintln!("failed: {} budget {}: {}", f.method, f.budget, f.error);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { common, budget } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            for (b, c) in harness::cmd_generate(&cfg, &common.out, budget)? {
                println!("budget {b}: edf {} nearest {} spt {}", c[0], c[1], c[2]);
            }
        }
        Cmd::Train { common, method, budget } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            harness::cmd_train(&cfg, &common.out, &method, budget)?;
            println!("{}", harness::model_path(&common.out, &method, budget).display());
        }
        Cmd::Evaluate { common, method, budget } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            print_table(&harness::cmd_evaluate(&cfg, &common.out, method.as_deref(), budget)?);
        }
        Cmd::Sweep { common, jobs } => {
            if jobs == 0 {
                return Err(Error::Usage("--jobs must be at least 1".into()));
            }
            let cfg = ExperimentConfig::load(&common.config)?;
            print_table(&harness::cmd_sweep(&cfg, &common.out, jobs)?);
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
