use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kglab::runner::{load, run, Command};

#[derive(Parser)]
#[command(name = "kglab", version, about = "Klein-Gordon equations with singular masses on graded groups")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; the built-in default is used when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a value, e.g. `--set time.t_final=2` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Single run at `solve.epsilon`, with energy and estimate series.
    Solve,
    /// Very-weak existence sweep over the epsilon net.
    Sweep,
    /// Perturbed-net comparison and negligibility certificate.
    Uniqueness,
    /// Convergence to the classical solution for a bounded mass.
    Consistency,
    /// Norm tables of the regularized mass over the net.
    Mollifier,
    /// Full invariant battery.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: --threads must be a positive integer");
            return ExitCode::from(2);
        }
    }
    let command = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Sweep => Command::Sweep,
        Cmd::Uniqueness => Command::Uniqueness,
        Cmd::Consistency => Command::Consistency,
        Cmd::Mollifier => Command::Mollifier,
        Cmd::Selftest => Command::Selftest,
    };
    let result = load(cli.config.as_deref(), &cli.overrides).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: a verdict failed or the run aborted; partial outputs kept", command.name());
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
