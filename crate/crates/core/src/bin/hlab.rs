use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nonlocal_hlab::io::{
    execute, load_config, run_experiment, Check, ExperimentConfig, ExperimentKind, RunError, RunOutcome, EXIT_ASSERTION,
    EXIT_PASS,
};

#[derive(Parser)]
#[command(name = "hlab", version, about = "Nonlocal H-convergence laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (0 for one per core); overrides the config.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides `output_path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the calculus and solver self-tests with built-in defaults.
    Selftest {
        /// Write reports for both self-tests below this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!(
            "{} {:<22} {:<24} value={:.3e} threshold={:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.check,
            c.case,
            c.value,
            c.threshold
        );
    }
}

fn summarize(outcome: &RunOutcome) {
    print_checks(&outcome.checks);
    println!(
        "{}: {} in {:.2}s",
        outcome.experiment.name(),
        if outcome.passed() { "passed" } else { "FAILED" },
        outcome.wall_time_seconds
    );
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
}

fn run(command: Command) -> Result<i32, RunError> {
    match command {
        Command::Run { config, threads, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if let Some(o) = out {
                cfg.output_path = o;
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg)?;
            summarize(&outcome);
            Ok(outcome.exit_code())
        }
        Command::Selftest { out } => {
            let mut code = EXIT_PASS;
            for kind in [ExperimentKind::CalculusSelftest, ExperimentKind::SolverSelftest] {
                let mut cfg = ExperimentConfig {
                    experiment: kind,
                    ..ExperimentConfig::default()
                };
                let outcome = match &out {
                    Some(dir) => {
                        cfg.output_path = dir.join(kind.name());
                        run_experiment(&cfg)?
                    }
                    None => execute(&cfg)?,
                };
                summarize(&outcome);
                if !outcome.passed() {
                    code = EXIT_ASSERTION;
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
