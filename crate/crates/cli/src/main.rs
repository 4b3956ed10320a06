use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sig_lqc::experiment::{
    dump_control, run_experiment, validate, ConfigError, ExperimentConfig, RunError, Severity,
};
use sig_lqc::Workers;

#[derive(Parser)]
#[command(
    name = "sig-lqc",
    version,
    about = "Signature-control solver for linear-quadratic problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (L, M) sweep and write results to the configured output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses all cores. Results do not depend on it.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Check a config and list warnings and errors.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print one coordinate of the optimal control tensor.
    DumpTensor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        level_state: usize,
        #[arg(long)]
        level_control: usize,
        /// Control coordinate, starting at 1.
        #[arg(long, default_value_t = 1)]
        coord: usize,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
    Ok(ExperimentConfig::load(path)?)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
        } => {
            let mut cfg = load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            for issue in validate(&cfg)
                .iter()
                .filter(|i| i.severity == Severity::Warning)
            {
                eprintln!("{issue}");
            }
            let report = run_experiment(&cfg, Workers(workers), |row| {
                eprintln!(
                    "L={} M={}: cost {:.6} ± {:.6}",
                    row.l, row.m, row.cost_mean, row.cost_stderr
                );
            })?;
            println!("{}", report.output_dir.join("results.csv").display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let issues = validate(&cfg);
            for issue in &issues {
                println!("{issue}");
            }
            if issues.iter().any(|i| i.severity == Severity::Error) {
                return Err(ConfigError::Invalid(issues).into());
            }
            if issues.is_empty() {
                println!("ok");
            }
            Ok(())
        }
        Command::DumpTensor {
            config,
            level_state,
            level_control,
            coord,
            workers,
        } => {
            let cfg = load(&config)?;
            print!(
                "{}",
                dump_control(&cfg, level_state, level_control, coord, Workers(workers))?
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
