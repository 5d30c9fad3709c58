//! Command-line front end of the experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpgm::config::{ConfigError, ExperimentConfig};
use dpgm::harness::{
    self, compute_reference_oracle, run_bounds_only, run_experiment, validate_config,
    HarnessError,
};

#[derive(Parser)]
#[command(
    name = "dpgm",
    about = "Online distributed proximal-gradient tracking: Monte Carlo experiments, bound evaluation, and ground-truth export",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's Monte Carlo replicate count.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment grid and write results.csv plus summary.txt.
    Run { config: PathBuf },
    /// Evaluate the theory-bound recursions only, without simulating.
    Bounds { config: PathBuf },
    /// Export the ground-truth trajectories of the first cell as CSV.
    Oracle { config: PathBuf },
    /// Check the configured scenario against the library invariants.
    Validate { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(runs) = cli.runs {
        config.monte_carlo_runs = runs;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = Some(dir.display().to_string());
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(config.out_dir.clone().unwrap_or_else(|| "results".into()))
}

fn execute(cli: &Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Run { config } => {
            let config = load(config, cli)?;
            let outcome = run_experiment(&config)?;
            let dir = out_dir(&config);
            let written = outcome.write_all(&dir)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            println!();
            print!("{}", harness::summarize(&outcome));
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { config } => {
            let config = load(config, cli)?;
            let report = run_bounds_only(&config)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let written = report.write_all(&out_dir(&config))?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { config } => {
            let config = load(config, cli)?;
            let (oracle, topology) = compute_reference_oracle(&config)?;
            let dir = out_dir(&config);
            std::fs::create_dir_all(&dir)?;
            let star = dir.join("oracle_xstar.csv");
            let tilde = dir.join("oracle_xtilde.csv");
            oracle.write_x_star_csv(std::fs::File::create(&star)?)?;
            oracle.write_x_tilde_csv(std::fs::File::create(&tilde)?)?;
            println!("topology {topology}, alpha {}", oracle.alpha);
            println!("sigma {:.6e}, sigma' {:.6e}", oracle.sigma, oracle.sigma_prime);
            println!("wrote {}", star.display());
            println!("wrote {}", tilde.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let config = load(config, cli)?;
            let report = validate_config(&config)?;
            for line in &report.lines {
                println!("{line}");
            }
            if report.ok {
                println!("validation passed");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("validation failed");
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(HarnessError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
