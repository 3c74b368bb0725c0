//! Command-line experiment runner: parses a run configuration, dispatches the
//! study and reports pass/fail through the exit status.

use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "stochwave", version, about = "Stochastic wave scattering studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a configuration file; exits nonzero if a
    /// gated threshold fails.
    Run {
        /// Path to the key = value configuration file.
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Manufactured-data sanity checks of the fitting machinery.
    Selftest,
    /// Print the effective configuration (defaults filled in, keys sorted).
    PrintEffectiveConfig {
        /// Path to the key = value configuration file.
        config: PathBuf,
    },
}

/// Honors the optional worker-count override. All results are byte-identical
/// for any worker count; this only controls parallelism.
fn init_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("STOCHWAVE_WORKERS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("STOCHWAVE_WORKERS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("STOCHWAVE_WORKERS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("failed to configure the worker pool")?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    init_workers()?;
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut cfg = stochwave::config::parse_config(&config)
                .with_context(|| format!("failed to parse {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let artifacts = stochwave::runner::run_study(&cfg)?;
            for check in &artifacts.summary.checks {
                println!(
                    "[{}] {}: value {} vs threshold {} -> {}",
                    artifacts.summary.study,
                    check.name,
                    check.value,
                    check.threshold,
                    if check.pass { "pass" } else { "FAIL" }
                );
            }
            for (name, value) in &artifacts.summary.extra {
                println!("[{}] {name} = {value}", artifacts.summary.study);
            }
            println!(
                "wrote {} file(s) under {}",
                artifacts.files.len(),
                cfg.output_dir.display()
            );
            if !artifacts.passed() {
                std::process::exit(1);
            }
        }
        Command::Selftest => {
            let results = stochwave::runner::selftest()?;
            let mut ok = true;
            for (name, pass) in &results {
                println!("{}: {}", if *pass { "pass" } else { "FAIL" }, name);
                ok &= pass;
            }
            if !ok {
                std::process::exit(1);
            }
        }
        Command::PrintEffectiveConfig { config } => {
            let cfg = stochwave::config::parse_config(&config)
                .with_context(|| format!("failed to parse {}", config.display()))?;
            print!("{}", cfg.effective_text());
        }
    }
    Ok(())
}
