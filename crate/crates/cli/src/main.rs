//! Command-line harness: JSON-configured experiments over the fBm-driven
//! SDE/SFDE library, emitting a schema-versioned CSV plus a run manifest.

mod config;
mod runner;

use clap::{Parser, Subcommand};
use config::{ExperimentConfig, DRIFT_PRESETS, PAYOFFS, SIGMA_PRESETS};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "fbmsde",
    about = "Fractional-Brownian SDE simulation, Malliavin-weight gradients and Harnack checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory for results.csv and manifest.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads (results are identical for any count).
        #[arg(long)]
        workers: Option<usize>,
        /// Echo every result row to stdout.
        #[arg(long)]
        verbose: bool,
    },
    /// List the drift/sigma presets and payoff names.
    ListPresets,
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    ExperimentConfig::parse(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListPresets => {
            println!("drift presets:");
            println!("  ZERO                    b = 0");
            println!("  LINEAR(kappa)           b(x) = -kappa x");
            println!("  TANH_BOUNDED(amp,kappa) b(x) = amp tanh(kappa x); bounded drift, bounded Lipschitz gradient");
            println!("  DELAY_LINEAR(kappa)     b(phi) = -kappa phi(-r0)  [SFDE]");
            println!("sigma presets:");
            println!("  IDENTITY                sigma = Id");
            println!("  DIAG_HOLDER(eps,alpha0) sigma_ii(t) = 1 + eps t^alpha0, analytic inverse");
            println!("payoffs: {}", PAYOFFS.join(", "));
            debug_assert!(DRIFT_PRESETS.len() + SIGMA_PRESETS.len() >= 4);
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            out,
            workers,
            verbose,
        } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(w) = workers {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
                    eprintln!("cannot configure {w} workers: {e}");
                    return ExitCode::from(2);
                }
            }
            let started = Instant::now();
            let rows = match runner::execute(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("run failed: {e}");
                    return ExitCode::from(2);
                }
            };
            let out_dir = match &cfg.output {
                Some(sub) => out.join(sub),
                None => out.clone(),
            };
            let experiment = serde_json::to_string(&cfg.experiment)
                .unwrap_or_default()
                .trim_matches('"')
                .to_string();
            if let Err(e) = runner::write_artifacts(
                &out_dir,
                &experiment,
                &cfg,
                &rows,
                started.elapsed().as_secs_f64(),
            ) {
                eprintln!("cannot write artifacts: {e}");
                return ExitCode::from(2);
            }
            let failures = rows.iter().filter(|r| !r.passed()).count();
            if verbose {
                for r in &rows {
                    println!(
                        "[{}] {} {} est={} se={} oracle={} oerr={}",
                        r.verdict, r.id, r.params, r.estimate, r.std_error, r.oracle, r.oracle_error
                    );
                }
            }
            println!(
                "{} rows written to {} ({} failures)",
                rows.len(),
                out_dir.join("results.csv").display(),
                failures
            );
            if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
