use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use laica_core::harness::{self, ExperimentConfig};
use laica_core::verify::{self, Corollary1Sweep, Theorem1Suite};
use laica_core::LabError;

#[derive(Parser)]
#[command(name = "laica-lab", version, about = "Lifelong learning with growing action sets")]
struct Cli {
    /// Worker threads for trial execution (overrides LAICA_LAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write curves.csv, trials/ and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify the sub-optimality bound on random tabular instances.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        changes: usize,
        #[arg(long, default_value_t = verify::DEFAULT_GRID)]
        grid: usize,
    },
    /// Check that the covering radius and value gap shrink as actions arrive.
    VerifyCorollary1 {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        changes: usize,
    },
    /// Run only the adaptation phase at every change and print diagnostics.
    AdaptReport {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute curves from a run directory and write them as CSV.
    PlotData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), LabError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

fn execute(cli: Cli) -> Result<bool, LabError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let resolved = cfg.resolve()?;
            let output = harness::run_experiment(&resolved, cli.threads)?;
            for w in &output.manifest.warnings {
                log::warn!("{w}");
            }
            for c in &output.curves.curves {
                let last = c.mean_return.last().copied().unwrap_or(f64::NAN);
                println!("{}: {} trials, final running mean {last:.3}", c.algorithm, c.n_trials);
            }
            println!("wrote {}", resolved.output_dir.display());
            Ok(true)
        }
        Command::VerifyTheorem1 {
            instances,
            seed,
            out,
            changes,
            grid,
        } => {
            let suite = Theorem1Suite {
                instances,
                seed,
                n_changes: changes,
                grid_points_per_dim: grid,
                ..Theorem1Suite::default()
            };
            let report = verify::run_theorem1_suite(&suite)?;
            let summary = report.summary();
            write(&out.join("theorem1.csv"), report.to_csv())?;
            write(&out.join("theorem1_summary.json"), serde_json::to_string_pretty(&summary)?)?;
            println!(
                "{} of {} rows hold; max gap/bound {:.4}",
                summary.holding, summary.rows, summary.max_gap_to_bound_ratio
            );
            Ok(summary.all_hold)
        }
        Command::VerifyCorollary1 {
            seeds,
            seed,
            out,
            changes,
        } => {
            let sweep = Corollary1Sweep {
                seeds,
                seed,
                n_changes: changes,
                ..Corollary1Sweep::default()
            };
            let report = verify::run_corollary1_sweep(&sweep)?;
            write(&out.join("corollary1.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "epsilon non-increasing in all runs: {}; median gap first {:.6}, last {:.6}",
                report.all_epsilon_non_increasing, report.median_gap_first, report.median_gap_last
            );
            Ok(report.all_epsilon_non_increasing)
        }
        Command::AdaptReport { config } => {
            let resolved = ExperimentConfig::load(&config)?.resolve()?;
            for r in harness::adaptation_report(&resolved)? {
                println!("{}", serde_json::to_string(&r)?);
            }
            Ok(true)
        }
        Command::PlotData { input, out } => {
            let curves = harness::curves_from_dir(&input)?;
            write(&out, harness::curves_csv(&curves))?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
