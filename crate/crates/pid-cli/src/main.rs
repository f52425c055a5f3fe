//! `pid` — train classifiers, craft adversarial examples, and evaluate the
//! prediction-inconsistency detector.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 reference-gate failure in `reproduce`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pid_cli::config::{parse_config, RunConfig};
use pid_cli::detect::{self, DetectArgs};
use pid_cli::pipeline::{self, Scope};
use pid_cli::reference;
use pid_core::error::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_GATE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pid",
    about = "Prediction-inconsistency detection of adversarial examples",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate data and train the primal and auxiliary models.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config file and PID_OUT_DIR).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the config file's global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train models and craft adversarial examples for every configured attack.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full detection study and write the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a prediction-record file and decide adversarial vs normal.
    Detect {
        /// Line-delimited prediction-record file.
        #[arg(long)]
        records: PathBuf,
        /// Inconsistency metric (1..=4).
        #[arg(long, default_value_t = 1)]
        metric: u8,
        /// Top-n count for metric 3.
        #[arg(long, default_value_t = 3)]
        top_n: usize,
        /// Target false-positive rate for threshold calibration.
        #[arg(long, default_value_t = 0.05)]
        target_fpr: f64,
        /// Fixed threshold; skips calibration.
        #[arg(long)]
        threshold: Option<f64>,
        /// Emit the summary as JSON.
        #[arg(long)]
        json: bool,
        /// Write per-record decisions to this file (JSON lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the committed reference study and check its gates.
    Reproduce {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, (u8, Error)> {
    let mut cfg = parse_config(path).map_err(|e| (EXIT_CONFIG, e))?;
    if let Some(seed) = seed {
        cfg.benchmark.seed = seed;
    }
    Ok(cfg)
}

fn classify(err: Error) -> (u8, Error) {
    let code = match &err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Stage { stage, .. } if stage == "config" => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    };
    (code, err)
}

fn run(cli: Cli) -> Result<u8, (u8, Error)> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let out = pipeline::resolve_out_dir(out_dir, &cfg);
            let summary = pipeline::run(&cfg, &out, Scope::Train).map_err(classify)?;
            println!(
                "trained primal (test accuracy {:.4}) and auxiliary (test accuracy {:.4})",
                summary.output.primal_test_accuracy, summary.output.auxiliary_test_accuracy
            );
            println!("models written under {}", out.join("models").display());
            Ok(0)
        }
        Command::Attack {
            config,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let out = pipeline::resolve_out_dir(out_dir, &cfg);
            let summary = pipeline::run(&cfg, &out, Scope::Attack).map_err(classify)?;
            for row in summary
                .output
                .report
                .rows
                .iter()
                .filter(|r| r.metric_id == cfg.benchmark.metrics[0])
            {
                println!(
                    "{}: attack success rate {:.2}% ({} successful AEs)",
                    row.attack_name,
                    row.asr * 100.0,
                    row.n_adv
                );
            }
            println!(
                "pairs and records written under {}",
                summary.out_dir.display()
            );
            Ok(0)
        }
        Command::Evaluate {
            config,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let out = pipeline::resolve_out_dir(out_dir, &cfg);
            let summary = pipeline::run(&cfg, &out, Scope::Evaluate).map_err(classify)?;
            println!(
                "primal test accuracy {:.4}, auxiliary test accuracy {:.4}",
                summary.output.primal_test_accuracy, summary.output.auxiliary_test_accuracy
            );
            print!("{}", summary.output.report.to_table());
            for path in &summary.report_paths {
                println!("report written to {}", path.display());
            }
            Ok(0)
        }
        Command::Detect {
            records,
            metric,
            top_n,
            target_fpr,
            threshold,
            json,
            out,
        } => {
            let args = DetectArgs {
                records,
                metric,
                top_n,
                target_fpr,
                threshold,
                json,
                out,
            };
            let summary = detect::run(&args).map_err(classify)?;
            detect::print_summary(&summary, args.json).map_err(classify)?;
            Ok(0)
        }
        Command::Reproduce { out_dir } => {
            let out = out_dir
                .or_else(|| std::env::var_os("PID_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("pid-out"));
            let (gates, _) = reference::reproduce(&out).map_err(classify)?;
            let mut all_passed = true;
            for gate in &gates {
                println!(
                    "[{}] {} ({})",
                    if gate.passed { "PASS" } else { "FAIL" },
                    gate.name,
                    gate.detail
                );
                all_passed &= gate.passed;
            }
            Ok(if all_passed { 0 } else { EXIT_GATE })
        }
    }
}
