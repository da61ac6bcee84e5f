use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use scnet::experiment::{
    run_experiment, run_pair, run_verify, sweep, ExperimentConfig, FaultInjection, SweepParam, VerifyBudget,
    VerifyScope, OUTPUT_ROOT_ENV,
};

/// Train and compare feedforward networks with short-circuit gradient connections.
#[derive(Parser)]
#[command(name = "scnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and write its metrics.
    Run {
        config: PathBuf,
        /// Override both the init and shuffle seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train two configs that differ only in short circuits and compare them.
    Pair {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the comparison files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized gradient oracles: fd, sc-delta or all.
    Verify {
        scope: String,
        #[arg(long, default_value_t = 100)]
        networks: usize,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 8)]
        max_width: usize,
        #[arg(long, default_value_t = 4)]
        max_batch: usize,
        /// Refuse to finite-difference networks larger than this.
        #[arg(long, default_value_t = 10_000)]
        max_params: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write one JSON record per network here.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Re-run one config over several values of sc_weight or batch_size.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the values on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn under_output_root(path: PathBuf) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed } => {
            let config = load(&config, seed)?;
            let outcome = run_experiment(&config)?;
            let last = outcome.summary.last();
            println!(
                "{}: {} epochs, train loss {:.6}, test accuracy {:.4} -> {}",
                config.name,
                last.epoch,
                last.train_loss,
                last.test_accuracy,
                outcome.output_dir.display()
            );
            Ok(true)
        }
        Command::Pair {
            config_a,
            config_b,
            seed,
            out,
        } => {
            let a = load(&config_a, seed)?;
            let b = load(&config_b, seed)?;
            let out = under_output_root(
                out.unwrap_or_else(|| PathBuf::from(format!("runs/pair-{}-vs-{}", a.name, b.name))),
            );
            let report = run_pair(&a, &b, &out)?;
            print!("{}", report.to_text());
            println!("comparison written to {}", out.display());
            Ok(true)
        }
        Command::Verify {
            scope,
            networks,
            max_depth,
            max_width,
            max_batch,
            max_params,
            seed,
            jsonl,
            inject_fault,
        } => {
            let scope: VerifyScope = scope.parse()?;
            let mut budget = VerifyBudget {
                networks,
                max_depth,
                max_width,
                max_batch,
                seed,
                ..VerifyBudget::default()
            };
            budget.fd.max_params = max_params;
            let fault = inject_fault.then_some(FaultInjection {
                network: 0,
                delta: 1e-3,
            });
            let report = run_verify(scope, &budget, fault)?;
            print!("{}", report.to_text());
            if let Some(path) = jsonl {
                std::fs::write(&path, report.to_jsonl())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(report.passed())
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
            parallel,
        } => {
            let param: SweepParam = param.parse()?;
            if values.is_empty() {
                bail!("--values needs at least one value");
            }
            let config = load(&config, seed)?;
            let out = under_output_root(out.unwrap_or_else(|| {
                let mut dir = config.output_dir.clone().into_os_string();
                dir.push(format!("-sweep-{}", param.name()));
                PathBuf::from(dir)
            }));
            let points = sweep(&config, param, &values, &out, parallel)?;
            for p in &points {
                let last = p.summary.last();
                println!(
                    "{}={}: train loss {:.6}, test accuracy {:.4}",
                    param.name(),
                    p.value,
                    last.train_loss,
                    last.test_accuracy
                );
            }
            println!("summary written to {}", out.join("summary.csv").display());
            Ok(true)
        }
    }
}
