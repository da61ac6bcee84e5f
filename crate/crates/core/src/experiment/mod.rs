//! Config-driven experiments: single runs, baseline/short-circuit pairs,
//! hyperparameter sweeps and the randomized verification suites.

pub mod config;
pub mod pair;
pub mod run;
pub mod suite;
pub mod sweep;

pub use config::{DataConfig, ExperimentConfig, TelemetryConfig, TrainConfig, OUTPUT_ROOT_ENV};
pub use pair::{run_pair, PairReport};
pub use run::{
    evaluate, load_data, run_experiment, run_with_data, train_run, DataSplit, MetricsRecord, RunOutcome,
    RunSummary,
};
pub use suite::{run_verify, FaultInjection, VerifyBudget, VerifyReport, VerifyScope};
pub use sweep::{sweep, SweepParam};
