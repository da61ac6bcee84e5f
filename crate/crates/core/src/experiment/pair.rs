//! Baseline vs short-circuit comparisons on a shared seed.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{create_dir, load_data, run_with_data, write_file, DataSplit, RunSummary};
use crate::data::batches;
use crate::engine::forward;
use crate::error::{Error, Result};
use crate::topology::{build, init_weights};

pub const LOSS_CURVES_CSV: &str = "loss_curves.csv";
pub const GRADIENT_PROFILES_CSV: &str = "gradient_profiles.csv";
pub const COMPARISON_JSON: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerComparison {
    pub layer: usize,
    pub a_abs_mean: f64,
    pub b_abs_mean: f64,
    pub a_signed_mean: f64,
    pub b_signed_mean: f64,
    /// `b_abs_mean / a_abs_mean`.
    pub ratio: f64,
    /// `b` has the larger absolute mean gradient.
    pub enhanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub epochs: usize,
    pub step0_forward_identical: bool,
    pub a_final_train_loss: f64,
    pub b_final_train_loss: f64,
    pub a_final_test_accuracy: f64,
    pub b_final_test_accuracy: f64,
    /// Largest per-epoch difference in train loss, test loss or accuracy.
    pub max_divergence: f64,
    /// Per-layer comparison at the first epoch with gradient telemetry.
    pub gradient_epoch: Option<usize>,
    pub layers: Vec<LayerComparison>,
}

impl PairReport {
    pub fn enhanced_layers(&self) -> Vec<usize> {
        self.layers.iter().filter(|l| l.enhanced).map(|l| l.layer).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} vs {} over {} epochs\n  final train loss: {:.6} vs {:.6}\n  final test accuracy: {:.4} vs {:.4}\n  max divergence: {:e}\n",
            self.a,
            self.b,
            self.epochs,
            self.a_final_train_loss,
            self.b_final_train_loss,
            self.a_final_test_accuracy,
            self.b_final_test_accuracy,
            self.max_divergence
        );
        if let Some(epoch) = self.gradient_epoch {
            let _ = writeln!(s, "  mean |gradient| at epoch {epoch}:");
            for l in &self.layers {
                let _ = writeln!(
                    s,
                    "    layer {}: {:.3e} vs {:.3e} (x{:.2}){}",
                    l.layer,
                    l.a_abs_mean,
                    l.b_abs_mean,
                    l.ratio,
                    if l.enhanced { "  enhanced" } else { "" }
                );
            }
        }
        s
    }
}

/// Names of top-level settings that differ between `a` and `b`, ignoring
/// `name`, `output_dir` and the short circuits.
fn differing_fields(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<&'static str> {
    let mut na = a.network.clone();
    let mut nb = b.network.clone();
    na.short_circuits.clear();
    nb.short_circuits.clear();
    let mut out = Vec::new();
    if na != nb {
        out.push("network");
    }
    if a.train != b.train {
        out.push("train");
    }
    if a.data != b.data || a.base_dir != b.base_dir {
        out.push("data");
    }
    if a.telemetry != b.telemetry {
        out.push("telemetry");
    }
    out
}

/// Trains both configs on the same data and compares them.
pub fn run_pair(a: &ExperimentConfig, b: &ExperimentConfig, out_dir: &Path) -> Result<PairReport> {
    let diff = differing_fields(a, b);
    if !diff.is_empty() {
        return Err(Error::Contract(format!(
            "paired configs may differ only in short circuits, but differ in: {}",
            diff.join(", ")
        )));
    }
    a.check()?;
    b.check()?;
    let data = load_data(a)?;
    let step0 = step0_identical(a, b, &data)?;
    if !step0 {
        return Err(Error::Contract(
            "paired networks disagree on the first forward pass".into(),
        ));
    }
    let ra = run_with_data(a, &data)?.summary;
    let rb = run_with_data(b, &data)?.summary;
    let report = compare(&ra, &rb, step0);

    create_dir(out_dir)?;
    write_file(&out_dir.join(LOSS_CURVES_CSV), loss_curves_csv(&[&ra, &rb]))?;
    write_file(&out_dir.join(GRADIENT_PROFILES_CSV), gradient_profiles_csv(&[&ra, &rb]))?;
    write_file(
        &out_dir.join(COMPARISON_JSON),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    Ok(report)
}

fn step0_identical(a: &ExperimentConfig, b: &ExperimentConfig, data: &DataSplit) -> Result<bool> {
    let (ta, tb) = (build(&a.network)?, build(&b.network)?);
    let (pa, pb) = (init_weights(&ta), init_weights(&tb));
    if pa != pb {
        return Ok(false);
    }
    let Some(first) = batches(&data.train, &a.train.batch, 0)?.next() else {
        return Ok(true);
    };
    Ok(forward(&ta, &pa, &first.inputs)?.output() == forward(&tb, &pb, &first.inputs)?.output())
}

fn compare(a: &RunSummary, b: &RunSummary, step0: bool) -> PairReport {
    let max_divergence = a
        .records
        .iter()
        .zip(&b.records)
        .flat_map(|(x, y)| {
            [
                (x.train_loss - y.train_loss).abs(),
                (x.test_loss - y.test_loss).abs(),
                (x.train_accuracy - y.train_accuracy).abs(),
                (x.test_accuracy - y.test_accuracy).abs(),
            ]
        })
        .fold(0.0, f64::max);
    let first_profiled = a
        .records
        .iter()
        .zip(&b.records)
        .find_map(|(x, y)| Some((x.epoch, x.mean_gradients.as_ref()?, y.mean_gradients.as_ref()?)));
    let (gradient_epoch, layers) = match first_profiled {
        Some((epoch, ga, gb)) => (
            Some(epoch),
            ga.iter()
                .zip(gb)
                .map(|(x, y)| LayerComparison {
                    layer: x.layer,
                    a_abs_mean: x.abs_mean,
                    b_abs_mean: y.abs_mean,
                    a_signed_mean: x.signed_mean,
                    b_signed_mean: y.signed_mean,
                    ratio: y.abs_mean / x.abs_mean,
                    enhanced: y.abs_mean > x.abs_mean,
                })
                .collect(),
        ),
        None => (None, Vec::new()),
    };
    PairReport {
        a: a.name.clone(),
        b: b.name.clone(),
        epochs: a.records.len(),
        step0_forward_identical: step0,
        a_final_train_loss: a.last().train_loss,
        b_final_train_loss: b.last().train_loss,
        a_final_test_accuracy: a.last().test_accuracy,
        b_final_test_accuracy: b.last().test_accuracy,
        max_divergence,
        gradient_epoch,
        layers,
    }
}

fn loss_curves_csv(runs: &[&RunSummary]) -> String {
    let mut out = String::from("run,epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
    for run in runs {
        for r in &run.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                run.name, r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
            );
        }
    }
    out
}

fn gradient_profiles_csv(runs: &[&RunSummary]) -> String {
    let mut out = String::from("run,epoch,layer,signed_mean,abs_mean\n");
    for run in runs {
        for r in &run.records {
            for s in r.mean_gradients.iter().flatten() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    run.name, r.epoch, s.layer, s.signed_mean, s.abs_mean
                );
            }
        }
    }
    out
}
