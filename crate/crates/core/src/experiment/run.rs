use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, ExperimentConfig};
use crate::data::{batches, load_mnist_idx, synth_blobs, Dataset};
use crate::engine::{forward, train_step};
use crate::error::{Error, Result};
use crate::loss::loss_value;
use crate::topology::{build, init_weights, Params, Topology};
use crate::verify::{mean_gradient_profile, LayerGradientStat, ProfileAccumulator};

/// Rows per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(config: &ExperimentConfig) -> Result<DataSplit> {
    match &config.data {
        DataConfig::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
        } => {
            let mut train = load_mnist_idx(
                config.resolve_data_path(train_images),
                config.resolve_data_path(train_labels),
            )?;
            let test = load_mnist_idx(
                config.resolve_data_path(test_images),
                config.resolve_data_path(test_labels),
            )?;
            if let Some(limit) = *train_limit {
                let n = limit.min(train.len());
                train = Dataset {
                    inputs: train.inputs.slice_rows(0, n),
                    targets: train.targets.slice_rows(0, n),
                    class_count: train.class_count,
                };
            }
            Ok(DataSplit { train, test })
        }
        DataConfig::Synth {
            classes,
            per_class,
            dims,
            separation,
            seed,
            test_per_class,
        } => Ok(DataSplit {
            train: synth_blobs(*classes, *per_class, *dims, *separation, *seed)?,
            test: synth_blobs(*classes, (*test_per_class).max(1), *dims, *separation, seed.wrapping_add(1))?,
        }),
    }
}

/// One epoch's metrics. `train_loss` and `train_accuracy` are averaged over
/// the epoch's steps using each batch's pre-update predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_gradients: Option<Vec<LayerGradientStat>>,
}

/// Wall-clock time per epoch. Kept out of [`MetricsRecord`] so metrics files
/// stay byte-identical across re-runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub records: Vec<MetricsRecord>,
    pub timings: Vec<EpochTiming>,
    pub params: Params,
}

impl RunSummary {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("at least one epoch")
    }
}

/// `(mean loss, accuracy)` over a dataset.
pub fn evaluate(topology: &Topology, params: &Params, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let inputs = data.inputs.slice_rows(start, end);
        let targets = data.targets.slice_rows(start, end);
        let trace = forward(topology, params, &inputs)?;
        loss_sum += loss_value(topology.loss(), trace.output(), &targets)? * (end - start) as f64;
        correct += count_correct(trace.output(), &targets);
        start = end;
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

fn count_correct(prediction: &crate::Matrix, targets: &crate::Matrix) -> usize {
    prediction
        .argmax_rows()
        .iter()
        .zip(targets.argmax_rows())
        .filter(|(p, t)| **p == *t)
        .count()
}

/// Trains per `config` on already-loaded data. No files are touched.
pub fn train_run(config: &ExperimentConfig, data: &DataSplit) -> Result<RunSummary> {
    config.check()?;
    let topology = build(&config.network)?;
    if data.train.features() != topology.input_width() {
        return Err(Error::Contract(format!(
            "data has {} features but the network expects {}",
            data.train.features(),
            topology.input_width()
        )));
    }
    if data.train.class_count != topology.output_width() {
        return Err(Error::Contract(format!(
            "data has {} classes but the network outputs {}",
            data.train.class_count,
            topology.output_width()
        )));
    }
    let mut params = init_weights(&topology);
    let mut records = Vec::with_capacity(config.train.epochs);
    let mut timings = Vec::with_capacity(config.train.epochs);

    for epoch in 1..=config.train.epochs {
        let started = Instant::now();
        let record = run_epoch(config, &topology, &mut params, data, epoch)
            .map_err(|e| Error::Epoch {
                epoch,
                source: Box::new(e),
            })?;
        records.push(record);
        timings.push(EpochTiming {
            epoch,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(RunSummary {
        name: config.name.clone(),
        records,
        timings,
        params,
    })
}

fn run_epoch(
    config: &ExperimentConfig,
    topology: &Topology,
    params: &mut Params,
    data: &DataSplit,
    epoch: usize,
) -> Result<MetricsRecord> {
    let record_gradients = config.telemetry.records(epoch);
    let mut profile = ProfileAccumulator::default();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    // Epochs are 1-based in records; the shuffle stream is 0-based.
    for batch in batches(&data.train, &config.train.batch, (epoch - 1) as u64)? {
        let n = batch.inputs.rows();
        let step = train_step(
            topology,
            params,
            &batch.inputs,
            &batch.targets,
            config.train.learning_rate,
        )?;
        loss_sum += step.loss * n as f64;
        correct += count_correct(&step.prediction, &batch.targets);
        seen += n;
        if record_gradients {
            profile.add(&mean_gradient_profile(&step.grads.params));
        }
    }
    let (test_loss, test_accuracy) = evaluate(topology, params, &data.test)?;
    let denom = seen.max(1) as f64;
    Ok(MetricsRecord {
        epoch,
        train_loss: loss_sum / denom,
        train_accuracy: correct as f64 / denom,
        test_loss,
        test_accuracy,
        mean_gradients: record_gradients.then(|| profile.mean()),
    })
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
        .collect()
}

/// Flat CSV of the same records; gradient columns are empty for epochs
/// without telemetry.
pub fn metrics_csv(records: &[MetricsRecord], depth: usize) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy");
    for l in 1..=depth {
        let _ = write!(out, ",layer{l}_signed_mean,layer{l}_abs_mean");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        );
        for l in 1..=depth {
            match r.mean_gradients.as_ref().and_then(|g| g.get(l - 1)) {
                Some(s) => {
                    let _ = write!(out, ",{},{}", s.signed_mean, s.abs_mean);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const PARAMS_SNAPSHOT: &str = "params.json";
pub const TIMING_JSONL: &str = "timing.jsonl";

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the metrics files, config echo and parameter snapshot into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, summary: &RunSummary) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(METRICS_JSONL), metrics_jsonl(&summary.records))?;
    write_file(
        &dir.join(METRICS_CSV),
        metrics_csv(&summary.records, config.network.layers.len()),
    )?;
    write_file(&dir.join(CONFIG_ECHO), config.to_toml_string())?;
    write_file(
        &dir.join(PARAMS_SNAPSHOT),
        serde_json::to_string(&summary.params).expect("params serialize"),
    )?;
    let timing: String = summary
        .timings
        .iter()
        .map(|t| serde_json::to_string(t).expect("timing serializes") + "\n")
        .collect();
    write_file(&dir.join(TIMING_JSONL), timing)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary: RunSummary,
}

/// Loads data, trains to completion and writes all run files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.check()?;
    let data = load_data(config)?;
    run_with_data(config, &data)
}

pub fn run_with_data(config: &ExperimentConfig, data: &DataSplit) -> Result<RunOutcome> {
    let summary = train_run(config, data)?;
    let output_dir = config.resolved_output_dir();
    write_run(&output_dir, config, &summary)?;
    Ok(RunOutcome {
        output_dir,
        summary,
    })
}
