use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::run::{create_dir, load_data, train_run, write_file, write_run, DataSplit, RunSummary};
use crate::error::{Error, Result};

pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    ScWeight,
    BatchSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::ScWeight => "sc_weight",
            SweepParam::BatchSize => "batch_size",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sc_weight" | "sc-weight" => Ok(SweepParam::ScWeight),
            "batch_size" | "batch-size" => Ok(SweepParam::BatchSize),
            other => Err(Error::Contract(format!(
                "unknown sweep parameter '{other}' (expected sc_weight or batch_size)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// The config for one sweep value, writing into `dir`.
pub fn sweep_variant(base: &ExperimentConfig, param: SweepParam, value: f64, dir: PathBuf) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::ScWeight => {
            if cfg.network.short_circuits.is_empty() {
                return Err(Error::Contract(
                    "sc_weight sweep needs a config with short circuits".into(),
                ));
            }
            for sc in &mut cfg.network.short_circuits {
                sc.weight = value;
            }
        }
        SweepParam::BatchSize => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Contract(format!(
                    "batch size {value} must be a positive integer"
                )));
            }
            cfg.train.batch.batch_size = value as usize;
        }
    }
    cfg.name = format!("{}-{}-{}", base.name, param.name(), value);
    cfg.output_dir = dir;
    Ok(cfg)
}

/// One run per value (shared seed), plus `summary.csv` keyed by value.
///
/// With `parallel`, runs execute on separate threads; each writes only to its
/// own subdirectory.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
    parallel: bool,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Contract("sweep needs at least one value".into()));
    }
    base.check()?;
    let variants = values
        .iter()
        .map(|&v| {
            let dir = out_dir.join(format!("{}-{}", param.name(), v));
            sweep_variant(base, param, v, dir).map(|cfg| (v, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    for (_, cfg) in &variants {
        cfg.check()?;
    }
    let data = load_data(base)?;
    let run_one = |(value, cfg): &(f64, ExperimentConfig), data: &DataSplit| -> Result<SweepPoint> {
        let summary = train_run(cfg, data)?;
        write_run(&cfg.output_dir, cfg, &summary)?;
        Ok(SweepPoint {
            value: *value,
            dir: cfg.output_dir.clone(),
            summary,
        })
    };
    let points: Vec<SweepPoint> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = variants
                .iter()
                .map(|v| scope.spawn(|| run_one(v, &data)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        variants.iter().map(|v| run_one(v, &data)).collect::<Result<Vec<_>>>()?
    };

    create_dir(out_dir)?;
    write_file(&out_dir.join(SUMMARY_CSV), summary_csv(param, &points))?;
    Ok(points)
}

fn summary_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = format!(
        "{},final_train_loss,final_train_accuracy,final_test_loss,final_test_accuracy\n",
        param.name()
    );
    for p in points {
        let r = p.summary.last();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.value, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        );
    }
    out
}
