use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BatchPlan;
use crate::error::{Error, Result};
use crate::topology::NetworkConfig;

/// Environment variable that relocates relative `output_dir`s.
pub const OUTPUT_ROOT_ENV: &str = "SCNET_OUTPUT_ROOT";

/// One experiment, read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
    /// Directory that relative data paths are resolved against (the config
    /// file's directory when loaded from disk).
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: BatchPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Use only the first `train_limit` training samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
    },
    Synth {
        classes: usize,
        per_class: usize,
        dims: usize,
        separation: f64,
        seed: u64,
        /// Held-out samples per class, drawn with `seed + 1`.
        test_per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryConfig {
    #[serde(default)]
    pub record_mean_gradients: bool,
    #[serde(default = "default_interval")]
    pub gradient_record_interval: usize,
}

fn default_interval() -> usize {
    1
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            record_mean_gradients: false,
            gradient_record_interval: 1,
        }
    }
}

impl TelemetryConfig {
    /// Whether mean gradients are recorded for 1-based `epoch`.
    pub fn records(&self, epoch: usize) -> bool {
        self.record_mean_gradients && (epoch - 1).is_multiple_of(self.gradient_record_interval.max(1))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Contract(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| Error::Contract(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides both the initialization seed and the shuffle seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.network.seed = seed;
        self.train.batch.seed = seed;
        self
    }

    /// Field-level checks beyond the network topology.
    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.train.epochs == 0 {
            problems.push("train.epochs must be at least 1".to_string());
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate > 0.0) {
            problems.push(format!(
                "train.learning_rate {} must be positive",
                self.train.learning_rate
            ));
        }
        if self.train.batch.batch_size == 0 {
            problems.push("train.batch.batch_size must be at least 1".to_string());
        }
        if self.telemetry.gradient_record_interval == 0 {
            problems.push("telemetry.gradient_record_interval must be at least 1".to_string());
        }
        if let Err(violations) = crate::topology::validate(&self.network) {
            problems.extend(violations.iter().map(|v| format!("network: {v}")));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "invalid experiment config '{}':\n  - {}",
                self.name,
                problems.join("\n  - ")
            )))
        }
    }

    pub fn resolve_data_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// `output_dir`, placed under `$SCNET_OUTPUT_ROOT` when it is relative
    /// and the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
