//! Experiment configuration: a TOML file whose keys mirror the training
//! surface, overridable field-by-field from CLI flags. The effective
//! (post-override) configuration is echoed into the output directory so
//! every run is self-describing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use preflab_core::trainer::{DegenerationThresholds, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// dpo | posterior_prob | likelihood
    #[serde(default = "default_objective")]
    pub objective: String,
    /// One entry per sweep run.
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
    /// self | uniform | path to a policy checkpoint. Absent defaults to
    /// `self` for dpo; posterior_prob forbids it.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub degeneration: DegenerationSection,
}

fn default_objective() -> String {
    "dpo".to_string()
}

fn default_beta() -> Vec<f64> {
    vec![0.1]
}

fn default_valid_fraction() -> f64 {
    0.25
}

fn default_output_dir() -> String {
    "runs".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    /// 0 selects the automatic interval.
    pub checkpoint_interval: usize,
    pub adaptive: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            base_lr: 0.5,
            warmup_fraction: 0.1,
            checkpoint_interval: 0,
            adaptive: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// Markov window length; absent defaults to max_len - 1 (full
    /// conditioning at short horizons).
    pub context_order: Option<usize>,
    /// uniform | gaussian
    pub init: String,
    pub sigma: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { context_order: None, init: "uniform".to_string(), sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DegenerationSection {
    pub entropy_floor: f64,
    pub truncation_ceiling: f64,
    pub repetition_ceiling: f64,
    pub samples_per_prompt: usize,
}

impl Default for DegenerationSection {
    fn default() -> Self {
        let d = DegenerationThresholds::default();
        Self {
            entropy_floor: d.entropy_floor,
            truncation_ceiling: d.truncation_ceiling,
            repetition_ceiling: d.repetition_ceiling,
            samples_per_prompt: d.samples_per_prompt,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: default_objective(),
            beta: default_beta(),
            reference: None,
            dataset: None,
            valid_fraction: default_valid_fraction(),
            output_dir: default_output_dir(),
            seed: 0,
            train: TrainSection::default(),
            policy: PolicySection::default(),
            degeneration: DegenerationSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))
    }

    /// The effective configuration as TOML, for echoing into the output
    /// directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            warmup_fraction: self.train.warmup_fraction,
            checkpoint_interval: if self.train.checkpoint_interval == 0 {
                None
            } else {
                Some(self.train.checkpoint_interval)
            },
            seed: self.seed,
            adaptive: self.train.adaptive,
            degeneration: DegenerationThresholds {
                entropy_floor: self.degeneration.entropy_floor,
                truncation_ceiling: self.degeneration.truncation_ceiling,
                repetition_ceiling: self.degeneration.repetition_ceiling,
                samples_per_prompt: self.degeneration.samples_per_prompt,
            },
        }
    }
}

/// Parses a `--beta` flag value: a comma-separated list of positive reals.
pub fn parse_beta_list(raw: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for piece in raw.split(',') {
        let value: f64 = piece
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("bad beta value `{piece}`")))?;
        if value <= 0.0 || !value.is_finite() {
            return Err(CliError::config(format!("beta must be positive, got {value}")));
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err(CliError::config("empty beta list"));
    }
    Ok(out)
}
