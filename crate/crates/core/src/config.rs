//! Experiment configuration.
//!
//! The grammar is TOML with flat sections:
//!
//! ```toml
//! name = "mixture"
//! warmup_size = 30
//! rounds = 20
//! query_size = 10
//! strategies = ["cusal", "least-confident", "random"]
//! seeds = [0, 1, 2]
//! test_fraction = 0.2          # optional
//! balanced_warmup = true       # optional
//! output_dir = "results"       # optional
//!
//! [dataset]
//! kind = "synthetic"           # or "idx" with `images`, `labels`, optional `limit`
//! classes = 3
//! dim = 2
//! n = 3000
//! label_noise = 0.2
//!
//! [model]      # hidden, dropout
//! [train]      # learning_rate, batch_size, epochs, beta1, beta2, epsilon, reinit_each_round
//! [calibration] # p, bandwidth, denominator_floor
//! [ece]        # n_bins
//! [acquisition] # mc_samples, shortlist_factor, tie_digits, ts_holdout
//! [output]     # svg, wallclock
//! ```
//!
//! Unknown keys are rejected; every error carries the line it refers to when
//! one can be found.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::acquisition::{Strategy, DEFAULT_TIE_DIGITS};
use crate::calibration::{CalibrationConfig, EceConfig};
use crate::datasets::CalibratedSynthConfig;
use crate::error::{Error, Result};
use crate::models::TrainConfig;

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Strategy::parse(&name).ok_or_else(|| {
            let known: Vec<String> = Strategy::ALL.iter().map(Strategy::name).collect();
            serde::de::Error::custom(format!("unknown strategy `{name}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(CalibratedSynthConfig),
    Idx(IdxSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    /// Relative paths resolve against the config file's directory.
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Keep only the first `limit` examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// MC-dropout forward passes for BALD.
    pub mc_samples: usize,
    /// Two-stage shortlist size as a multiple of the query size.
    pub shortlist_factor: usize,
    /// Significant digits for calibration-tie detection.
    pub tie_digits: u32,
    /// Labeled fraction held out for temperature fitting.
    pub ts_holdout: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10,
            shortlist_factor: 10,
            tie_digits: DEFAULT_TIE_DIGITS,
            ts_holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub svg: bool,
    /// Record wall-clock seconds in the CSV. Off by default so outputs are
    /// byte-identical across runs.
    pub wallclock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            svg: true,
            wallclock: false,
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub warmup_size: usize,
    pub rounds: usize,
    pub query_size: usize,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub balanced_warmup: bool,
    /// Long-tail subsampling applied after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_factor: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub ece: EceConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// 1-based line of the first `key = ...` assignment inside `[section]`
/// (top level when `section` is empty).
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section && key.is_empty() {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = trimmed.split_once('=') {
                if lhs.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn config_error(text: &str, section: &str, key: &str, message: impl Into<String>) -> Error {
    let line = locate_key(text, section, key).or_else(|| locate_key(text, section, ""));
    Error::Config {
        line,
        message: message.into(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates a TOML config.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate_against(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_against("")
    }

    fn validate_against(&self, text: &str) -> Result<()> {
        let err = |section: &str, key: &str, msg: &str| Err(config_error(text, section, key, msg));
        if self.query_size == 0 {
            return err("", "query_size", "query_size must be >= 1");
        }
        if self.strategies.is_empty() {
            return err("", "strategies", "strategies must not be empty");
        }
        if self.seeds.is_empty() {
            return err("", "seeds", "seeds must not be empty");
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return err("", "strategies", "strategies must be distinct");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return err("", "test_fraction", "test_fraction must lie in [0, 1)");
        }
        if let Some(f) = self.imbalance_factor {
            if !(f >= 1.0) || !f.is_finite() {
                return err("", "imbalance_factor", "imbalance_factor must be >= 1");
            }
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if let Err(Error::InvalidConfig(msg)) = s.validate() {
                return err("dataset", "", &msg);
            }
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return err("model", "hidden", "hidden layer widths must be >= 1");
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return err("model", "dropout", "dropout must lie in [0, 1)");
        }
        if self.strategies.contains(&Strategy::Bald) && self.model.dropout == 0.0 {
            let line = locate_key(text, "model", "dropout").or_else(|| locate_key(text, "", "strategies"));
            return Err(Error::Config {
                line,
                message: "strategy `bald` needs model.dropout > 0".into(),
            });
        }
        if self.acquisition.mc_samples < 2 {
            return err("acquisition", "mc_samples", "mc_samples must be >= 2");
        }
        if self.acquisition.shortlist_factor == 0 {
            return err("acquisition", "shortlist_factor", "shortlist_factor must be >= 1");
        }
        if !(1..=17).contains(&self.acquisition.tie_digits) {
            return err("acquisition", "tie_digits", "tie_digits must lie in 1..=17");
        }
        if !(self.acquisition.ts_holdout > 0.0 && self.acquisition.ts_holdout < 1.0) {
            return err("acquisition", "ts_holdout", "ts_holdout must lie in (0, 1)");
        }
        for (section, result) in [
            ("train", self.train.validate()),
            ("calibration", self.calibration.validate()),
            ("ece", self.ece.validate()),
        ] {
            if let Err(e) = result {
                let msg = e.to_string();
                // Messages name the offending key as `section.key`.
                let key = msg
                    .split_whitespace()
                    .find_map(|w| w.strip_prefix(&format!("{section}.")))
                    .unwrap_or("")
                    .to_string();
                return err(section, &key, &msg);
            }
        }
        Ok(())
    }
}
