//! Run configuration: a TOML file whose sections mirror the library configs.
//! Every section and key is optional; unknown keys are rejected. Command-line
//! flags are applied on top of the file.
//!
//! ```toml
//! seed = 42
//!
//! [data]
//! episodes = 300
//! noise_std = 0.02
//! history = 20
//! horizon = 30
//! train_stride = 5
//! val_stride = 10
//! train_fraction = 0.8
//!
//! [train]
//! hidden_size = 32
//! epochs = 30
//! batch_size = 32
//! learning_rate = 0.001
//! clip_norm = 5.0
//!
//! [feedforward]
//! epoch_fraction = 0.1
//!
//! [gipps]
//! tau = 1.0
//! b_rear = 4.0
//! b_front = 4.0
//! body_length = 5.0
//!
//! [mpc]
//! horizon = 30
//! w_slack = 10000.0
//!
//! [sim]
//! scenario = "lane-change"
//! predictor = "lstm"
//! ```
//!
//! `train.seed` and `mpc.seed` are always replaced by the top-level seed.

use std::path::Path;

use lanesafe::features::LATERAL_VELOCITY_SPAN;
use lanesafe::lstm::TrainConfig;
use lanesafe::mpc::MpcConfig;
use lanesafe::predictor::PredictorKind;
use lanesafe::safety::GippsParams;
use lanesafe::sim::SCENARIO_NAMES;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Longest horizon the evaluation and training windows support.
pub const MAX_HORIZON: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub episodes: usize,
    pub noise_std: f64,
    pub history: usize,
    pub horizon: usize,
    pub train_stride: usize,
    pub val_stride: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            noise_std: 0.02,
            history: 20,
            horizon: 30,
            train_stride: 5,
            val_stride: 10,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedforwardConfig {
    /// Share of the LSTM epoch budget given to the feedforward baseline.
    pub epoch_fraction: f64,
}

impl Default for FeedforwardConfig {
    fn default() -> Self {
        Self { epoch_fraction: 0.1 }
    }
}

impl FeedforwardConfig {
    pub fn epochs(&self, lstm_epochs: usize) -> usize {
        ((lstm_epochs as f64 * self.epoch_fraction).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scenario: String,
    pub predictor: PredictorKind,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: SCENARIO_NAMES[0].to_string(),
            predictor: PredictorKind::Lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub feedforward: FeedforwardConfig,
    pub gipps: GippsParams,
    pub mpc: MpcConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            feedforward: FeedforwardConfig::default(),
            gipps: GippsParams::default(),
            mpc: MpcConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Seeds every component from the top-level seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.mpc.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        let bad = |m: String| Err(CliError::Validation(m));
        if d.episodes == 0 {
            return bad("data.episodes must be at least 1".into());
        }
        if !(d.noise_std.is_finite() && d.noise_std >= 0.0) {
            return bad(format!("data.noise_std must be >= 0, got {}", d.noise_std));
        }
        if d.history <= LATERAL_VELOCITY_SPAN {
            return bad(format!("data.history must exceed {LATERAL_VELOCITY_SPAN}, got {}", d.history));
        }
        if d.horizon == 0 || d.horizon > MAX_HORIZON {
            return bad(format!("data.horizon must lie in 1..={MAX_HORIZON}, got {}", d.horizon));
        }
        if d.train_stride == 0 || d.val_stride == 0 {
            return bad("data strides must be at least 1".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return bad(format!("data.train_fraction must lie in (0, 1), got {}", d.train_fraction));
        }
        if !(self.feedforward.epoch_fraction > 0.0 && self.feedforward.epoch_fraction <= 1.0) {
            return bad("feedforward.epoch_fraction must lie in (0, 1]".into());
        }
        if !SCENARIO_NAMES.contains(&self.sim.scenario.as_str()) {
            return bad(format!(
                "unknown scenario '{}' (valid: {})",
                self.sim.scenario,
                SCENARIO_NAMES.join(", ")
            ));
        }
        self.train.validate()?;
        self.gipps.validate()?;
        self.mpc.validate()?;
        Ok(())
    }
}
