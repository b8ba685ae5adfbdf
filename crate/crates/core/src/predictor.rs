use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWindow;

/// One predicted future sample in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedPoint {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

/// Common interface of every trajectory predictor, so the controller does not
/// care which one it is fed.
pub trait TrajectoryPredictor: Send + Sync {
    fn name(&self) -> &'static str;

    /// Minimum number of history steps the predictor needs.
    fn history_len(&self) -> usize {
        1
    }

    fn predict(&self, window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Lstm,
    Const,
    Feedforward,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [PredictorKind::Lstm, PredictorKind::Const, PredictorKind::Feedforward];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Lstm => "lstm",
            PredictorKind::Const => "const",
            PredictorKind::Feedforward => "feedforward",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(PredictorKind::Lstm),
            "const" | "constant-velocity" => Ok(PredictorKind::Const),
            "feedforward" | "ff" => Ok(PredictorKind::Feedforward),
            other => Err(Error::InvalidArgument(format!(
                "unknown predictor '{other}' (expected lstm, const, feedforward)"
            ))),
        }
    }
}

pub(crate) fn check_horizon(horizon_steps: usize) -> Result<()> {
    if horizon_steps == 0 {
        Err(Error::InvalidArgument("horizon must be at least one step".into()))
    } else {
        Ok(())
    }
}
