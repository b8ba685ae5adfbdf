//! Lane-change safety stack: recurrent trajectory prediction, cubic
//! lane-change planning, safe-distance risk assessment, predictive control
//! and a deterministic closed-loop highway simulator.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod exec;
pub mod features;
pub mod kinematics;
pub mod lstm;
pub mod matrix;
pub mod mpc;
pub mod model_file;
pub mod optim;
pub mod planner;
pub mod predictor;
pub mod safety;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
pub use exec::Execution;
