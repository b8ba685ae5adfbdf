//! Reference predictors: constant-velocity extrapolation and a direct
//! multi-horizon feedforward network without recurrence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{FeatureWindow, Normalizer, FEATURE_DIM};
use crate::lstm::{TrainConfig, TrainReport};
use crate::matrix::Matrix;
use crate::optim::{finite_difference_check, mean_in_order, strided_indices, GradCheckReport, Parameters};
use crate::predictor::{check_horizon, PredictedPoint, TrajectoryPredictor};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstantVelocityModel;

/// Extrapolates the last observed velocity vector (feature columns 1 and 2).
pub fn predict_constant_velocity(window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>> {
    check_horizon(horizon_steps)?;
    let (row, anchor) = match (window.history.last(), window.track.last()) {
        (Some(r), Some(a)) => (r, a),
        _ => return Err(Error::Empty("constant-velocity prediction needs an observed state".into())),
    };
    if row.len() < 3 {
        return Err(Error::Shape("feature row lacks velocity columns".into()));
    }
    let (vx, vy) = (row[1], row[2]);
    let speed = vx.hypot(vy);
    Ok((1..=horizon_steps)
        .map(|k| {
            let s = k as f64 * window.dt;
            PredictedPoint {
                x: anchor.x + vx * s,
                y: anchor.y + vy * s,
                v: speed,
            }
        })
        .collect())
}

impl TrajectoryPredictor for ConstantVelocityModel {
    fn name(&self) -> &'static str {
        "const"
    }

    fn predict(&self, window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>> {
        predict_constant_velocity(window, horizon_steps)
    }
}

pub const FEEDFORWARD_HIDDEN: usize = 64;
/// Per horizon step: cumulative (Δx, Δy, Δv) from the last observation.
pub const FEEDFORWARD_STEP_OUTPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

impl Parameters for FeedforwardParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.w3.as_slice(),
            &self.b3,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w3.as_mut_slice(),
            &mut self.b3,
        ]
    }
}

impl FeedforwardParams {
    pub fn zeros(input: usize, hidden1: usize, hidden2: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden1, input),
            b1: vec![0.0; hidden1],
            w2: Matrix::zeros(hidden2, hidden1),
            b2: vec![0.0; hidden2],
            w3: Matrix::zeros(output, hidden2),
            b3: vec![0.0; output],
        }
    }

    pub fn init<R: Rng>(input: usize, hidden1: usize, hidden2: usize, output: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden1, hidden2, output);
        for w in [&mut p.w1, &mut p.w2, &mut p.w3] {
            let s = 1.0 / (w.cols() as f64).sqrt();
            for x in w.as_mut_slice() {
                *x = rng.random_range(-s..s);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w3.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.rows()
            && self.w2.cols() == self.w1.rows()
            && self.b2.len() == self.w2.rows()
            && self.w3.cols() == self.w2.rows()
            && self.b3.len() == self.w3.rows();
        if !ok {
            return Err(Error::Shape("inconsistent feedforward layer shapes".into()));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("feedforward parameters".into()));
        }
        Ok(())
    }

    fn layers(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a1 = vec![0.0; self.b1.len()];
        self.w1.affine(x, &self.b1, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let mut a2 = vec![0.0; self.b2.len()];
        self.w2.affine(&a1, &self.b2, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = vec![0.0; self.b3.len()];
        self.w3.affine(&a2, &self.b3, &mut y);
        (a1, a2, y)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.layers(x).2
    }

    /// Mean-squared-error loss of one example and its gradient.
    pub fn loss_grad(&self, x: &[f64], target: &[f64]) -> (f64, FeedforwardParams) {
        let (a1, a2, y) = self.layers(x);
        let n = y.len() as f64;
        let mut loss = 0.0;
        let dy: Vec<f64> = y
            .iter()
            .zip(target)
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) / n
            })
            .collect();
        let mut g = self.zeros_like();
        g.w3.add_outer(&dy, &a2);
        g.b3.copy_from_slice(&dy);
        let mut da2 = vec![0.0; a2.len()];
        self.w3.add_transpose_mul(&dy, &mut da2);
        let dz2: Vec<f64> = da2.iter().zip(&a2).map(|(d, a)| d * (1.0 - a * a)).collect();
        g.w2.add_outer(&dz2, &a1);
        g.b2.copy_from_slice(&dz2);
        let mut da1 = vec![0.0; a1.len()];
        self.w2.add_transpose_mul(&dz2, &mut da1);
        let dz1: Vec<f64> = da1.iter().zip(&a1).map(|(d, a)| d * (1.0 - a * a)).collect();
        g.w1.add_outer(&dz1, x);
        g.b1.copy_from_slice(&dz1);
        (loss / n, g)
    }

    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let y = self.forward(x);
        y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardModel {
    pub params: FeedforwardParams,
    /// Per-feature statistics, applied to every history step.
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub history_len: usize,
    pub horizon: usize,
    pub dt: f64,
}

fn cumulative_targets(sample: &WindowedSample, horizon: usize) -> Vec<f64> {
    let a = sample.window.anchor().expect("window has a track");
    sample.future[..horizon]
        .iter()
        .flat_map(|p| [p.x - a.x, p.y - a.y, p.v - a.v])
        .collect()
}

impl FeedforwardModel {
    pub fn flatten_input(&self, window: &FeatureWindow) -> Vec<f64> {
        window
            .tail(self.history_len)
            .history
            .iter()
            .flat_map(|r| self.input_norm.normalize(r))
            .collect()
    }

    pub fn train(
        samples: &[WindowedSample],
        horizon: usize,
        cfg: &TrainConfig,
    ) -> Result<(FeedforwardModel, TrainReport<FeedforwardParams>)> {
        let first = samples.first().ok_or_else(|| Error::Empty("training samples".into()))?;
        let history_len = first.window.len();
        if horizon == 0 || samples.iter().any(|s| s.future.len() < horizon || s.window.len() != history_len) {
            return Err(Error::Shape("samples must share a history length and cover the horizon".into()));
        }
        if first.window.input_dim() != FEATURE_DIM {
            return Err(Error::Shape("feedforward model expects the trajectory feature layout".into()));
        }
        let input_norm = Normalizer::fit(
            samples.iter().flat_map(|s| s.window.history.iter().map(Vec::as_slice)),
            FEATURE_DIM,
        );
        let targets: Vec<Vec<f64>> = samples.iter().map(|s| cumulative_targets(s, horizon)).collect();
        let out_dim = FEEDFORWARD_STEP_OUTPUTS * horizon;
        let output_norm = Normalizer::fit(targets.iter().map(Vec::as_slice), out_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = FeedforwardModel {
            params: FeedforwardParams::init(
                history_len * FEATURE_DIM,
                FEEDFORWARD_HIDDEN,
                FEEDFORWARD_HIDDEN,
                out_dim,
                &mut rng,
            ),
            input_norm,
            output_norm,
            history_len,
            horizon,
            dt: first.window.dt,
        };
        let xs: Vec<Vec<f64>> = samples.iter().map(|s| model.flatten_input(&s.window)).collect();
        let ys: Vec<Vec<f64>> = targets.iter().map(|t| model.output_norm.normalize(t)).collect();
        let exec = cfg.execution;
        let report = crate::lstm::fit_external(
            model.params.clone(),
            samples.len(),
            cfg,
            |p: &FeedforwardParams, idx: &[usize]| {
                let parts = exec.map(idx, |&i| p.loss_grad(&xs[i], &ys[i]));
                let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / idx.len() as f64;
                let grads: Vec<FeedforwardParams> = parts.into_iter().map(|(_, g)| g).collect();
                (loss, mean_in_order(&grads).expect("non-empty batch"))
            },
            |p: &FeedforwardParams| {
                Execution::map(exec, &(0..xs.len()).collect::<Vec<_>>(), |&i| p.loss(&xs[i], &ys[i]))
                    .iter()
                    .sum::<f64>()
                    / xs.len() as f64
            },
        )?;
        model.params = report.params.clone();
        Ok((model, report))
    }

    /// Gradient check of the trained weights on a few of `samples`.
    pub fn self_test(&self, samples: &[WindowedSample]) -> Result<GradCheckReport> {
        let n = samples.len().min(4);
        if n == 0 || samples[..n].iter().any(|s| s.future.len() < self.horizon) {
            return Err(Error::Empty("self-test needs samples covering the horizon".into()));
        }
        let xs: Vec<Vec<f64>> = samples[..n].iter().map(|s| self.flatten_input(&s.window)).collect();
        let ys: Vec<Vec<f64>> = samples[..n]
            .iter()
            .map(|s| self.output_norm.normalize(&cumulative_targets(s, self.horizon)))
            .collect();
        let loss = |p: &FeedforwardParams| xs.iter().zip(&ys).map(|(x, y)| p.loss(x, y)).sum::<f64>() / n as f64;
        let grads: Vec<FeedforwardParams> = xs.iter().zip(&ys).map(|(x, y)| self.params.loss_grad(x, y).1).collect();
        let analytic = mean_in_order(&grads).expect("non-empty");
        let idx = strided_indices(self.params.num_params(), 400);
        Ok(finite_difference_check(&self.params, &analytic, 1e-5, Some(&idx), loss))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.input_dim() != self.history_len * self.input_norm.dim()
            || self.params.output_dim() != FEEDFORWARD_STEP_OUTPUTS * self.horizon
            || self.output_norm.dim() != self.params.output_dim()
        {
            return Err(Error::Shape("feedforward model dimensions are inconsistent".into()));
        }
        Ok(())
    }
}

/// Single-shot multi-horizon prediction. Predicted vehicles never reverse.
pub fn predict_feedforward(
    model: &FeedforwardModel,
    window: &FeatureWindow,
    horizon_steps: usize,
) -> Result<Vec<PredictedPoint>> {
    check_horizon(horizon_steps)?;
    window.validate()?;
    if horizon_steps > model.horizon {
        return Err(Error::InvalidArgument(format!(
            "model predicts {} steps, {horizon_steps} requested",
            model.horizon
        )));
    }
    if window.len() < model.history_len {
        return Err(Error::InvalidArgument(format!(
            "window has {} steps, model needs {}",
            window.len(),
            model.history_len
        )));
    }
    if window.input_dim() != model.input_norm.dim() {
        return Err(Error::Shape("window feature width does not match the model".into()));
    }
    let anchor = *window.anchor().ok_or_else(|| Error::Empty("window has no track".into()))?;
    let y = model.output_norm.denormalize(&model.params.forward(&model.flatten_input(window)));
    let mut x_prev = anchor.x;
    Ok((0..horizon_steps)
        .map(|k| {
            let d = &y[FEEDFORWARD_STEP_OUTPUTS * k..FEEDFORWARD_STEP_OUTPUTS * (k + 1)];
            let x = (anchor.x + d[0]).max(x_prev);
            x_prev = x;
            PredictedPoint {
                x,
                y: anchor.y + d[1],
                v: (anchor.v + d[2]).max(0.0),
            }
        })
        .collect())
}

impl TrajectoryPredictor for FeedforwardModel {
    fn name(&self) -> &'static str {
        "feedforward"
    }

    fn history_len(&self) -> usize {
        self.history_len
    }

    fn predict(&self, window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>> {
        predict_feedforward(self, window, horizon_steps)
    }
}
