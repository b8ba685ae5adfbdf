//! Trained LSTM predictors: multi-step trajectory regression and the
//! lane-change intention classifier. Both own frozen normalization statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{gradient_check, softmax, SequenceExample, Target};
use super::train::{train, TrainConfig, TrainReport};
use super::{cell_step, forward_seq, readout, LstmParams, LstmState};
use crate::data::{Intention, WindowedSample};
use crate::error::{Error, Result};
use crate::features::{ego_features, FeatureWindow, Normalizer, TrackPoint, EGO_FEATURES, FEATURE_DIM};
use crate::optim::{strided_indices, GradCheckReport, Parameters};
use crate::predictor::{check_horizon, PredictedPoint, TrajectoryPredictor};

/// Readout layout of the trajectory model: per-step (Δx, Δy, Δv).
pub const OUTPUT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub history_len: usize,
    pub dt: f64,
}

fn step_deltas(sample: &WindowedSample) -> Vec<Vec<f64>> {
    let track = &sample.window.track;
    (0..track.len())
        .map(|t| {
            let cur = track[t];
            let next = track.get(t + 1).copied().unwrap_or(sample.future[0]);
            vec![next.x - cur.x, next.y - cur.y, next.v - cur.v]
        })
        .collect()
}

fn fit_input_norm(samples: &[WindowedSample]) -> Normalizer {
    Normalizer::fit(
        samples.iter().flat_map(|s| s.window.history.iter().map(Vec::as_slice)),
        FEATURE_DIM,
    )
}

fn check_samples(samples: &[WindowedSample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::Empty("training samples".into()))?;
    let len = first.window.len();
    for s in samples {
        if s.window.len() != len || s.window.track.len() != len || s.future.is_empty() {
            return Err(Error::Shape("training windows must share one history length and have targets".into()));
        }
        if s.window.input_dim() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "feature rows have {} entries, expected {FEATURE_DIM}",
                s.window.input_dim()
            )));
        }
    }
    Ok(())
}

/// Finite-difference step and tolerance of the gradient self-test run before a
/// trained model is saved.
pub const SELF_TEST_EPS: f64 = 1e-5;
pub const SELF_TEST_TOLERANCE: f64 = 1e-4;
const SELF_TEST_EXAMPLES: usize = 4;
const SELF_TEST_PARAMS: usize = 400;

fn self_test(params: &LstmParams, examples: &[SequenceExample]) -> Result<GradCheckReport> {
    let batch = &examples[..examples.len().min(SELF_TEST_EXAMPLES)];
    let idx = strided_indices(params.num_params(), SELF_TEST_PARAMS);
    gradient_check(params, batch, SELF_TEST_EPS, Some(&idx))
}

impl LstmModel {
    /// Gradient check of the trained weights on a few of `samples`.
    pub fn self_test(&self, samples: &[WindowedSample]) -> Result<GradCheckReport> {
        self_test(&self.params, &self.training_examples(samples))
    }

    pub fn training_examples(&self, samples: &[WindowedSample]) -> Vec<SequenceExample> {
        samples
            .iter()
            .map(|s| SequenceExample {
                inputs: s.window.history.iter().map(|r| self.input_norm.normalize(r)).collect(),
                target: Target::Sequence(step_deltas(s).iter().map(|d| self.output_norm.normalize(d)).collect()),
            })
            .collect()
    }

    /// Fits normalization on `samples`, initializes from `cfg.seed` and trains.
    pub fn train(samples: &[WindowedSample], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport<LstmParams>)> {
        check_samples(samples)?;
        let deltas: Vec<Vec<f64>> = samples.iter().flat_map(step_deltas).collect();
        let output_norm = Normalizer::fit(deltas.iter().map(Vec::as_slice), OUTPUT_DIM);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = LstmModel {
            params: LstmParams::init(cfg.hidden_size, FEATURE_DIM, OUTPUT_DIM, &mut rng),
            input_norm: fit_input_norm(samples),
            output_norm,
            history_len: samples[0].window.len(),
            dt: samples[0].window.dt,
        };
        let examples = model.training_examples(samples);
        let report = train(model.params.clone(), &examples, cfg)?;
        model.params = report.params.clone();
        Ok((model, report))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.input != FEATURE_DIM || self.params.output != OUTPUT_DIM {
            return Err(Error::Shape(format!(
                "trajectory model must map {FEATURE_DIM} features to {OUTPUT_DIM} outputs"
            )));
        }
        if self.input_norm.dim() != FEATURE_DIM || self.output_norm.dim() != OUTPUT_DIM || self.history_len == 0 {
            return Err(Error::Shape("normalizer dimensions do not match the network".into()));
        }
        Ok(())
    }

    fn denormalized_step(&self, h: &[f64], last: &TrackPoint) -> TrackPoint {
        let d = self.output_norm.denormalize(&readout(&self.params, h));
        let v = (last.v + d[2]).max(0.0);
        TrackPoint {
            x: last.x + d[0].max(0.0),
            y: last.y + d[1],
            v,
            a: (v - last.v) / self.dt,
        }
    }

    /// Iterated one-step prediction. Each predicted step is fed back as the
    /// next input's ego features; neighbor features stay at their last
    /// observed values. Predicted vehicles never reverse.
    pub fn predict_trajectory(&self, window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>> {
        check_horizon(horizon_steps)?;
        window.validate()?;
        if window.len() < self.history_len {
            return Err(Error::InvalidArgument(format!(
                "window has {} steps, model needs {}",
                window.len(),
                self.history_len
            )));
        }
        if window.input_dim() != FEATURE_DIM || window.track.len() != window.len() {
            return Err(Error::Shape("window lacks the trajectory feature layout or track".into()));
        }
        let w = window.tail(self.history_len);
        let inputs: Vec<Vec<f64>> = w.history.iter().map(|r| self.input_norm.normalize(r)).collect();
        let (states, _) = forward_seq(&self.params, &inputs, &LstmState::zeros(self.params.hidden))?;
        let mut state = states.last().cloned().expect("non-empty window");
        let neighbors = w.history.last().unwrap()[EGO_FEATURES..].to_vec();
        let mut track = w.track.clone();
        let mut out = Vec::with_capacity(horizon_steps);
        for k in 0..horizon_steps {
            if k > 0 {
                let mut row = ego_features(&track, &w.lanes, w.dt).to_vec();
                row.extend_from_slice(&neighbors);
                state = cell_step(&self.params, &state, &self.input_norm.normalize(&row))?;
            }
            let next = self.denormalized_step(&state.h, track.last().unwrap());
            out.push(PredictedPoint { x: next.x, y: next.y, v: next.v });
            track.push(next);
        }
        Ok(out)
    }
}

impl TrajectoryPredictor for LstmModel {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn history_len(&self) -> usize {
        self.history_len
    }

    fn predict(&self, window: &FeatureWindow, horizon_steps: usize) -> Result<Vec<PredictedPoint>> {
        self.predict_trajectory(window, horizon_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentionDistribution {
    pub p_keep: f64,
    pub p_left: f64,
    pub p_right: f64,
}

impl IntentionDistribution {
    pub fn probabilities(&self) -> [f64; 3] {
        [self.p_keep, self.p_left, self.p_right]
    }

    pub fn argmax(&self) -> Intention {
        let p = self.probabilities();
        let mut best = 0;
        for k in 1..3 {
            if p[k] > p[best] {
                best = k;
            }
        }
        Intention::ALL[best]
    }
}

/// Softmax over the final readout of a three-way head. The window is fed to
/// the network as-is.
pub fn classify_intention(params: &LstmParams, window: &FeatureWindow) -> Result<IntentionDistribution> {
    if params.output != 3 {
        return Err(Error::Shape(format!("intention head needs 3 outputs, got {}", params.output)));
    }
    window.validate()?;
    let (_, outs) = forward_seq(params, &window.history, &LstmState::zeros(params.hidden))?;
    let p = softmax(outs.last().unwrap());
    Ok(IntentionDistribution {
        p_keep: p[0],
        p_left: p[1],
        p_right: p[2],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionModel {
    pub params: LstmParams,
    pub input_norm: Normalizer,
    pub history_len: usize,
}

impl IntentionModel {
    pub fn training_examples(&self, samples: &[WindowedSample]) -> Vec<SequenceExample> {
        samples
            .iter()
            .map(|s| SequenceExample {
                inputs: s.window.history.iter().map(|r| self.input_norm.normalize(r)).collect(),
                target: Target::Class(s.label.index()),
            })
            .collect()
    }

    pub fn train(samples: &[WindowedSample], cfg: &TrainConfig) -> Result<(IntentionModel, TrainReport<LstmParams>)> {
        check_samples(samples)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = IntentionModel {
            params: LstmParams::init(cfg.hidden_size, FEATURE_DIM, 3, &mut rng),
            input_norm: fit_input_norm(samples),
            history_len: samples[0].window.len(),
        };
        let examples = model.training_examples(samples);
        let report = train(model.params.clone(), &examples, cfg)?;
        model.params = report.params.clone();
        Ok((model, report))
    }

    pub fn classify(&self, window: &FeatureWindow) -> Result<IntentionDistribution> {
        if window.len() < self.history_len {
            return Err(Error::InvalidArgument(format!(
                "window has {} steps, model needs {}",
                window.len(),
                self.history_len
            )));
        }
        let mut w = window.tail(self.history_len);
        w.history = w.history.iter().map(|r| self.input_norm.normalize(r)).collect();
        classify_intention(&self.params, &w)
    }

    pub fn self_test(&self, samples: &[WindowedSample]) -> Result<GradCheckReport> {
        self_test(&self.params, &self.training_examples(samples))
    }

    pub fn accuracy(&self, samples: &[WindowedSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("evaluation samples".into()));
        }
        let mut correct = 0usize;
        for s in samples {
            if self.classify(&s.window)?.argmax() == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::LaneGeometry;

    fn window(len: usize, d: usize) -> FeatureWindow {
        FeatureWindow {
            history: vec![vec![0.3; d]; len],
            track: (0..len)
                .map(|k| TrackPoint { x: k as f64 * 2.0, y: 3.5, v: 20.0, a: 0.0 })
                .collect(),
            dt: 0.1,
            lanes: LaneGeometry::default(),
        }
    }

    #[test]
    fn zero_weights_give_uniform_intention() {
        let p = LstmParams::zeros(4, 5, 3);
        let d = classify_intention(&p, &window(6, 5)).unwrap();
        for v in d.probabilities() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logits_pick_keep() {
        let mut p = LstmParams::zeros(2, 5, 3);
        p.b_y = vec![10.0, 0.0, 0.0];
        let d = classify_intention(&p, &window(3, 5)).unwrap();
        assert!(d.p_keep > 0.99);
        assert_eq!(d.argmax(), Intention::Keep);
        assert!((d.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_head_size_rejected() {
        let p = LstmParams::zeros(2, 5, 2);
        assert!(matches!(classify_intention(&p, &window(3, 5)), Err(Error::Shape(_))));
    }

    fn zero_displacement_model(history_len: usize) -> LstmModel {
        // bias chosen so the denormalized readout is exactly zero
        let output_norm = Normalizer {
            mean: vec![2.0, 0.1, 0.0],
            std: vec![0.5, 0.1, 1.0],
        };
        let mut params = LstmParams::zeros(4, FEATURE_DIM, OUTPUT_DIM);
        params.b_y = vec![-4.0, -1.0, 0.0];
        LstmModel {
            params,
            input_norm: Normalizer::identity(FEATURE_DIM),
            output_norm,
            history_len,
            dt: 0.1,
        }
    }

    #[test]
    fn zero_displacement_holds_last_position() {
        let m = zero_displacement_model(5);
        let w = window(8, FEATURE_DIM);
        let pred = m.predict_trajectory(&w, 10).unwrap();
        assert_eq!(pred.len(), 10);
        let last = w.track.last().unwrap();
        for p in pred {
            assert_eq!((p.x, p.y, p.v), (last.x, last.y, last.v));
        }
    }

    #[test]
    fn short_window_rejected() {
        let m = zero_displacement_model(20);
        assert!(m.predict_trajectory(&window(5, FEATURE_DIM), 3).is_err());
        assert!(m.predict_trajectory(&window(20, FEATURE_DIM), 0).is_err());
    }
}
