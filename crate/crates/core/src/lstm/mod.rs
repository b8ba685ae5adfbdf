//! LSTM sequence model written from scratch in double precision.
//!
//! One step with `z = [h_prev, x]`:
//!
//! ```text
//! f = σ(W_f·z + b_f)        forget gate
//! i = σ(W_i·z + b_i)        input gate
//! a = tanh(W_c·z + b_c)     candidate cell state
//! c = f ⊙ c_prev + i ⊙ a
//! o = σ(W_o·z + b_o)        output gate
//! h = o ⊙ tanh(c)
//! y = W_y·h + b_y           affine readout
//! ```

mod grad;
mod model;
mod train;

pub use grad::{batch_loss, gradient_check, loss_and_gradients, loss_and_gradients_with, SequenceExample, Target};
pub use crate::optim::GradCheckReport;
pub use model::{classify_intention, IntentionDistribution, IntentionModel, LstmModel, OUTPUT_DIM, SELF_TEST_EPS, SELF_TEST_TOLERANCE};
pub use train::{train, LossRecord, TrainConfig, TrainReport};
pub(crate) use train::fit as fit_external;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::features::FeatureWindow;
use crate::matrix::{sigmoid, Matrix};
use crate::optim::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden: usize,
    pub input: usize,
    pub output: usize,
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    pub w_y: Matrix,
    pub b_y: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize, output: usize) -> Self {
        let gate = || Matrix::zeros(hidden, hidden + input);
        Self {
            hidden,
            input,
            output,
            w_f: gate(),
            w_i: gate(),
            w_c: gate(),
            w_o: gate(),
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            w_y: Matrix::zeros(output, hidden),
            b_y: vec![0.0; output],
        }
    }

    /// Gate weights uniform in ±1/√(H+D), readout in ±1/√H, forget bias 1.
    pub fn init<R: Rng>(hidden: usize, input: usize, output: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, input, output);
        let gate_scale = 1.0 / ((hidden + input) as f64).sqrt();
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            for x in w.as_mut_slice() {
                *x = rng.random_range(-gate_scale..gate_scale);
            }
        }
        let out_scale = 1.0 / (hidden as f64).sqrt();
        for x in p.w_y.as_mut_slice() {
            *x = rng.random_range(-out_scale..out_scale);
        }
        p.b_f.fill(1.0);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d, o) = (self.hidden, self.input, self.output);
        if h == 0 || d == 0 || o == 0 {
            return Err(Error::Shape(format!("dimensions must be positive, got H={h} D={d} O={o}")));
        }
        for (name, w) in [("w_f", &self.w_f), ("w_i", &self.w_i), ("w_c", &self.w_c), ("w_o", &self.w_o)] {
            if w.rows() != h || w.cols() != h + d {
                return Err(Error::Shape(format!("{name} is {}x{}, expected {h}x{}", w.rows(), w.cols(), h + d)));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            if b.len() != h {
                return Err(Error::Shape(format!("{name} has length {}, expected {h}", b.len())));
            }
        }
        if self.w_y.rows() != o || self.w_y.cols() != h || self.b_y.len() != o {
            return Err(Error::Shape(format!("readout shape does not match H={h} O={o}")));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("LSTM parameters".into()));
        }
        Ok(())
    }

    pub(crate) fn gates(&self) -> [(&Matrix, &Vec<f64>); 4] {
        [
            (&self.w_f, &self.b_f),
            (&self.w_i, &self.b_i),
            (&self.w_c, &self.b_c),
            (&self.w_o, &self.b_o),
        ]
    }
}

impl Parameters for LstmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_f.as_slice(),
            self.w_i.as_slice(),
            self.w_c.as_slice(),
            self.w_o.as_slice(),
            &self.b_f,
            &self.b_i,
            &self.b_c,
            &self.b_o,
            self.w_y.as_slice(),
            &self.b_y,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_f.as_mut_slice(),
            self.w_i.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.w_o.as_mut_slice(),
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
            self.w_y.as_mut_slice(),
            &mut self.b_y,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub a: Vec<f64>,
    pub o: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(crate) fn step_with_cache(params: &LstmParams, prev: &LstmState, x: &[f64]) -> (LstmState, StepCache) {
    let h = params.hidden;
    let mut z = Vec::with_capacity(h + params.input);
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x);
    let mut pre = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for ((w, b), out) in params.gates().into_iter().zip(pre.iter_mut()) {
        w.affine(&z, b, out);
    }
    let [mut f, mut i, mut a, mut o] = pre;
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    a.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..h).map(|k| f[k] * prev.c[k] + i[k] * a[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let cache = StepCache {
        z,
        f,
        i,
        a,
        o,
        c_prev: prev.c.clone(),
        tanh_c,
    };
    (LstmState { h: h_new, c }, cache)
}

fn check_step_inputs(params: &LstmParams, prev: &LstmState, x: &[f64]) -> Result<()> {
    if x.len() != params.input {
        return Err(Error::Shape(format!("input has length {}, expected {}", x.len(), params.input)));
    }
    if prev.h.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(Error::Shape(format!(
            "state has lengths {}/{}, expected {}",
            prev.h.len(),
            prev.c.len(),
            params.hidden
        )));
    }
    ensure_finite(x, "LSTM input")?;
    ensure_finite(&prev.h, "hidden state")?;
    ensure_finite(&prev.c, "cell state")
}

pub fn cell_step(params: &LstmParams, prev: &LstmState, x: &[f64]) -> Result<LstmState> {
    check_step_inputs(params, prev, x)?;
    Ok(step_with_cache(params, prev, x).0)
}

pub fn readout(params: &LstmParams, h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; params.output];
    params.w_y.affine(h, &params.b_y, &mut y);
    y
}

/// Runs the cell over `inputs` from `init`, returning every state and readout.
pub fn forward_seq(
    params: &LstmParams,
    inputs: &[Vec<f64>],
    init: &LstmState,
) -> Result<(Vec<LstmState>, Vec<Vec<f64>>)> {
    if inputs.is_empty() {
        return Err(Error::Empty("input sequence".into()));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut state = init.clone();
    for x in inputs {
        state = cell_step(params, &state, x)?;
        outputs.push(readout(params, &state.h));
        states.push(state.clone());
    }
    Ok((states, outputs))
}

pub fn forward(
    params: &LstmParams,
    window: &FeatureWindow,
    init: &LstmState,
) -> Result<(Vec<LstmState>, Vec<Vec<f64>>)> {
    window.validate()?;
    forward_seq(params, &window.history, init)
}
