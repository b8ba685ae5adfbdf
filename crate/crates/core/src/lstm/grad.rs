//! Losses and backpropagation through time.

use serde::{Deserialize, Serialize};

use super::{readout, step_with_cache, LstmParams, LstmState, StepCache};
use crate::error::{ensure_finite, Error, Result};
use crate::exec::Execution;
use crate::optim::{finite_difference_check, mean_in_order, GradCheckReport, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Regression target for every step's readout (mean squared error).
    Sequence(Vec<Vec<f64>>),
    /// Class index for the final step's readout (softmax cross-entropy).
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceExample {
    pub inputs: Vec<Vec<f64>>,
    pub target: Target,
}

fn check_example(params: &LstmParams, ex: &SequenceExample) -> Result<()> {
    if ex.inputs.is_empty() {
        return Err(Error::Empty("example has no steps".into()));
    }
    for x in &ex.inputs {
        if x.len() != params.input {
            return Err(Error::Shape(format!("input length {} vs D={}", x.len(), params.input)));
        }
        ensure_finite(x, "example input")?;
    }
    match &ex.target {
        Target::Sequence(t) => {
            if t.len() != ex.inputs.len() {
                return Err(Error::Shape(format!("{} targets for {} steps", t.len(), ex.inputs.len())));
            }
            if let Some(bad) = t.iter().find(|row| row.len() != params.output) {
                return Err(Error::Shape(format!("target row length {} vs O={}", bad.len(), params.output)));
            }
        }
        Target::Class(c) => {
            if *c >= params.output {
                return Err(Error::Shape(format!("class {c} out of range for O={}", params.output)));
            }
        }
    }
    Ok(())
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss of one example and the gradient of that loss.
fn example_loss_grad(params: &LstmParams, ex: &SequenceExample) -> (f64, LstmParams) {
    let h = params.hidden;
    let t_len = ex.inputs.len();
    let mut state = LstmState::zeros(h);
    let mut caches: Vec<StepCache> = Vec::with_capacity(t_len);
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut outputs = Vec::with_capacity(t_len);
    for x in &ex.inputs {
        let (next, cache) = step_with_cache(params, &state, x);
        outputs.push(readout(params, &next.h));
        hs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }

    let mut d_out = vec![vec![0.0; params.output]; t_len];
    let loss = match &ex.target {
        Target::Sequence(targets) => {
            let scale = 1.0 / (t_len * params.output) as f64;
            let mut loss = 0.0;
            for ((y, tgt), dy) in outputs.iter().zip(targets).zip(d_out.iter_mut()) {
                for k in 0..params.output {
                    let e = y[k] - tgt[k];
                    loss += e * e;
                    dy[k] = 2.0 * e * scale;
                }
            }
            loss * scale
        }
        Target::Class(c) => {
            let p = softmax(&outputs[t_len - 1]);
            let dy = &mut d_out[t_len - 1];
            for k in 0..params.output {
                dy[k] = p[k] - if k == *c { 1.0 } else { 0.0 };
            }
            -p[*c].max(f64::MIN_POSITIVE).ln()
        }
    };

    let mut g = params.zeros_like();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; h + params.input];
    let mut d_pre = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for t in (0..t_len).rev() {
        let cache = &caches[t];
        let dy = &d_out[t];
        g.w_y.add_outer(dy, &hs[t]);
        for (b, d) in g.b_y.iter_mut().zip(dy) {
            *b += d;
        }
        let mut dh = dh_next.clone();
        params.w_y.add_transpose_mul(dy, &mut dh);
        for k in 0..h {
            let (f, i, a, o, tc) = (cache.f[k], cache.i[k], cache.a[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            let d_f = dc * cache.c_prev[k];
            let d_i = dc * a;
            let d_a = dc * i;
            dc_next[k] = dc * f;
            d_pre[0][k] = d_f * f * (1.0 - f);
            d_pre[1][k] = d_i * i * (1.0 - i);
            d_pre[2][k] = d_a * (1.0 - a * a);
            d_pre[3][k] = d_o * o * (1.0 - o);
        }
        dz.fill(0.0);
        {
            let grads = [
                (&mut g.w_f, &mut g.b_f),
                (&mut g.w_i, &mut g.b_i),
                (&mut g.w_c, &mut g.b_c),
                (&mut g.w_o, &mut g.b_o),
            ];
            for ((gw, gb), dp) in grads.into_iter().zip(&d_pre) {
                gw.add_outer(dp, &cache.z);
                for (b, d) in gb.iter_mut().zip(dp) {
                    *b += d;
                }
            }
        }
        for ((w, _), dp) in params.gates().into_iter().zip(&d_pre) {
            w.add_transpose_mul(dp, &mut dz);
        }
        dh_next.copy_from_slice(&dz[..h]);
    }
    (loss, g)
}

fn example_loss(params: &LstmParams, ex: &SequenceExample) -> f64 {
    let mut state = LstmState::zeros(params.hidden);
    let mut outputs = Vec::with_capacity(ex.inputs.len());
    for x in &ex.inputs {
        state = step_with_cache(params, &state, x).0;
        outputs.push(readout(params, &state.h));
    }
    match &ex.target {
        Target::Sequence(targets) => {
            let n = (ex.inputs.len() * params.output) as f64;
            outputs
                .iter()
                .zip(targets)
                .flat_map(|(y, t)| y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
                .sum::<f64>()
                / n
        }
        Target::Class(c) => -softmax(outputs.last().unwrap())[*c].max(f64::MIN_POSITIVE).ln(),
    }
}

pub(crate) fn check_batch(params: &LstmParams, batch: &[SequenceExample]) -> Result<()> {
    params.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    batch.iter().try_for_each(|ex| check_example(params, ex))
}

/// Mean per-example loss over `batch` and its gradient.
pub fn loss_and_gradients(params: &LstmParams, batch: &[SequenceExample]) -> Result<(f64, LstmParams)> {
    loss_and_gradients_with(params, batch, Execution::default())
}

pub fn loss_and_gradients_with(
    params: &LstmParams,
    batch: &[SequenceExample],
    exec: Execution,
) -> Result<(f64, LstmParams)> {
    check_batch(params, batch)?;
    let refs: Vec<&SequenceExample> = batch.iter().collect();
    Ok(unchecked_loss_and_gradients(params, &refs, exec))
}

pub(crate) fn unchecked_loss_and_gradients(
    params: &LstmParams,
    batch: &[&SequenceExample],
    exec: Execution,
) -> (f64, LstmParams) {
    let parts = exec.map(batch, |ex| example_loss_grad(params, ex));
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
    let grads: Vec<LstmParams> = parts.into_iter().map(|(_, g)| g).collect();
    (loss, mean_in_order(&grads).expect("non-empty batch"))
}

pub fn batch_loss(params: &LstmParams, batch: &[SequenceExample]) -> Result<f64> {
    check_batch(params, batch)?;
    let refs: Vec<&SequenceExample> = batch.iter().collect();
    Ok(unchecked_batch_loss(params, &refs, Execution::default()))
}

pub(crate) fn unchecked_batch_loss(params: &LstmParams, batch: &[&SequenceExample], exec: Execution) -> f64 {
    exec.map(batch, |ex| example_loss(params, ex)).iter().sum::<f64>() / batch.len() as f64
}

/// Compares analytic gradients with central finite differences at the given
/// flat parameter indices (all parameters when `indices` is `None`).
pub fn gradient_check(
    params: &LstmParams,
    batch: &[SequenceExample],
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(params, batch)?;
    let refs: Vec<&SequenceExample> = batch.iter().collect();
    Ok(finite_difference_check(params, &grads, eps, indices, |p| {
        unchecked_batch_loss(p, &refs, Execution::Sequential)
    }))
}
