use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{check_batch, unchecked_batch_loss, unchecked_loss_and_gradients, SequenceExample};
use super::LstmParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::{clip_global_norm, Adam, AdamConfig, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            seed: 42,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("hidden size and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid clip norm {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    /// Mean mini-batch loss during the epoch; epoch 0 is the full-dataset loss
    /// before the first update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<P> {
    pub params: P,
    pub history: Vec<LossRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mini-batch Adam loop shared by every model in the crate.
///
/// `loss_grad` returns the mean loss and gradient over the examples at the
/// given indices; `full_loss` evaluates the whole dataset.
pub(crate) fn fit<P, G, L>(
    mut params: P,
    n_examples: usize,
    cfg: &TrainConfig,
    loss_grad: G,
    full_loss: L,
) -> Result<TrainReport<P>>
where
    P: Parameters,
    G: Fn(&P, &[usize]) -> (f64, P),
    L: Fn(&P) -> f64,
{
    cfg.validate()?;
    if n_examples == 0 {
        return Err(Error::Empty("training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let initial_loss = full_loss(&params);
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0 });
    }
    let mut history = vec![LossRecord {
        epoch: 0,
        loss: initial_loss,
    }];
    let mut order: Vec<usize> = (0..n_examples).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) = loss_grad(&params, idx);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut params, &grads);
            sum += loss;
            batches += 1;
        }
        history.push(LossRecord {
            epoch,
            loss: sum / batches as f64,
        });
    }
    let final_loss = full_loss(&params);
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            batch: 0,
        });
    }
    Ok(TrainReport {
        params,
        history,
        initial_loss,
        final_loss,
    })
}

pub fn train(params: LstmParams, dataset: &[SequenceExample], cfg: &TrainConfig) -> Result<TrainReport<LstmParams>> {
    check_batch(&params, dataset)?;
    let exec = cfg.execution;
    let all: Vec<&SequenceExample> = dataset.iter().collect();
    fit(
        params,
        dataset.len(),
        cfg,
        |p, idx| {
            let batch: Vec<&SequenceExample> = idx.iter().map(|&i| &dataset[i]).collect();
            unchecked_loss_and_gradients(p, &batch, exec)
        },
        |p| unchecked_batch_loss(p, &all, exec),
    )
}
