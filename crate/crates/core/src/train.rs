//! MSE loss, Adam with step decay, day-based train/test split and the
//! minibatch training loop.
//!
//! Per-window forward/backward passes run in parallel; their gradients are
//! summed in window order, so results do not depend on the thread count.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowDataset;
use crate::error::{Error, Result};
use crate::model::{forward, gradients, Gradients, Mode, ModelConfig, ModelParams};
use crate::MINUTES_PER_DAY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Stop after this many epochs without a relative improvement of
    /// `early_stop_min_delta` in training loss. `None` disables it.
    pub early_stop_patience: Option<usize>,
    pub early_stop_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0007,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            batch_size: 16,
            epochs: 50,
            dropout_rate: 0.35,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_patience: Some(10),
            early_stop_min_delta: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
            ("adam_eps", self.adam_eps),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("batch_size and lr_decay_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean of squared differences over every element.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("mse_loss", format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse_loss on empty arrays".into()));
    }
    let sum: f64 = pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// `learning_rate · decay^⌊epoch / every⌋`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.lr_decay_every) as i32;
    config.learning_rate * config.lr_decay_factor.powi(steps)
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// Bias-corrected Adam update over flat tensors.
pub fn adam_update(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape("adam tensors", state.first.len(), params.len()));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[k].len() {
            return Err(Error::shape("adam tensor size", state.first[k].len(), g.len()));
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("non-finite gradient".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    adam_update(&mut p, &g, state, lr, hyper)
}

/// Window indices partitioned by the day of their target minute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train on windows whose target falls in days `0..train_days`, test on
/// those in `train_days..total_days`.
pub fn split_train_test(dataset: &WindowDataset, train_days: usize, total_days: usize) -> Result<Split> {
    if train_days == 0 || train_days >= total_days {
        return Err(Error::Config(format!(
            "need 0 < train_days < total_days, got {train_days} and {total_days}"
        )));
    }
    let series = dataset.series();
    let end_minute = series.first_minute() + series.len();
    let available = end_minute.div_ceil(MINUTES_PER_DAY);
    if available < total_days {
        return Err(Error::InvalidInput(format!(
            "dataset covers {available} day(s), fewer than the {total_days} requested"
        )));
    }
    let boundary = train_days * MINUTES_PER_DAY;
    let stop = total_days * MINUTES_PER_DAY;
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for i in 0..dataset.len() {
        let t = dataset.target_minute(i);
        if t < boundary {
            split.train.push(i);
        } else if t < stop {
            split.test.push(i);
        }
    }
    if split.test.is_empty() {
        return Err(Error::InvalidInput("test partition empty".into()));
    }
    if split.train.is_empty() {
        return Err(Error::InvalidInput("train partition empty".into()));
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training MSE over the epoch's windows (dropout active).
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,lr,seconds` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:?},{:?},{:.3}\n", e.epoch + 1, e.loss, e.lr, e.seconds));
        }
        out
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub fn train(
    dataset: &WindowDataset,
    train_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    train_with_progress(dataset, train_idx, model, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    dataset: &WindowDataset,
    train_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train_idx.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(&bad) = train_idx.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidInput(format!("training window {bad} out of range")));
    }
    let model = ModelConfig {
        dropout_rate: config.dropout_rate,
        lookback: dataset.lookback(),
        ..*model
    };
    let mut params = ModelParams::init(&model, config.seed)?;
    if dataset.series().feature_count() != model.features {
        return Err(Error::shape("model features", model.features, dataset.series().feature_count()));
    }
    let mut state = AdamState::for_params(&params);
    let hyper = AdamHyper::from(config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x5348_5546]));
    let mut order = train_idx.to_vec();
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, config);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(f64, Gradients)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let s = dataset.sample(i);
                    let seed = mix_seed(&[config.seed, epoch as u64, b as u64, pos as u64]);
                    let (pred, trace) = forward(s.laplacians, s.snapshots, &params, Mode::Train { seed })?;
                    let loss = mse_loss(pred.view(), s.target)?;
                    let g = gradients(s.laplacians, s.snapshots, &params, s.target, trace.as_ref())?;
                    Ok((loss, g))
                })
                .collect();

            let mut total = Gradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                total.add_assign(&g);
            }
            total.scale(1.0 / chunk.len() as f64);
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                    msg: format!("loss {batch_loss} or a gradient is not finite"),
                });
            }
            adam_step(&mut params, &total, &mut state, lr, hyper).map_err(|e| Error::Divergence {
                epoch: epoch + 1,
                batch: b + 1,
                msg: e.to_string(),
            })?;
            loss_sum += batch_loss;
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / order.len() as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}  loss {:.6}  lr {:.2e}  {:.1}s",
            epoch + 1,
            record.loss,
            lr,
            record.seconds
        );
        on_epoch(&record);
        let loss = record.loss;
        history.epochs.push(record);

        if let Some(patience) = config.early_stop_patience {
            if loss < best * (1.0 - config.early_stop_min_delta) {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    history.stopped_early = true;
                    log::info!("training loss plateaued for {patience} epochs; stopping");
                    break;
                }
            }
        }
    }
    Ok((params, history))
}

/// Eval-mode predictions (normalized space) for the given windows.
pub fn predict(dataset: &WindowDataset, idx: &[usize], params: &ModelParams) -> Result<Vec<Array2<f64>>> {
    idx.par_iter()
        .map(|&i| {
            let s = dataset.sample(i);
            forward(s.laplacians, s.snapshots, params, Mode::Eval).map(|(p, _)| p)
        })
        .collect()
}
