use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rewarded, PolicyArchitecture, PolicyNetwork};
use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::util::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda3: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda3: 1e-4,
            lr: 1e-3,
            batch_size: 64,
            epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda3.is_nan() || self.lambda3 < 0.0 {
            return Err(Error::InvalidArgument("lambda3 must be >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub validation_losses: Vec<f64>,
}

/// Corrected cross-entropy `(1/n) Σ −w_j r_j log h(A_j|X_j)` without the
/// regularizer.
pub fn validation_loss(net: &PolicyNetwork, ds: &LoggedDataset, weights: &[f64]) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let (records, w) = rewarded(ds, weights);
    if records.is_empty() {
        return Ok(0.0);
    }
    let scaled = records.len() as f64 / ds.len() as f64;
    Ok(net.loss(&records, &w, 0.0)? * scaled)
}

/// Minibatch Adam on the corrected cross-entropy plus `λ3·Σθ²`, keeping the
/// parameters with the lowest validation loss.
///
/// Records with `w·r = 0` carry no gradient, so batches are drawn from the
/// rewarded records and the batch loss is rescaled by `n_rewarded / n`; the
/// objective is unchanged.
pub fn train(
    arch: PolicyArchitecture,
    train_set: &LoggedDataset,
    train_weights: &[f64],
    validation: &LoggedDataset,
    validation_weights: &[f64],
    cfg: &TrainConfig,
) -> Result<(PolicyNetwork, TrainSummary)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if train_weights.len() != train_set.len() || validation_weights.len() != validation.len() {
        return Err(Error::InvalidArgument("weights must align with records".into()));
    }
    if train_set.d() != arch.d || train_set.k() != arch.k {
        return Err(Error::InvalidArgument("architecture does not match the data".into()));
    }
    let mut init_rng = seeded_rng(derive_seed(cfg.seed, "policy-init"));
    let mut shuffle_rng = seeded_rng(derive_seed(cfg.seed, "policy-shuffle"));
    let mut net = PolicyNetwork::xavier(arch, &mut init_rng);
    let (records, weights) = rewarded(train_set, train_weights);
    let scale = records.len() as f64 / train_set.len() as f64;
    let monitor = |net: &PolicyNetwork| -> Result<f64> {
        if validation.is_empty() {
            validation_loss(net, train_set, train_weights)
        } else {
            validation_loss(net, validation, validation_weights)
        }
    };

    let mut best = net.params().to_vec();
    let mut best_loss = monitor(&net)?;
    let mut summary = TrainSummary {
        epochs_run: 0,
        best_epoch: 0,
        best_validation_loss: best_loss,
        validation_losses: Vec::new(),
    };
    let np = net.num_params();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut batch_r = Vec::with_capacity(cfg.batch_size);
    let mut batch_w = Vec::with_capacity(cfg.batch_size);
    let mut params = net.params().to_vec();
    let mut stale = 0;
    let mut last_finite = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        // With no rewarded records only the regularizer acts; one step per epoch.
        let chunks: Vec<&[usize]> = if order.is_empty() {
            vec![&[]]
        } else {
            order.chunks(cfg.batch_size).collect()
        };
        for chunk in chunks {
            batch_r.clear();
            batch_w.clear();
            for &j in chunk {
                batch_r.push(records[j].clone());
                batch_w.push(weights[j] * scale);
            }
            let grad = if batch_r.is_empty() {
                net.params().iter().map(|p| 2.0 * cfg.lambda3 * p).collect()
            } else {
                net.loss_and_gradient(&batch_r, &batch_w, cfg.lambda3)?.1
            };
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for (((p, g), mi), vi) in params.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_epoch: (last_finite > 0).then_some(last_finite),
                });
            }
            net.set_params(&params)?;
        }
        let loss = monitor(&net)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite_epoch: (last_finite > 0).then_some(last_finite),
            });
        }
        last_finite = epoch;
        summary.epochs_run = epoch;
        summary.validation_losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&params);
            summary.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    net.set_params(&best)?;
    summary.best_validation_loss = best_loss;
    Ok((net, summary))
}
