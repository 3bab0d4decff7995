//! Optimization loop and cross-validation harness.

pub mod dataset;
pub mod experiment;
pub mod schedule;
pub mod split;

pub use dataset::{DataNeeds, Dataset, SampleMode};
pub use experiment::{
    run_experiment, Combination, ExperimentConfig, MatrixRow, TrialResult,
};
pub use schedule::lr_at_step;
pub use split::{split_folds, FoldSplit};

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::compute_auc;
use crate::model::{ExperimentModel, ModelConfig};
use crate::nn::adamw::AdamW;
use crate::nn::ops::bce_with_logits;
use crate::nn::{load_params, save_params, zero_grads};
use crate::rng::{stream, RngSeed};
use crate::scalar::Scalar;

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Off by default; the training data's class imbalance is left as-is.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 32,
            epochs: 30,
            warmup_epochs: 10,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("lr, batch size and epochs must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config("warmup epochs exceed total epochs".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub lr: f64,
}

pub struct TrainOutcome<S> {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// model restored to the best-validation-AUC weights
    pub model: ExperimentModel<S>,
    /// validation scores of the restored model (used for the threshold)
    pub val_scores: Vec<f64>,
    pub val_labels: Vec<bool>,
}

/// Score a list of subjects in eval mode.
pub fn score_subjects<S: Scalar>(
    model: &ExperimentModel<S>,
    data: &Dataset<S>,
    idxs: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(idxs.len());
    for chunk in idxs.chunks(batch_size) {
        let (input, _) = data.batch(chunk, SampleMode::Eval)?;
        scores.extend(model.predict(&input)?);
    }
    Ok(scores)
}

/// Train one trial of the cross-validation scheme.
///
/// Runs the configured number of epochs with per-step warmup + cosine decay,
/// computes validation AUC after each epoch, and restores the weights of the
/// best validation epoch before returning.
pub fn train_model<S: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset<S>,
    split: &FoldSplit,
    trial: usize,
    seed: RngSeed,
) -> Result<TrainOutcome<S>> {
    train_cfg.validate()?;
    let train_ids = split.train_subjects(trial)?;
    let val_ids = split.validation_subjects(trial)?;
    let train_idx = data.indices_of(&train_ids)?;
    let val_idx = data.indices_of(val_ids)?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Split("empty train or validation fold".into()));
    }

    // per-trial streams: weight init and augmentation diverge across trials
    let trial_seed = RngSeed(seed.0 ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(trial as u64 + 1)));
    let mut model = ExperimentModel::<S>::new(model_cfg.clone(), trial_seed)?;
    let mut opt = AdamW::new(train_cfg.beta1, train_cfg.beta2, train_cfg.weight_decay);

    let spe = train_idx.len().div_ceil(train_cfg.batch_size);
    let total_steps = spe * train_cfg.epochs;
    let warmup_steps = spe * train_cfg.warmup_epochs;
    let val_labels = data.labels_of(&val_idx);

    let mut logs = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, std::collections::HashMap<String, ndarray::ArrayD<S>>, Vec<f64>)> =
        None;
    let mut step = 0usize;

    for epoch in 0..train_cfg.epochs {
        let mut order = train_idx.clone();
        let mut shuffle_rng = stream(trial_seed, "shuffle", &[], &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut epoch_lr = 0.0f64;
        let profile = std::env::var("AUSCULTA_PROFILE").is_ok();
        let (mut t_batch, mut t_fwd, mut t_bwd, mut t_opt) = (0.0f64, 0.0, 0.0, 0.0);
        for chunk in order.chunks(train_cfg.batch_size) {
            let t0 = std::time::Instant::now();
            let (input, targets) =
                data.batch(chunk, SampleMode::Train { epoch: epoch as u64, seed: trial_seed })?;
            t_batch += t0.elapsed().as_secs_f64();
            zero_grads(&mut model);
            let t0 = std::time::Instant::now();
            let (logits, cache) = model.forward(&input)?;
            t_fwd += t0.elapsed().as_secs_f64();
            let (loss, dlogits) = weighted_bce(&logits, &targets, train_cfg.class_weighting);
            let loss_f = loss.to_f();
            if !loss_f.is_finite() {
                return Err(Error::Diverged { epoch, loss: loss_f });
            }
            loss_sum += loss_f * chunk.len() as f64;
            let t0 = std::time::Instant::now();
            model.backward(&cache, &dlogits)?;
            t_bwd += t0.elapsed().as_secs_f64();
            let t0 = std::time::Instant::now();
            epoch_lr = lr_at_step(step, total_steps, warmup_steps, train_cfg.base_lr);
            opt.step(&mut model, epoch_lr);
            t_opt += t0.elapsed().as_secs_f64();
            step += 1;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let t0 = std::time::Instant::now();
        let val_scores = score_subjects(&model, data, &val_idx, train_cfg.batch_size)?;
        if profile {
            eprintln!(
                "epoch {epoch}: batch {t_batch:.2}s fwd {t_fwd:.2}s bwd {t_bwd:.2}s opt {t_opt:.2}s val {:.2}s",
                t0.elapsed().as_secs_f64()
            );
        }
        let val_auc = compute_auc(&val_scores, &val_labels)?;
        logs.push(EpochLog { epoch, train_loss, val_auc, lr: epoch_lr });

        let is_better = best.as_ref().map_or(true, |(_, b, _, _)| val_auc > *b);
        if is_better {
            best = Some((epoch, val_auc, save_params(&mut model), val_scores));
        }
    }

    let (best_epoch, best_val_auc, best_params, val_scores) = best.unwrap();
    load_params(&mut model, &best_params)?;
    Ok(TrainOutcome { logs, best_epoch, best_val_auc, model, val_scores, val_labels })
}

/// BCE over logits; with class weighting enabled, positive samples are
/// weighted by n_neg / n_pos of the batch.
fn weighted_bce<S: Scalar>(
    logits: &Array1<S>,
    targets: &Array1<S>,
    class_weighting: bool,
) -> (S, Array1<S>) {
    if !class_weighting {
        return bce_with_logits(logits, targets);
    }
    let n_pos: f64 = targets.iter().map(|t| t.to_f()).sum();
    let n = targets.len() as f64;
    let n_neg = n - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return bce_with_logits(logits, targets);
    }
    let w_pos = S::from_f(n_neg / n_pos);
    let (_, _) = (n_pos, n_neg);
    let mut loss = S::zero();
    let mut grad = Array1::zeros(logits.len());
    let inv_n = S::one() / S::from_us(logits.len());
    for (i, (&l, &t)) in logits.iter().zip(targets.iter()).enumerate() {
        let w = if t > S::from_f(0.5) { w_pos } else { S::one() };
        loss += w * (l.max(S::zero()) - l * t + (S::one() + (-l.abs()).exp()).ln());
        grad[i] = w * (crate::nn::ops::sigmoid(l) - t) * inv_n;
    }
    (loss * inv_n, grad)
}
