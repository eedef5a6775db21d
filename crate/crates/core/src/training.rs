//! Optimizers, L1 loss, early stopping and the training loop, plus
//! autoencoder pretraining of the framewise CNN trunk.

use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MelPatchSequence;
use crate::models::{Architecture, FramewiseCnn, FramewiseCnnConfig, MirroredDecoder, Model, Sample};
use crate::nn::{Grads, ParamSet};

pub const DEFAULT_PATIENCE: usize = 20;
pub const DEFAULT_MAX_EPOCHS: usize = 10_000;
/// Minimum decrease of validation loss that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::Sgd => 1e-4,
        }
    }
}

/// Training hyperparameters. The loss is always per-sample L1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Adam at 1e-3 with batch 32 for CNN-based models, SGD at 1e-4 with
    /// batch 8 for w2vMOS.
    pub fn for_architecture(arch: Architecture, seed: u64) -> Self {
        let (optimizer, batch_size) = match arch {
            Architecture::W2vMos => (OptimizerKind::Sgd, 8),
            _ => (OptimizerKind::Adam, 32),
        };
        Self {
            optimizer,
            learning_rate: optimizer.default_lr(),
            patience_epochs: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.patience_epochs == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("patience_epochs, max_epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("l1_loss", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("l1_loss".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Subgradient of |pred − target| with respect to pred; 0 at the kink.
pub fn l1_grad(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// First-order optimizer state. Tensors in frozen groups are never touched.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamSet) -> Self {
        match kind {
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
                Optimizer::Adam {
                    lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                    t: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        let trainable: Vec<bool> = (0..params.len())
            .map(|i| params.is_trainable(crate::nn::ParamId(i)))
            .collect();
        match self {
            Optimizer::Sgd { lr } => {
                for (i, t) in params.tensors_mut().iter_mut().enumerate() {
                    if !trainable[i] {
                        continue;
                    }
                    for (w, g) in t.data.iter_mut().zip(&grads.data[i]) {
                        *w -= *lr * g;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
                    if !trainable[i] {
                        continue;
                    }
                    for (k, w) in tensor.data.iter_mut().enumerate() {
                        let g = grads.data[i][k];
                        m[i][k] = *beta1 * m[i][k] + (1.0 - *beta1) * g;
                        v[i][k] = *beta2 * v[i][k] + (1.0 - *beta2) * g * g;
                        let mh = m[i][k] / c1;
                        let vh = v[i][k] / c2;
                        *w -= *lr * mh / (vh.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "PATIENCE",
            StopReason::MaxEpochs => "MAX_EPOCHS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochOutcome {
    Improved,
    NoImprovement,
    Stop(StopReason),
}

/// Patience-based early stopping on validation loss. Epochs are 1-based.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Records the validation loss of the next epoch. An improvement is a
    /// decrease of more than [`IMPROVEMENT_EPS`] below the best so far.
    pub fn observe(&mut self, val_loss: f64) -> (bool, Option<StopReason>) {
        self.epoch += 1;
        let improved = val_loss < self.best_loss - IMPROVEMENT_EPS;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let stop = if self.stale >= self.patience {
            Some(StopReason::Patience)
        } else if self.epoch >= self.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        (improved, stop)
    }
}

/// Replays a validation-loss sequence through [`EarlyStopping`] and returns
/// (stop epoch, best epoch, reason), or `None` if the sequence runs out
/// before a stop.
pub fn simulate_early_stopping(losses: &[f64], patience: usize, max_epochs: usize) -> Option<(usize, usize, StopReason)> {
    let mut es = EarlyStopping::new(patience, max_epochs);
    for &l in losses {
        if let (_, Some(reason)) = es.observe(l) {
            return Some((es.epoch(), es.best_epoch, reason));
        }
    }
    None
}

/// A model input with its ground-truth MOS.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub sample: Sample,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl RunRecord {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

/// Mean L1 loss of `model` on `data`.
pub fn evaluate_loss(model: &Model, data: &[LabeledSample]) -> Result<f64> {
    let mut preds = Vec::with_capacity(data.len());
    for d in data {
        preds.push(model.predict(&d.sample)?);
    }
    let targets: Vec<f64> = data.iter().map(|d| d.mos).collect();
    l1_loss(&preds, &targets)
}

/// Accumulates the batch-mean L1 gradient and returns the summed loss.
pub fn batch_gradient(model: &Model, batch: &[&LabeledSample], grads: &mut Grads) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for item in batch {
        let target = item.mos;
        let pred = model.backward(&item.sample, grads, |p| l1_grad(p, target) * scale)?;
        loss += (pred - target).abs();
    }
    Ok(loss)
}

/// Trains `model` with early stopping on `val` and returns the parameters
/// from the best validation epoch.
pub fn train(
    model_id: &str,
    mut model: Model,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(Model, RunRecord)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput("validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7EA1_5EED);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.params);
    let mut es = EarlyStopping::new(cfg.patience_epochs, cfg.max_epochs);
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut record = RunRecord {
        model_id: model_id.to_string(),
        seed: cfg.seed,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::MaxEpochs,
    };
    loop {
        let epoch = es.epoch() + 1;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut grads = model.params.zero_grads();
            total += batch_gradient(&model, &batch, &mut grads)?;
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            opt.step(&mut model.params, &grads);
        }
        let val = evaluate_loss(&model, val_set)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        record.train_loss.push(total / train_set.len() as f64);
        record.val_loss.push(val);
        let (improved, stop) = es.observe(val);
        if improved {
            best_params = model.params.clone();
        }
        if let Some(reason) = stop {
            record.stop_reason = reason;
            break;
        }
    }
    record.best_epoch = es.best_epoch;
    record.best_val_loss = es.best_loss;
    model.params = best_params;
    Ok((model, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AePretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AePretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AePretrainResult {
    /// Trunk tensors named `trunk.*`, ready for [`Model::load_trunk`].
    pub encoder: ParamSet,
    /// Mean reconstruction MSE per epoch.
    pub losses: Vec<f64>,
}

/// Trains the framewise CNN as the encoder of a convolutional autoencoder
/// with a mirrored decoder and per-element MSE reconstruction loss.
pub fn pretrain_autoencoder(
    patches: &[MelPatchSequence],
    cnn: &FramewiseCnnConfig,
    cfg: &AePretrainConfig,
) -> Result<AePretrainResult> {
    let all: Vec<&Array2<f64>> = patches.iter().flat_map(|s| s.patches.iter()).collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("autoencoder pretraining set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("autoencoder epochs, batch_size and learning_rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let encoder = FramewiseCnn::new(&mut params, "trunk", cnn.clone(), &mut rng)?;
    let decoder = MirroredDecoder::new(&mut params, "decoder", cnn, &mut rng);
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate, &params);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = params.zero_grads();
            for &i in chunk {
                let x = all[i];
                let (code, ecache) = encoder.forward(&params, x)?;
                let (recon, dcache) = decoder.forward(&params, &code);
                let diff = &recon - x;
                let n = diff.len() as f64;
                total += diff.mapv(|d| d * d).sum() / n;
                let dout = diff.mapv(|d| 2.0 * d / n / chunk.len() as f64);
                let dcode = decoder.backward(&params, &dcache, &dout, &mut grads);
                encoder.backward(&params, &ecache, dcode, &mut grads, false);
            }
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            opt.step(&mut params, &grads);
        }
        let mean = total / all.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(mean);
    }
    let mut enc = ParamSet::new();
    for t in params.tensors().iter().filter(|t| t.group() == "trunk") {
        enc.add(t.name.clone(), &t.shape, t.data.clone());
    }
    Ok(AePretrainResult { encoder: enc, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[3.0], &[4.0]).unwrap(), 1.0);
        assert!(matches!(l1_loss(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn patience_example() {
        let mut losses = vec![1.0, 0.9];
        losses.extend(std::iter::repeat_n(0.9, 30));
        assert_eq!(simulate_early_stopping(&losses, 20, 10_000), Some((22, 2, StopReason::Patience)));
    }

    #[test]
    fn max_epochs_example() {
        let losses = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(simulate_early_stopping(&losses, 20, 5), Some((5, 5, StopReason::MaxEpochs)));
    }

    #[test]
    fn tiny_decrease_is_not_improvement() {
        let mut losses = vec![1.0];
        losses.extend((1..=3).map(|i| 1.0 - i as f64 * 1e-7));
        assert_eq!(simulate_early_stopping(&losses, 3, 100), Some((4, 1, StopReason::Patience)));
    }

    #[test]
    fn defaults_follow_architecture() {
        let c = TrainConfig::for_architecture(Architecture::ConvMaxPool, 0);
        assert_eq!((c.optimizer, c.learning_rate, c.batch_size), (OptimizerKind::Adam, 1e-3, 32));
        let w = TrainConfig::for_architecture(Architecture::W2vMos, 0);
        assert_eq!((w.optimizer, w.learning_rate, w.batch_size), (OptimizerKind::Sgd, 1e-4, 8));
        assert_eq!(w.patience_epochs, 20);
    }
}
