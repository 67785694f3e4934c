use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// Per-epoch cosine decay from `lr` towards zero over the run.
    CosineAnneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 30,
            schedule: LrSchedule::CosineAnneal,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::CosineAnneal => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                0.5 * self.lr * (1.0 + libm::cos(core::f64::consts::PI * t))
            }
        }
    }
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `v <- μ v + (g + wd θ)`, `θ <- θ - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![0.0; len] }
    }

    pub fn step(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

/// Extra differentiable term added to the mini-batch loss.
pub trait Regularizer {
    /// Adds the term's gradient into `grad` and returns the term's value.
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch objective (cross-entropy plus any regulariser term).
    pub loss: f64,
    /// Fraction of misclassified samples seen during the epoch.
    pub error: f64,
}

#[derive(Default)]
pub struct TrainHooks<'a> {
    pub regularizer: Option<&'a dyn Regularizer>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog, &Model)>,
}

pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_with(model, data, cfg, TrainHooks::default())
}

/// Mini-batch SGD. Deterministic for a given `(model, data, cfg)`: epoch `e`
/// shuffles with the stream `(cfg.seed, "shuffle", e)`. With BatchNorm present
/// a trailing batch of a single sample is skipped.
pub fn train_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, model head has {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let has_bn = model.arch().has_batchnorm();
    let mut opt = Sgd::new(model.params().len(), cfg.momentum, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut errors = 0usize;
        let mut seen = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if has_bn && idx.len() < 2 {
                continue;
            }
            let (x, y) = data.batch(idx);
            let diverged = |loss: f64| Error::Diverged { epoch, batch: b, loss };
            let (loss, errs, grad) = match model.loss_and_grad(&x, &y) {
                Ok(out) => out,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let mut grad = grad.into_values();
            let extra = hooks.regularizer.map_or(0.0, |r| r.apply(model.params().values(), &mut grad));
            let total = loss + extra;
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(total));
            }
            opt.step(lr, model.params_mut(), &grad);
            loss_sum += total * idx.len() as f64;
            errors += errs;
            seen += idx.len();
        }
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss_sum / seen.max(1) as f64,
            error: errors as f64 / seen.max(1) as f64,
        };
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&entry, model);
        }
        log.push(entry);
    }
    Ok(log)
}
