use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{MlpModel, Params, Predictor};
use crate::error::{Error, Result};

/// Stop when the epoch loss has not improved by `tolerance` for more than
/// `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub tolerance: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 48,
            l2: 0.0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub stopped_early: bool,
    pub seconds: f64,
}

/// Adam with bias correction; β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Params::zeros_like(model),
            v: Params::zeros_like(model),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grad: &Params) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut update = grad.clone();
        for l in 0..grad.w.len() {
            ndarray::Zip::from(&mut self.m.w[l])
                .and(&mut self.v.w[l])
                .and(&mut update.w[l])
                .for_each(|m, v, g| {
                    *m = b1 * *m + (1.0 - b1) * *g;
                    *v = b2 * *v + (1.0 - b2) * *g * *g;
                    *g = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
            ndarray::Zip::from(&mut self.m.b[l])
                .and(&mut self.v.b[l])
                .and(&mut update.b[l])
                .for_each(|m, v, g| {
                    *m = b1 * *m + (1.0 - b1) * *g;
                    *v = b2 * *v + (1.0 - b2) * *g * *g;
                    *g = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
        }
        model.apply_update(&update, -self.lr);
    }
}

pub(crate) fn labels_f64(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&v| f64::from(v)).collect()
}

pub(crate) fn check_inputs(model: &MlpModel, x: ArrayView2<'_, f64>, y: &[u8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.ncols() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Tracks the early-stopping rule across epochs.
pub(crate) struct StopRule {
    rule: Option<EarlyStopping>,
    best: f64,
    stale: usize,
}

impl StopRule {
    pub(crate) fn new(rule: Option<EarlyStopping>) -> Self {
        Self {
            rule,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub(crate) fn should_stop(&mut self, loss: f64) -> bool {
        let Some(rule) = self.rule else { return false };
        if loss > self.best - rule.tolerance {
            self.stale += 1;
        } else {
            self.stale = 0;
        }
        self.best = self.best.min(loss);
        self.stale > rule.patience
    }
}

/// Mini-batch Adam on binary cross-entropy, reshuffling each epoch.
pub fn train(
    model: &mut MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_inputs(model, x, y)?;
    let start = Instant::now();
    let n = x.nrows();
    let batch = cfg.batch_size.min(n);
    let targets = labels_f64(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(model, cfg.learning_rate);
    let mut stop = StopRule::new(cfg.early_stopping);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, idx) in order.chunks(batch).enumerate() {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = model.loss_gradient(xb.view(), &yb, cfg.l2);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "loss {loss}, gradient norm {}, parameters finite: {}",
                        grads.l2_norm(),
                        model.params_finite()
                    ),
                });
            }
            epoch_loss += loss * idx.len() as f64;
            adam.step(model, &grads);
        }
        let epoch_loss = epoch_loss / n as f64;
        history.push(epoch_loss);
        if stop.should_stop(epoch_loss) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainHistory {
        epoch_loss: history,
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fraction of rows whose thresholded prediction (≥ 0.5 → 1) equals the label.
pub fn evaluate(model: &impl Predictor, x: ArrayView2<'_, f64>, y: &[u8]) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let p = model.predict_batch(x);
    let correct = p
        .iter()
        .zip(y)
        .filter(|(&p, &t)| u8::from(p >= 0.5) == t)
        .count();
    Ok(correct as f64 / x.nrows() as f64)
}
