use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::accountant::{privacy_spent, PrivacySpent};
use crate::error::{Error, Result};
use crate::nn::{check_inputs, labels_f64, Adam, MlpModel, Params, StopRule, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// 0 trains without noise; the run is then flagged non-private.
    pub noise_multiplier: f64,
    pub l2_clip: f64,
    pub microbatch_size: usize,
    pub delta: f64,
}

impl DpConfig {
    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::Config("noise multiplier must be finite and non-negative".into()));
        }
        if !(self.l2_clip > 0.0) {
            return Err(Error::Config("l2 clip must be positive".into()));
        }
        if self.microbatch_size == 0 {
            return Err(Error::Config("microbatch size must be at least 1".into()));
        }
        if batch_size % self.microbatch_size != 0 {
            return Err(Error::Config(format!(
                "microbatch size {} does not divide batch size {batch_size}",
                self.microbatch_size
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Clipping statistics gathered over every step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAudit {
    pub steps: u64,
    pub microbatches: u64,
    /// Largest microbatch gradient norm after clipping.
    pub max_clipped_norm: f64,
    /// Fraction of microbatches whose gradient was scaled down.
    pub clipped_fraction: f64,
}

impl ClipAudit {
    pub fn holds(&self, l2_clip: f64) -> bool {
        self.max_clipped_norm <= l2_clip * (1.0 + 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpOutcome {
    pub history: TrainHistory,
    pub privacy: PrivacySpent,
    pub clip_audit: ClipAudit,
}

/// Steps and sampling rate used for accounting a shuffle-and-partition run.
pub fn accounting_schedule(n: usize, batch_size: usize, epochs: usize) -> (u64, f64) {
    let batch = batch_size.min(n).max(1);
    let steps = (epochs * n.div_ceil(batch)) as u64;
    (steps, batch as f64 / n as f64)
}

/// Scales `g` in place to L2 norm at most `clip`; returns (norm after, was clipped).
pub fn clip_params(g: &mut Params, clip: f64) -> (f64, bool) {
    let norm = g.l2_norm();
    if norm > clip {
        g.scale(clip / norm);
        (g.l2_norm(), true)
    } else {
        (norm, false)
    }
}

/// DP-SGD with Adam: each microbatch's mean gradient is clipped to `l2_clip`,
/// the clipped gradients are summed, Gaussian noise with std
/// `noise_multiplier · l2_clip` is added, and the sum is divided by the number
/// of microbatches.
pub fn dp_train(
    model: &mut MlpModel,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    cfg: &TrainConfig,
    dp: &DpConfig,
    seed: u64,
) -> Result<DpOutcome> {
    cfg.validate()?;
    check_inputs(model, x, y)?;
    let n = x.nrows();
    let batch = cfg.batch_size.min(n);
    dp.validate(cfg.batch_size)?;
    if dp.delta > 1.0 / n as f64 {
        log::warn!("delta {} exceeds 1/N = {}", dp.delta, 1.0 / n as f64);
    }
    if dp.noise_multiplier == 0.0 {
        log::warn!("noise multiplier is 0; training is not differentially private");
    }
    let start = Instant::now();
    let targets = labels_f64(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, dp.noise_multiplier * dp.l2_clip)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(model, cfg.learning_rate);
    let mut stop = StopRule::new(cfg.early_stopping);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    let mut audit = ClipAudit {
        steps: 0,
        microbatches: 0,
        max_clipped_norm: 0.0,
        clipped_fraction: 0.0,
    };
    let mut clipped = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, idx) in order.chunks(batch).enumerate() {
            let mut sum = Params::zeros_like(model);
            let mut count = 0usize;
            for mb in idx.chunks(dp.microbatch_size) {
                let xb = x.select(Axis(0), mb);
                let yb: Vec<f64> = mb.iter().map(|&i| targets[i]).collect();
                let (loss, mut g) = model.loss_gradient(xb.view(), &yb, cfg.l2);
                if !loss.is_finite() || !g.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("loss {loss}, parameters finite: {}", model.params_finite()),
                    });
                }
                epoch_loss += loss * mb.len() as f64;
                let (norm, was_clipped) = clip_params(&mut g, dp.l2_clip);
                debug_assert!(norm <= dp.l2_clip * (1.0 + 1e-9));
                audit.max_clipped_norm = audit.max_clipped_norm.max(norm);
                clipped += u64::from(was_clipped);
                sum.add_scaled(&g, 1.0);
                count += 1;
            }
            if dp.noise_multiplier > 0.0 {
                sum.for_each_mut(|v| *v += noise.sample(&mut noise_rng));
            }
            sum.scale(1.0 / count as f64);
            audit.steps += 1;
            audit.microbatches += count as u64;
            adam.step(model, &sum);
        }
        let epoch_loss = epoch_loss / n as f64;
        history.push(epoch_loss);
        if stop.should_stop(epoch_loss) {
            stopped_early = true;
            break;
        }
    }
    if !model.params_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: history.len(),
            step: 0,
            detail: "parameters diverged".into(),
        });
    }
    audit.clipped_fraction = clipped as f64 / audit.microbatches.max(1) as f64;
    let (_, q) = accounting_schedule(n, cfg.batch_size, cfg.epochs);
    let privacy = privacy_spent(audit.steps, q, dp.noise_multiplier, dp.delta)?;
    Ok(DpOutcome {
        history: TrainHistory {
            epoch_loss: history,
            stopped_early,
            seconds: start.elapsed().as_secs_f64(),
        },
        privacy,
        clip_audit: audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train, Architecture};
    use ndarray::Array2;
    use rand::Rng;

    fn fixture(n: usize) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((n, 4), |_| rng.random::<f64>());
        let y = x.rows().into_iter().map(|r| u8::from(r[0] + r[1] > 1.0)).collect();
        (x, y)
    }

    #[test]
    fn clip_to_exact_threshold() {
        let m = MlpModel::new(4, &Architecture::Standard.layers(), 0).unwrap();
        let mut g = Params::zeros_like(&m);
        g.for_each_mut(|v| *v = 1.0);
        let target = 10.0 / g.l2_norm();
        g.scale(target);
        assert!((g.l2_norm() - 10.0).abs() < 1e-9);
        let (norm, clipped) = clip_params(&mut g, 1.0);
        assert!(clipped);
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerates_to_adam_without_noise_or_clipping() {
        let (x, y) = fixture(48);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let mut a = MlpModel::new(4, &Architecture::Standard.layers(), 1).unwrap();
        let mut b = a.clone();
        train(&mut a, x.view(), &y, &cfg, 5).unwrap();
        let dp = DpConfig { noise_multiplier: 0.0, l2_clip: 1e12, microbatch_size: 48, delta: 1e-5 };
        let out = dp_train(&mut b, x.view(), &y, &cfg, &dp, 5).unwrap();
        assert!(out.privacy.epsilon.is_none());
        let (pa, pb) = (a.params(), b.params());
        for l in 0..pa.w.len() {
            for (u, v) in pa.w[l].iter().zip(pb.w[l].iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn audit_holds_and_privacy_reported() {
        let (x, y) = fixture(200);
        let cfg = TrainConfig { epochs: 3, batch_size: 10, ..TrainConfig::default() };
        let mut m = MlpModel::new(4, &Architecture::Standard.layers(), 2).unwrap();
        let dp = DpConfig { noise_multiplier: 1.1, l2_clip: 0.05, microbatch_size: 2, delta: 1e-5 };
        let out = dp_train(&mut m, x.view(), &y, &cfg, &dp, 0).unwrap();
        assert!(out.clip_audit.holds(0.05));
        assert_eq!(out.clip_audit.steps, 60);
        assert_eq!(out.clip_audit.microbatches, 300);
        assert!(out.clip_audit.clipped_fraction > 0.0);
        assert_eq!(out.privacy.steps, 60);
        assert!(out.privacy.epsilon.unwrap() > 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = fixture(100);
        let cfg = TrainConfig { epochs: 2, batch_size: 10, ..TrainConfig::default() };
        let dp = DpConfig { noise_multiplier: 2.0, l2_clip: 1.0, microbatch_size: 5, delta: 1e-5 };
        let base = MlpModel::new(4, &Architecture::Standard.layers(), 2).unwrap();
        let (mut a, mut b) = (base.clone(), base);
        dp_train(&mut a, x.view(), &y, &cfg, &dp, 9).unwrap();
        dp_train(&mut b, x.view(), &y, &cfg, &dp, 9).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn microbatch_must_divide_batch() {
        let (x, y) = fixture(20);
        let cfg = TrainConfig { batch_size: 10, ..TrainConfig::default() };
        let dp = DpConfig { noise_multiplier: 1.0, l2_clip: 1.0, microbatch_size: 3, delta: 1e-5 };
        let mut m = MlpModel::new(4, &Architecture::Standard.layers(), 0).unwrap();
        assert!(matches!(dp_train(&mut m, x.view(), &y, &cfg, &dp, 0), Err(Error::Config(_))));
    }
}
