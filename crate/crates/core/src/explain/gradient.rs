use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ExplainerConfig;
use crate::error::{Error, Result};
use crate::nn::Differentiable;

/// Where along each path segment the gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IgRule {
    #[default]
    Left,
    Midpoint,
}

/// Integrated Gradients along the straight path from the baseline to `x`.
pub fn explain_ig(model: &impl Differentiable, x: ArrayView1<'_, f64>, cfg: &ExplainerConfig) -> Result<Array1<f64>> {
    let d = x.len();
    if d != model.input_dim() {
        return Err(Error::Dimension { expected: model.input_dim(), got: d });
    }
    let baseline = match &cfg.ig_baseline {
        Some(b) if b.len() != d => return Err(Error::Dimension { expected: d, got: b.len() }),
        Some(b) => Array1::from_vec(b.clone()),
        None => Array1::zeros(d),
    };
    let diff = &x - &baseline;
    if diff.iter().all(|&v| v == 0.0) {
        return Ok(Array1::zeros(d));
    }
    let m = cfg.ig_steps.max(1);
    let offset = match cfg.ig_rule {
        IgRule::Left => 0.0,
        IgRule::Midpoint => 0.5,
    };
    let mut points = Array2::<f64>::zeros((m, d));
    for (k, mut row) in points.axis_iter_mut(Axis(0)).enumerate() {
        let t = (k as f64 + offset) / m as f64;
        row.assign(&(&baseline + &(&diff * t)));
    }
    let grads = model.input_gradients(points.view());
    let mean = grads.mean_axis(Axis(0)).expect("m >= 1");
    Ok(mean * diff)
}

/// SmoothGrad: mean input gradient over Gaussian perturbations of `x`.
pub fn explain_sg(
    model: &impl Differentiable,
    x: ArrayView1<'_, f64>,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<Array1<f64>> {
    let d = x.len();
    if d != model.input_dim() {
        return Err(Error::Dimension { expected: model.input_dim(), got: d });
    }
    if cfg.sg_samples == 0 {
        return Err(Error::Config("sg_samples must be at least 1".into()));
    }
    let noise = Normal::new(0.0, cfg.sg_sigma).map_err(|e| Error::Config(format!("sg_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.sg_samples;
    let mut points = Array2::<f64>::zeros((n, d));
    for mut row in points.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[j] + noise.sample(&mut rng);
        }
    }
    Ok(model.input_gradients(points.view()).mean_axis(Axis(0)).expect("n >= 1"))
}
