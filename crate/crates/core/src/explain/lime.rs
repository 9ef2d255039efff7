use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ExplainContext, ExplainerConfig, PerturbGroup};
use crate::error::{Error, Result};
use crate::nn::Predictor;

/// Weighted ridge surrogate fitted around one record.
#[derive(Debug, Clone)]
pub struct LimeFit {
    pub coefficients: Array1<f64>,
    pub intercept: f64,
    /// Condition number of the regularized normal matrix.
    pub condition_number: f64,
}

fn perturb(x: ArrayView1<'_, f64>, groups: &[PerturbGroup], n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = x.len();
    let mut z = Array2::<f64>::zeros((n, d));
    z.row_mut(0).assign(&x);
    for i in 1..n {
        let mut row = z.row_mut(i);
        row.assign(&x);
        for g in groups {
            match g {
                PerturbGroup::Continuous { index, std } => {
                    let e: f64 = rng.sample(StandardNormal);
                    row[*index] = x[*index] + std * e;
                }
                PerturbGroup::Categorical { indices, probs } => {
                    for &j in indices {
                        row[j] = 0.0;
                    }
                    let mut r: f64 = rng.random();
                    for (&j, &p) in indices.iter().zip(probs) {
                        if r < p {
                            row[j] = 1.0;
                            break;
                        }
                        r -= p;
                    }
                }
            }
        }
    }
    z
}

/// Fits the LIME surrogate: perturbations around `x`, exponential kernel on
/// Euclidean distance, weighted ridge with an unpenalized intercept.
pub fn lime_fit(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    ctx: &ExplainContext,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<LimeFit> {
    let d = x.len();
    if d != model.input_dim() {
        return Err(Error::Dimension { expected: model.input_dim(), got: d });
    }
    let n = cfg.lime_samples;
    if n < d + 2 {
        return Err(Error::Config(format!("lime_samples must be at least d + 2 = {}", d + 2)));
    }
    let width = cfg.lime_kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = perturb(x, &ctx.groups, n, &mut rng);
    let y = model.predict_batch(z.view());
    let w: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| {
            let dist2: f64 = r.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            (-dist2 / (width * width)).exp()
        })
        .collect();
    let wsum: f64 = w.iter().sum();
    let mut zmean = Array1::<f64>::zeros(d);
    let mut ymean = 0.0;
    for (i, r) in z.rows().into_iter().enumerate() {
        zmean.scaled_add(w[i] / wsum, &r);
        ymean += w[i] * y[i] / wsum;
    }
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut c = vec![0.0; d];
    for (i, r) in z.rows().into_iter().enumerate() {
        for j in 0..d {
            c[j] = r[j] - zmean[j];
        }
        let yc = y[i] - ymean;
        for j in 0..d {
            if c[j] == 0.0 {
                continue;
            }
            b[j] += w[i] * c[j] * yc;
            for k in j..d {
                a[(j, k)] += w[i] * c[j] * c[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        a[(j, j)] += cfg.lime_ridge;
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let (lo, hi) = (eig.min().abs(), eig.max().abs());
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition_number.is_finite() || condition_number > 1e12 {
        log::debug!("LIME normal matrix is ill-conditioned ({condition_number:e})");
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.svd(true, true).solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(d)),
    };
    let coefficients: Array1<f64> = beta.iter().copied().collect();
    let intercept = ymean - coefficients.dot(&zmean);
    Ok(LimeFit { coefficients, intercept, condition_number })
}

/// LIME attributions: the surrogate's top-k coefficients by magnitude, others zero.
pub fn explain_lime(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    ctx: &ExplainContext,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<Array1<f64>> {
    let fit = lime_fit(model, x, ctx, cfg, seed)?;
    let d = x.len();
    let k = cfg.lime_top_k.unwrap_or(d).min(d);
    if k == d {
        return Ok(fit.coefficients);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| fit.coefficients[b].abs().total_cmp(&fit.coefficients[a].abs()).then(a.cmp(&b)));
    let mut out = Array1::<f64>::zeros(d);
    for &j in &order[..k] {
        out[j] = fit.coefficients[j];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testing::toy_dataset;
    use crate::explain::testing::linear_model;
    use crate::nn::{Activation, Architecture, MlpModel};
    use ndarray::array;

    fn ctx(d: usize, std: f64) -> ExplainContext {
        ExplainContext {
            background: Array2::zeros((1, d)),
            groups: (0..d).map(|index| PerturbGroup::Continuous { index, std }).collect(),
        }
    }

    #[test]
    fn recovers_linear_probability_model() {
        let w = [0.08, -0.05, 0.12, 0.0, 0.03];
        let m = linear_model(&w, 0.4, Activation::Identity);
        let x = array![0.5, 0.4, 0.6, 0.5, 0.3];
        let cfg = ExplainerConfig { lime_samples: 10_000, ..Default::default() };
        let coef = explain_lime(&m, x.view(), &ctx(5, 0.3), &cfg, 1).unwrap();
        let max = coef.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..5 {
            if w[j] == 0.0 {
                assert!(coef[j].abs() <= 0.05 * max);
            } else {
                assert!(((coef[j] - w[j]) / w[j]).abs() <= 0.10, "j={j}: {} vs {}", coef[j], w[j]);
            }
        }
    }

    #[test]
    fn top_k_keeps_largest() {
        let m = linear_model(&[0.5, -0.01, 0.2, 0.02], 0.0, Activation::Identity);
        let x = array![0.5, 0.5, 0.5, 0.5];
        let cfg = ExplainerConfig { lime_samples: 2_000, lime_top_k: Some(2), ..Default::default() };
        let coef = explain_lime(&m, x.view(), &ctx(4, 0.3), &cfg, 2).unwrap();
        assert!(coef[0] != 0.0 && coef[2] != 0.0);
        assert_eq!(coef[1], 0.0);
        assert_eq!(coef[3], 0.0);
    }

    #[test]
    fn seeded_and_validated() {
        let ds = toy_dataset(200, 0);
        let m = MlpModel::new(ds.n_features(), &Architecture::Standard.layers(), 0).unwrap();
        let c = ExplainContext::from_dataset(&ds, 10, 0);
        let cfg = ExplainerConfig::default();
        let a = explain_lime(&m, ds.x.row(0), &c, &cfg, 3).unwrap();
        assert_eq!(a, explain_lime(&m, ds.x.row(0), &c, &cfg, 3).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        let small = ExplainerConfig { lime_samples: 3, ..Default::default() };
        assert!(explain_lime(&m, ds.x.row(0), &c, &small, 3).is_err());
    }

    #[test]
    fn categorical_groups_stay_one_hot() {
        let ds = toy_dataset(300, 1);
        let c = ExplainContext::from_dataset(&ds, 10, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = perturb(ds.x.row(0), &c.groups, 500, &mut rng);
        for g in &c.groups {
            if let PerturbGroup::Categorical { indices, .. } = g {
                for r in z.rows() {
                    let hot: f64 = indices.iter().map(|&j| r[j]).sum();
                    assert!(hot <= 1.0);
                    assert!(indices.iter().all(|&j| r[j] == 0.0 || r[j] == 1.0));
                }
            }
        }
    }
}
