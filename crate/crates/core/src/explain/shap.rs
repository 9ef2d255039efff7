use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ExplainerConfig;
use crate::error::{Error, Result};
use crate::nn::Predictor;

const EXACT_LIMIT: usize = 15;
/// Coalition masks evaluated per model call.
const MASK_CHUNK: usize = 256;

/// Coalition budget: full enumeration or a number of sampled coalitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coalitions {
    Exact,
    Sampled(usize),
}

impl Serialize for Coalitions {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Coalitions::Exact => s.serialize_str("exact"),
            Coalitions::Sampled(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Coalitions {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(n) => Ok(Coalitions::Sampled(n as usize)),
            Repr::Word(w) if w.eq_ignore_ascii_case("exact") => Ok(Coalitions::Exact),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected `exact` or a count, got `{w}`"))),
        }
    }
}

/// v(S): mean prediction over the background with features in S taken from x.
fn coalition_values(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    masks: &[Vec<bool>],
) -> Vec<f64> {
    let nb = background.nrows();
    let d = x.len();
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(MASK_CHUNK) {
        let mut rows = Array2::<f64>::zeros((chunk.len() * nb, d));
        for (c, mask) in chunk.iter().enumerate() {
            for b in 0..nb {
                let mut row = rows.row_mut(c * nb + b);
                for j in 0..d {
                    row[j] = if mask[j] { x[j] } else { background[[b, j]] };
                }
            }
        }
        let preds = model.predict_batch(rows.view());
        for c in 0..chunk.len() {
            out.push(preds.slice(ndarray::s![c * nb..(c + 1) * nb]).mean().unwrap_or(0.0));
        }
    }
    out
}

fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weighted least squares under Σφ = Δ, with the last feature eliminated.
fn solve_constrained(masks: &[Vec<bool>], values: &[f64], weights: &[f64], f0: f64, delta: f64, d: usize) -> Array1<f64> {
    if d == 1 {
        return Array1::from_elem(1, delta);
    }
    let p = d - 1;
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((mask, &v), &w) in masks.iter().zip(values).zip(weights) {
        let last = f64::from(u8::from(mask[p]));
        for i in 0..p {
            row[i] = f64::from(u8::from(mask[i])) - last;
        }
        let y = v - f0 - last * delta;
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            xtwy[i] += w * row[i] * y;
            for j in 0..p {
                xtwx[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let sol = match xtwx.clone().cholesky() {
        Some(c) => c.solve(&xtwy),
        None => xtwx
            .svd(true, true)
            .solve(&xtwy, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(p)),
    };
    let mut phi = Array1::<f64>::zeros(d);
    for i in 0..p {
        phi[i] = sol[i];
    }
    phi[p] = delta - sol.sum();
    phi
}

/// KernelSHAP against an explicit background set.
pub fn shapley_values(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    coalitions: Coalitions,
    seed: u64,
) -> Result<Array1<f64>> {
    let d = x.len();
    if d != model.input_dim() || background.ncols() != d {
        return Err(Error::Dimension { expected: model.input_dim(), got: d });
    }
    if background.nrows() == 0 {
        return Err(Error::Config("SHAP background set is empty".into()));
    }
    let ends = coalition_values(model, x, background, &[vec![false; d], vec![true; d]]);
    let (f0, fx) = (ends[0], ends[1]);
    let delta = fx - f0;
    if d == 1 {
        return Ok(Array1::from_elem(1, delta));
    }
    let (masks, weights): (Vec<Vec<bool>>, Vec<f64>) = match coalitions {
        Coalitions::Exact => {
            if d > EXACT_LIMIT {
                return Err(Error::TooManyFeatures(d));
            }
            (1u32..(1u32 << d) - 1)
                .map(|bits| {
                    let mask: Vec<bool> = (0..d).map(|j| bits >> j & 1 == 1).collect();
                    let s = bits.count_ones() as usize;
                    let w = (d - 1) as f64 / (binom(d, s) * (s * (d - s)) as f64);
                    (mask, w)
                })
                .unzip()
        }
        Coalitions::Sampled(m) => {
            // sizes drawn in proportion to the total kernel weight of each size,
            // each draw paired with its complement
            let size_w: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
            let total: f64 = size_w.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut masks = Vec::with_capacity(m);
            while masks.len() + 1 < m.max(2) {
                let mut r = rng.random::<f64>() * total;
                let mut s = 1;
                for (k, w) in size_w.iter().enumerate() {
                    s = k + 1;
                    if r < *w {
                        break;
                    }
                    r -= w;
                }
                let mut mask = vec![false; d];
                for j in sample(&mut rng, d, s) {
                    mask[j] = true;
                }
                let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
                masks.push(mask);
                masks.push(complement);
            }
            let n = masks.len();
            (masks, vec![1.0; n])
        }
    };
    let values = coalition_values(model, x, background, &masks);
    Ok(solve_constrained(&masks, &values, &weights, f0, delta, d))
}

/// KernelSHAP with the configured background set from `ctx`.
pub fn explain_shap(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<Array1<f64>> {
    shapley_values(model, x, background, cfg.shap_coalitions, seed)
}

/// Shapley values from the permutation-weighted formula over all 2^d
/// coalitions. Reference implementation for small d.
pub fn brute_force_shapley(model: &impl Predictor, x: ArrayView1<'_, f64>, background: ArrayView2<'_, f64>) -> Array1<f64> {
    let d = x.len();
    let masks: Vec<Vec<bool>> = (0u32..1 << d).map(|bits| (0..d).map(|j| bits >> j & 1 == 1).collect()).collect();
    let v = coalition_values(model, x, background, &masks);
    let fact = |n: usize| (1..=n).fold(1.0, |a, k| a * k as f64);
    let mut phi = Array1::<f64>::zeros(d);
    for i in 0..d {
        for bits in 0u32..1 << d {
            if bits >> i & 1 == 1 {
                continue;
            }
            let s = bits.count_ones() as usize;
            let w = fact(s) * fact(d - s - 1) / fact(d);
            phi[i] += w * (v[(bits | 1 << i) as usize] - v[bits as usize]);
        }
    }
    phi
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::testing::linear_model;
    use crate::nn::{Activation, Architecture, MlpModel};
    use ndarray::{array, Array2, Axis};

    fn random_point(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
        (0..d).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn exact_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in [2, 5, 8, 10] {
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = linear_model(&w, 0.3, Activation::Sigmoid);
            let x = random_point(d, &mut rng);
            let b = random_point(d, &mut rng).insert_axis(Axis(0));
            let exact = shapley_values(&m, x.view(), b.view(), Coalitions::Exact, 0).unwrap();
            let brute = brute_force_shapley(&m, x.view(), b.view());
            for j in 0..d {
                assert!((exact[j] - brute[j]).abs() < 1e-6, "d={d} j={j}");
            }
        }
    }

    #[test]
    fn exact_matches_brute_force_on_mlp_with_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::new(6, &Architecture::Standard.layers(), 4).unwrap();
        let x = random_point(6, &mut rng);
        let bg = Array2::from_shape_fn((7, 6), |_| rng.random::<f64>());
        let exact = shapley_values(&m, x.view(), bg.view(), Coalitions::Exact, 0).unwrap();
        let brute = brute_force_shapley(&m, x.view(), bg.view());
        assert!(exact.iter().zip(&brute).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn symmetry_and_efficiency() {
        let m = linear_model(&[1.0, 1.0, -0.5], 0.0, Activation::Sigmoid);
        let x = array![0.7, 0.7, 0.2];
        let b = array![[0.1, 0.1, 0.9]];
        let phi = shapley_values(&m, x.view(), b.view(), Coalitions::Exact, 0).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-6);
        let gap = m.predict_one(x.view()) - m.predict_one(b.row(0));
        assert!((phi.sum() - gap).abs() < 1e-6);
    }

    #[test]
    fn exact_rejects_wide_inputs() {
        let m = linear_model(&[0.1; 16], 0.0, Activation::Sigmoid);
        let x = Array1::zeros(16);
        let b = Array2::zeros((1, 16));
        assert!(matches!(
            shapley_values(&m, x.view(), b.view(), Coalitions::Exact, 0),
            Err(Error::TooManyFeatures(16))
        ));
    }

    #[test]
    fn sampled_converges_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpModel::new(8, &Architecture::Standard.layers(), 5).unwrap();
        let x = random_point(8, &mut rng);
        let bg = Array2::from_shape_fn((5, 8), |_| rng.random::<f64>());
        let exact = shapley_values(&m, x.view(), bg.view(), Coalitions::Exact, 0).unwrap();
        let rms = |n: usize| {
            let reps = 40;
            let total: f64 = (0..reps)
                .map(|s| {
                    let est = shapley_values(&m, x.view(), bg.view(), Coalitions::Sampled(n), s).unwrap();
                    (&est - &exact).mapv(|v| v * v).sum()
                })
                .sum();
            (total / reps as f64).sqrt()
        };
        let (e1, e4) = (rms(64), rms(256));
        let ratio = e1 / e4;
        assert!(ratio >= 2.0 / 1.5 && ratio <= 2.0 * 1.5, "{e1} / {e4} = {ratio}");
    }

    #[test]
    fn sampled_respects_efficiency() {
        let m = MlpModel::new(12, &Architecture::Standard.layers(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_point(12, &mut rng);
        let bg = Array2::from_shape_fn((4, 12), |_| rng.random::<f64>());
        let phi = shapley_values(&m, x.view(), bg.view(), Coalitions::Sampled(100), 1).unwrap();
        let gap = m.predict_one(x.view()) - m.predict_batch(bg.view()).mean().unwrap();
        assert!((phi.sum() - gap).abs() < 1e-9);
    }

    #[test]
    fn coalitions_serde() {
        assert_eq!(serde_json::to_string(&Coalitions::Exact).unwrap(), "\"exact\"");
        assert_eq!(serde_json::from_str::<Coalitions>("128").unwrap(), Coalitions::Sampled(128));
        assert_eq!(serde_json::from_str::<Coalitions>("\"EXACT\"").unwrap(), Coalitions::Exact);
    }
}
