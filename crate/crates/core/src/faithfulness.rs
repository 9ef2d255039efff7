//! Faithfulness correlation, faithfulness estimate and sufficiency.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationMatrix;
use crate::nn::Predictor;
use crate::seed::{derive_seed, derive_seed_str};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaithfulnessConfig {
    pub subset_size: usize,
    pub iterations: usize,
    pub baseline_value: f64,
    /// Relative L2 radius for the sufficiency neighbourhood.
    pub similarity_threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            subset_size: 3,
            iterations: 100,
            baseline_value: 0.0,
            similarity_threshold: 0.1,
            sample_size: 200,
            seed: 0,
        }
    }
}

impl FaithfulnessConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.subset_size == 0 || self.subset_size >= d {
            return Err(Error::Config(format!("subset_size must lie in [1, {d})")));
        }
        if self.iterations < 2 {
            return Err(Error::Config("iterations must be at least 2".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample_size must be at least 1".into()));
        }
        if !(self.similarity_threshold >= 0.0) {
            return Err(Error::Config("similarity_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// A metric value; `undefined` marks degenerate inputs reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub undefined: bool,
}

impl MetricValue {
    fn defined(value: f64) -> Self {
        Self { value, undefined: false }
    }

    fn flagged() -> Self {
        Self { value: 0.0, undefined: true }
    }
}

fn pearson_or_flag(a: &[f64], b: &[f64]) -> MetricValue {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    // relative variance floor: sums of rounding noise are not signal
    let scale_a = a.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let scale_b = b.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b || saa == 0.0 || sbb == 0.0 {
        return MetricValue::flagged();
    }
    MetricValue::defined((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check(model: &impl Predictor, x: ArrayView1<'_, f64>, attr: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension { expected: model.input_dim(), got: x.len() });
    }
    if attr.len() != x.len() {
        return Err(Error::Dimension { expected: x.len(), got: attr.len() });
    }
    Ok(())
}

/// Pearson correlation, over random feature subsets, between the summed
/// attribution of the subset and the output drop when it is set to the baseline.
pub fn faithfulness_correlation(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    attr: ArrayView1<'_, f64>,
    cfg: &FaithfulnessConfig,
    seed: u64,
) -> Result<MetricValue> {
    check(model, x, attr)?;
    let d = x.len();
    cfg.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = Array2::<f64>::zeros((cfg.iterations + 1, d));
    perturbed.row_mut(0).assign(&x);
    let mut u = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let mut row = perturbed.row_mut(k + 1);
        row.assign(&x);
        let mut s = 0.0;
        for j in sample(&mut rng, d, cfg.subset_size) {
            row[j] = cfg.baseline_value;
            s += attr[j];
        }
        u.push(s);
    }
    let preds = model.predict_batch(perturbed.view());
    let v: Vec<f64> = (1..=cfg.iterations).map(|k| preds[0] - preds[k]).collect();
    Ok(pearson_or_flag(&u, &v))
}

/// Pearson correlation across features between attribution and the output drop
/// from setting that single feature to the baseline.
pub fn faithfulness_estimate(
    model: &impl Predictor,
    x: ArrayView1<'_, f64>,
    attr: ArrayView1<'_, f64>,
    cfg: &FaithfulnessConfig,
) -> Result<MetricValue> {
    check(model, x, attr)?;
    let d = x.len();
    if d < 2 {
        return Err(Error::Config("faithfulness estimate needs at least 2 features".into()));
    }
    let mut perturbed = Array2::<f64>::zeros((d + 1, d));
    for k in 0..=d {
        perturbed.row_mut(k).assign(&x);
        if k > 0 {
            perturbed[[k, k - 1]] = cfg.baseline_value;
        }
    }
    let preds = model.predict_batch(perturbed.view());
    let drops: Vec<f64> = (1..=d).map(|k| preds[0] - preds[k]).collect();
    Ok(pearson_or_flag(&attr.to_vec(), &drops))
}

fn close(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, threshold: f64) -> bool {
    let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    dist <= threshold * na.max(nb)
}

/// Mean, over `rows`, of the fraction of explanation neighbours (the record
/// itself included) sharing the record's predicted label. Records without any
/// other neighbour are skipped.
pub fn sufficiency_rows(values: ArrayView2<'_, f64>, preds: &[u8], rows: &[usize], threshold: f64) -> Result<MetricValue> {
    if values.nrows() < 2 {
        return Err(Error::Config("sufficiency needs at least 2 records".into()));
    }
    if preds.len() != values.nrows() {
        return Err(Error::Dimension { expected: values.nrows(), got: preds.len() });
    }
    let scores: Vec<f64> = rows
        .par_iter()
        .filter_map(|&i| {
            let row = values.row(i);
            let (mut same, mut total) = (0usize, 0usize);
            for j in 0..values.nrows() {
                if close(row, values.row(j), threshold) {
                    total += 1;
                    same += usize::from(preds[j] == preds[i]);
                }
            }
            (total > 1).then(|| same as f64 / total as f64)
        })
        .collect();
    if scores.is_empty() {
        return Ok(MetricValue::flagged());
    }
    Ok(MetricValue::defined(scores.iter().sum::<f64>() / scores.len() as f64))
}

pub fn sufficiency(expl: &ExplanationMatrix, preds: &[u8], cfg: &FaithfulnessConfig) -> Result<MetricValue> {
    let rows: Vec<usize> = (0..expl.len()).collect();
    sufficiency_rows(expl.values.view(), preds, &rows, cfg.similarity_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub correlation: f64,
    pub estimate: f64,
    pub sufficiency: f64,
    pub correlation_undefined: usize,
    pub estimate_undefined: usize,
    pub sufficiency_undefined: bool,
    pub records: Vec<u64>,
    pub per_record_correlation: Vec<f64>,
    pub per_record_estimate: Vec<f64>,
}

/// Positions of the records evaluated: a seeded sample of `cfg.sample_size`.
pub fn sample_positions(n: usize, cfg: &FaithfulnessConfig) -> Vec<usize> {
    if cfg.sample_size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "faithfulness"));
    let mut idx = sample(&mut rng, n, cfg.sample_size).into_vec();
    idx.sort_unstable();
    idx
}

/// All three metrics on a sample of records. `x` holds the model inputs of the
/// explained records, row-aligned with `expl`.
pub fn evaluate_faithfulness(
    model: &impl Predictor,
    x: ArrayView2<'_, f64>,
    expl: &ExplanationMatrix,
    cfg: &FaithfulnessConfig,
) -> Result<FaithfulnessReport> {
    if x.nrows() != expl.len() {
        return Err(Error::Dimension { expected: expl.len(), got: x.nrows() });
    }
    if expl.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate(x.ncols())?;
    let rows = sample_positions(expl.len(), cfg);
    let per: Vec<(MetricValue, MetricValue)> = rows
        .par_iter()
        .map(|&i| {
            let s = derive_seed(cfg.seed, expl.record_ids[i]);
            let c = faithfulness_correlation(model, x.row(i), expl.values.row(i), cfg, s)?;
            let e = faithfulness_estimate(model, x.row(i), expl.values.row(i), cfg)?;
            Ok((c, e))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<u8> = model.predict_batch(x).iter().map(|&p| u8::from(p >= 0.5)).collect();
    let suff = sufficiency_rows(expl.values.view(), &preds, &rows, cfg.similarity_threshold)?;
    let mean = |v: &Array1<f64>| v.mean().unwrap_or(0.0);
    let corr: Array1<f64> = per.iter().map(|p| p.0.value).collect();
    let est: Array1<f64> = per.iter().map(|p| p.1.value).collect();
    Ok(FaithfulnessReport {
        correlation: mean(&corr),
        estimate: mean(&est),
        sufficiency: suff.value,
        correlation_undefined: per.iter().filter(|p| p.0.undefined).count(),
        estimate_undefined: per.iter().filter(|p| p.1.undefined).count(),
        sufficiency_undefined: suff.undefined,
        records: rows.iter().map(|&i| expl.record_ids[i]).collect(),
        per_record_correlation: corr.to_vec(),
        per_record_estimate: est.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::testing::linear_model;
    use crate::nn::Activation;
    use ndarray::array;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn linear_case() -> (crate::nn::MlpModel, Array1<f64>, Array1<f64>) {
        let w = [0.05, -0.08, 0.11, 0.02, -0.04, 0.07];
        let m = linear_model(&w, 0.3, Activation::Identity);
        let x = array![0.9, 0.4, 0.7, 0.2, 0.6, 0.5];
        let attr: Array1<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        (m, x, attr)
    }

    #[test]
    fn linear_oracle_correlation_is_one() {
        let (m, x, attr) = linear_case();
        let cfg = FaithfulnessConfig::default();
        let c = faithfulness_correlation(&m, x.view(), attr.view(), &cfg, 0).unwrap();
        assert!((c.value - 1.0).abs() < 1e-6 && !c.undefined);
        let neg = -&attr;
        let c = faithfulness_correlation(&m, x.view(), neg.view(), &cfg, 0).unwrap();
        assert!((c.value + 1.0).abs() < 1e-6);
        let e = faithfulness_estimate(&m, x.view(), attr.view(), &cfg).unwrap();
        assert!((e.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_attributions_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 50;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-0.1..0.1)).collect();
        let m = linear_model(&w, 0.3, Activation::Identity);
        let x: Array1<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let cfg = FaithfulnessConfig::default();
        let trials = 100;
        let mut inside = 0;
        for s in 0..trials {
            let attr: Array1<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = faithfulness_correlation(&m, x.view(), attr.view(), &cfg, s).unwrap();
            inside += usize::from(c.value.abs() <= 0.3);
        }
        assert!(inside >= 90, "{inside}/{trials}");
    }

    #[test]
    fn permuted_estimate_centres_on_zero() {
        let w: Vec<f64> = (0..10).map(|j| 0.01 * (j as f64 - 4.5)).collect();
        let m = linear_model(&w, 0.5, Activation::Identity);
        let x = Array1::from_elem(10, 0.5);
        let attr: Vec<f64> = w.iter().map(|v| v * 0.5).collect();
        let cfg = FaithfulnessConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0.0;
        for _ in 0..100 {
            let mut p = attr.clone();
            p.shuffle(&mut rng);
            total += faithfulness_estimate(&m, x.view(), Array1::from(p).view(), &cfg).unwrap().value;
        }
        assert!((total / 100.0).abs() <= 0.1);
    }

    #[test]
    fn constant_model_is_flagged() {
        let m = linear_model(&[0.0, 0.0, 0.0], 0.4, Activation::Identity);
        let cfg = FaithfulnessConfig { subset_size: 1, ..Default::default() };
        let e = faithfulness_estimate(&m, array![0.1, 0.2, 0.3].view(), array![1.0, 2.0, 3.0].view(), &cfg).unwrap();
        assert!(e.undefined && e.value == 0.0);
        let c = faithfulness_correlation(&m, array![0.1, 0.2, 0.3].view(), array![1.0, 2.0, 3.0].view(), &cfg, 0).unwrap();
        assert!(c.undefined);
    }

    #[test]
    fn sufficiency_cases() {
        let rows = |n| (0..n).collect::<Vec<usize>>();
        let same = Array2::from_elem((5, 3), 0.2);
        assert_eq!(sufficiency_rows(same.view(), &[1; 5], &rows(5), 0.1).unwrap().value, 1.0);

        let clusters = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert_eq!(sufficiency_rows(clusters.view(), &[1, 1, 0, 0], &rows(4), 0.1).unwrap().value, 1.0);

        let pair = array![[0.3, -0.2], [0.3, -0.2]];
        assert_eq!(sufficiency_rows(pair.view(), &[1, 0], &rows(2), 0.1).unwrap().value, 0.5);

        let apart = array![[1.0, 0.0], [0.0, 1.0]];
        let v = sufficiency_rows(apart.view(), &[1, 0], &rows(2), 0.1).unwrap();
        assert!(v.undefined);
    }

    #[test]
    fn validation() {
        let (m, x, attr) = linear_case();
        let bad = FaithfulnessConfig { subset_size: 6, ..Default::default() };
        assert!(faithfulness_correlation(&m, x.view(), attr.view(), &bad, 0).is_err());
        let bad = FaithfulnessConfig { iterations: 1, ..Default::default() };
        assert!(faithfulness_correlation(&m, x.view(), attr.view(), &bad, 0).is_err());
    }
}
