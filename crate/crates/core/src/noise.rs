//! Post-hoc perturbation of explanation matrices with Laplace or Gaussian noise.
//!
//! Random calibration draws plain floating-point noise. DP calibration rounds
//! each value to a power-of-two grid and adds discrete Laplace or discrete
//! Gaussian noise on that grid, which avoids the floating-point leakage of
//! textbook samplers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationMatrix;
use crate::seed::{derive_seed, derive_seed_str};

/// Bits of resolution between the noise scale and the sampling grid.
const GRID_BITS: i32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Random,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub calibration: Calibration,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_range")]
    pub random_scale_range: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-6
}
fn default_range() -> (f64, f64) {
    (0.5, 1.5)
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, calibration: Calibration, seed: u64) -> Self {
        Self {
            family,
            calibration,
            epsilon: default_epsilon(),
            delta: default_delta(),
            random_scale_range: default_range(),
            seed,
        }
    }

    /// Variant label such as `dp-gaussian`.
    pub fn label(&self) -> String {
        let c = match self.calibration {
            Calibration::Random => "random",
            Calibration::Dp => "dp",
        };
        let f = match self.family {
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Gaussian => "gaussian",
        };
        format!("{c}-{f}")
    }

    pub fn validate(&self) -> Result<()> {
        match self.calibration {
            Calibration::Dp => {
                if !(self.epsilon > 0.0) {
                    return Err(Error::Config("epsilon must be positive".into()));
                }
                if self.family == NoiseFamily::Gaussian && !(self.delta > 0.0 && self.delta < 1.0) {
                    return Err(Error::Config("delta must lie in (0, 1)".into()));
                }
            }
            Calibration::Random => {
                let (lo, hi) = self.random_scale_range;
                if !(lo > 0.0 && lo < hi) {
                    return Err(Error::Config("random scale range needs 0 < low < high".into()));
                }
            }
        }
        Ok(())
    }
}

/// Parses labels like `dp-laplace` or `random-gaussian`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (c, f) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("noise variant `{s}` is not <calibration>-<family>")))?;
        let calibration = match c {
            "dp" => Calibration::Dp,
            "random" => Calibration::Random,
            _ => return Err(Error::Config(format!("unknown calibration `{c}`"))),
        };
        let family = match f {
            "laplace" => NoiseFamily::Laplace,
            "gaussian" => NoiseFamily::Gaussian,
            _ => return Err(Error::Config(format!("unknown noise family `{f}`"))),
        };
        Ok(Self::new(family, calibration, 0))
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Per-column sensitivity: observed max − min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub ranges: Vec<f64>,
}

pub fn estimate_sensitivity(expl: &ExplanationMatrix) -> SensitivityProfile {
    estimate_sensitivity_values(&expl.values)
}

pub fn estimate_sensitivity_values(values: &Array2<f64>) -> SensitivityProfile {
    let ranges = values
        .axis_iter(Axis(1))
        .map(|c| {
            let (lo, hi) = c
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi >= lo {
                hi - lo
            } else {
                0.0
            }
        })
        .collect();
    SensitivityProfile { ranges }
}

/// What was done to a matrix; stored in its sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub spec: NoiseSpec,
    pub sensitivity: Vec<f64>,
    /// Laplace scale b or Gaussian standard deviation per column.
    pub scales: Vec<f64>,
    /// Sensitivity is the observed range of the released matrix, not a worst-case bound.
    pub empirical_sensitivity: bool,
    pub seconds: f64,
    pub ms_per_record: f64,
}

/// Per-column scale b (Laplace) or σ (Gaussian).
pub fn noise_scales(spec: &NoiseSpec, sensitivity: &SensitivityProfile) -> Vec<f64> {
    match spec.calibration {
        Calibration::Dp => {
            let factor = match spec.family {
                NoiseFamily::Laplace => 1.0,
                NoiseFamily::Gaussian => (2.0 * (1.25 / spec.delta).ln()).sqrt(),
            };
            sensitivity.ranges.iter().map(|d| d * factor / spec.epsilon).collect()
        }
        Calibration::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(spec.seed, "scales"));
            let (lo, hi) = spec.random_scale_range;
            sensitivity
                .ranges
                .iter()
                .map(|d| rng.random_range(lo..hi) * d)
                .collect()
        }
    }
}

/// Adds independent noise to every cell. Shape, record ids and column order
/// are unchanged; the applied scales are recorded in the sidecar.
pub fn perturb(expl: &ExplanationMatrix, spec: &NoiseSpec) -> Result<ExplanationMatrix> {
    spec.validate()?;
    if expl.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let sensitivity = estimate_sensitivity(expl);
    let scales = noise_scales(spec, &sensitivity);
    let d = expl.n_features();
    let rows: Vec<Vec<f64>> = (0..expl.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, expl.record_ids[i]));
            expl.values
                .row(i)
                .iter()
                .zip(&scales)
                .map(|(&v, &s)| add_noise(v, s, spec, &mut rng))
                .collect()
        })
        .collect();
    let values = Array2::from_shape_vec((rows.len(), d), rows.into_iter().flatten().collect())
        .expect("rows have d columns");
    let seconds = start.elapsed().as_secs_f64();
    let mut meta = expl.meta.clone();
    meta.perturbation = Some(NoiseRecord {
        spec: spec.clone(),
        sensitivity: sensitivity.ranges,
        scales,
        empirical_sensitivity: true,
        seconds,
        ms_per_record: 1e3 * seconds / expl.len() as f64,
    });
    Ok(ExplanationMatrix {
        meta,
        record_ids: expl.record_ids.clone(),
        values,
    })
}

fn add_noise(v: f64, scale: f64, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> f64 {
    if scale == 0.0 {
        return v;
    }
    match (spec.calibration, spec.family) {
        (Calibration::Random, NoiseFamily::Laplace) => v + float_laplace(scale, rng),
        (Calibration::Random, NoiseFamily::Gaussian) => v + scale * rng.sample::<f64, _>(StandardNormal),
        (Calibration::Dp, NoiseFamily::Laplace) => secure_laplace(v, scale, rng),
        (Calibration::Dp, NoiseFamily::Gaussian) => secure_gaussian(v, scale, rng),
    }
}

/// Laplace(0, b) as a random sign times an exponential.
pub fn float_laplace(b: f64, rng: &mut impl Rng) -> f64 {
    let e: f64 = rng.sample(Exp1);
    if rng.random::<bool>() {
        b * e
    } else {
        -b * e
    }
}

/// Power-of-two grid spacing with `GRID_BITS` bits of resolution below `scale`.
pub fn granularity(scale: f64) -> f64 {
    2f64.powi(scale.log2().ceil() as i32 - GRID_BITS)
}

/// Geometric on {0, 1, …} with P(k) ∝ exp(−λk), sampled by binary search so
/// that each step needs only one uniform draw and no logarithm.
pub fn sample_geometric(lambda: f64, rng: &mut impl Rng) -> i64 {
    let (mut lo, mut hi): (i64, i64) = (-1, i64::MAX / 2);
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        // P(X <= mid | lo < X <= hi)
        let num = (-lambda * (mid - lo) as f64).exp_m1();
        let den = (-lambda * (hi - lo) as f64).exp_m1();
        let q = if den == 0.0 { (mid - lo) as f64 / (hi - lo) as f64 } else { num / den };
        if rng.random::<f64>() < q {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Discrete Laplace on the integers: P(k) ∝ exp(−λ|k|).
pub fn sample_discrete_laplace(lambda: f64, rng: &mut impl Rng) -> i64 {
    loop {
        let negative = rng.random::<bool>();
        let m = sample_geometric(lambda, rng);
        if negative && m == 0 {
            continue;
        }
        return if negative { -m } else { m };
    }
}

/// Discrete Gaussian on the integers with parameter σ, by rejection from a
/// discrete Laplace with scale ⌊σ⌋ + 1.
pub fn sample_discrete_gaussian(sigma: f64, rng: &mut impl Rng) -> i64 {
    let t = sigma.floor() + 1.0;
    loop {
        let y = sample_discrete_laplace(1.0 / t, rng);
        let a = (y as f64).abs() - sigma * sigma / t;
        if rng.random::<f64>() < (-a * a / (2.0 * sigma * sigma)).exp() {
            return y;
        }
    }
}

/// `v` rounded to the grid plus discrete Laplace noise of scale `b`.
pub fn secure_laplace(v: f64, b: f64, rng: &mut impl Rng) -> f64 {
    let g = granularity(b);
    let k = sample_discrete_laplace(g / b, rng);
    (v / g).round() * g + k as f64 * g
}

/// `v` rounded to the grid plus discrete Gaussian noise of std `sigma`.
pub fn secure_gaussian(v: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    let g = granularity(sigma);
    let k = sample_discrete_gaussian(sigma / g, rng);
    (v / g).round() * g + k as f64 * g
}
