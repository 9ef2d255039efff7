//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order grid: fine fractional orders near 1, every integer up to 64, then a
/// geometric tail so that small ε targets at δ = 1e-6 remain expressible.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.5];
    orders.extend((3..=64).map(f64::from));
    orders.extend(
        [
            80, 96, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024, 1536, 2048, 3072, 4096,
            6144, 8192, 12288, 16384,
        ]
        .map(f64::from),
    );
    orders
}

/// Privacy spent by one training run. `epsilon` is `None` when no finite
/// guarantee exists (noise multiplier 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpent {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub steps: u64,
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    /// RDP order at which the bound was attained.
    pub order: Option<f64>,
}

impl PrivacySpent {
    pub fn is_private(&self) -> bool {
        self.epsilon.is_some()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    // log(exp(a) - exp(b)), a >= b
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// log(expm1(c)) for c > 0.
fn log_expm1(c: f64) -> f64 {
    if c > 30.0 {
        c + (-(-c).exp()).ln_1p()
    } else {
        c.exp_m1().ln()
    }
}

/// log erfc(x), stable for large positive x.
fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        statrs::function::erf::erfc(x).ln()
    } else {
        let x2 = x * x;
        // asymptotic series
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
        -x2 - (x * std::f64::consts::PI.sqrt()).ln() + series.ln()
    }
}

/// log(A_α − 1) for integer α, where A_α = Σ_i C(α,i) q^i (1−q)^(α−i) exp((i²−i)/(2σ²)).
/// Uses Σ pmf = 1 so that only the excess is summed, which keeps tiny RDP
/// values exact to relative precision.
fn log_excess_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let lq = q.ln();
    let l1q = (-q).ln_1p();
    let a = alpha as f64;
    let mut log_binom = 0.0; // log C(α, 0)
    let mut acc = f64::NEG_INFINITY;
    for i in 1..=alpha {
        let fi = i as f64;
        log_binom += (a - fi + 1.0).ln() - fi.ln();
        if i < 2 {
            continue;
        }
        let c = (fi * fi - fi) / (2.0 * sigma * sigma);
        let term = log_binom + fi * lq + (a - fi) * l1q + log_expm1(c);
        acc = log_add(acc, term);
    }
    acc
}

/// log A_α for fractional α via the two-sided erfc series.
fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (mut log_a0, mut log_a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let mut coef = 1.0_f64; // binom(alpha, i), sign included
    let mut i = 0u32;
    loop {
        let fi = f64::from(i);
        let log_coef = coef.abs().ln();
        let j = alpha - fi;
        let log_t0 = log_coef + fi * q.ln() + j * (-q).ln_1p();
        let log_t1 = log_coef + j * q.ln() + fi * (-q).ln_1p();
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / (std::f64::consts::SQRT_2 * sigma));
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / (std::f64::consts::SQRT_2 * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        i += 1;
        if log_s0.max(log_s1) < -30.0 || i > 10_000 {
            break;
        }
        coef *= (alpha - fi) / (fi + 1.0);
    }
    log_add(log_a0, log_a1)
}

/// Per-step RDP at order `alpha` of the Gaussian mechanism with noise
/// multiplier `sigma`, applied to a Poisson sample with rate `q`.
pub fn rdp_sampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    if !sigma.is_finite() {
        return 0.0;
    }
    if alpha.fract() == 0.0 {
        let excess = log_excess_int(q, sigma, alpha as u64);
        excess.exp().ln_1p() / (alpha - 1.0)
    } else {
        log_a_frac(q, sigma, alpha) / (alpha - 1.0)
    }
}

/// ε from accumulated RDP via ε = RDP(α) + ln(1/δ)/(α − 1), minimized over
/// the grid. Returns (ε, α*).
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[f64], delta: f64) -> Option<(f64, f64)> {
    orders
        .iter()
        .zip(rdp)
        .filter(|(&a, r)| a > 1.0 && r.is_finite())
        .map(|(&a, &r)| ((r + (1.0 / delta).ln() / (a - 1.0)).max(0.0), a))
        .filter(|(e, _)| e.is_finite())
        .min_by(|x, y| x.0.total_cmp(&y.0))
}

fn check_args(sampling_rate: f64, delta: f64) -> Result<()> {
    if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
        return Err(Error::Config(format!(
            "sampling rate must lie in (0, 1], got {sampling_rate}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Full accounting result for `steps` applications of the subsampled Gaussian.
pub fn privacy_spent(
    steps: u64,
    sampling_rate: f64,
    noise_multiplier: f64,
    delta: f64,
) -> Result<PrivacySpent> {
    check_args(sampling_rate, delta)?;
    if noise_multiplier < 0.0 {
        return Err(Error::Config("noise multiplier must be non-negative".into()));
    }
    let mut spent = PrivacySpent {
        epsilon: None,
        delta,
        steps,
        sampling_rate,
        noise_multiplier,
        order: None,
    };
    if steps == 0 {
        spent.epsilon = Some(0.0);
        return Ok(spent);
    }
    if noise_multiplier == 0.0 {
        return Ok(spent);
    }
    let orders = default_orders();
    let rdp: Vec<f64> = orders
        .iter()
        .map(|&a| steps as f64 * rdp_sampled_gaussian(sampling_rate, noise_multiplier, a))
        .collect();
    let (eps, order) = rdp_to_epsilon(&orders, &rdp, delta).ok_or(Error::NoFiniteEpsilon)?;
    spent.epsilon = Some(eps);
    spent.order = Some(order);
    Ok(spent)
}

/// ε after `steps` steps; errors when no order gives a finite bound.
pub fn compute_epsilon(steps: u64, sampling_rate: f64, noise_multiplier: f64, delta: f64) -> Result<f64> {
    if noise_multiplier <= 0.0 && steps > 0 {
        return Err(Error::NoFiniteEpsilon);
    }
    privacy_spent(steps, sampling_rate, noise_multiplier, delta)?
        .epsilon
        .ok_or(Error::NoFiniteEpsilon)
}

/// Relative tolerance of [`calibrate_noise`].
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

/// Smallest-effort search for a noise multiplier whose ε lies within 5% of
/// `target_epsilon`; bisection on log(σ) over [1e-2, 1e5].
pub fn calibrate_noise(target_epsilon: f64, steps: u64, sampling_rate: f64, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(Error::Config("target epsilon must be positive".into()));
    }
    check_args(sampling_rate, delta)?;
    let (low, high) = (1e-2_f64, 1e5_f64);
    let eps = |s: f64| compute_epsilon(steps, sampling_rate, s, delta).unwrap_or(f64::INFINITY);
    let close = |e: f64| (e - target_epsilon).abs() / target_epsilon <= CALIBRATION_TOLERANCE;
    let unreachable = Error::Unreachable {
        target: target_epsilon,
        low,
        high,
    };
    let e_high = eps(high);
    if close(e_high) {
        return Ok(high);
    }
    if e_high > target_epsilon {
        return Err(unreachable);
    }
    let e_low = eps(low);
    if close(e_low) {
        return Ok(low);
    }
    if e_low < target_epsilon {
        return Err(unreachable);
    }
    // ε decreases in σ: keep eps(lo) > target > eps(hi)
    let (mut lo, mut hi) = (low.ln(), high.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid.exp());
        if close(e) {
            return Ok(mid.exp());
        }
        if e > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(unreachable)
}
