//! One-dimensional Wasserstein-1 distances and log–log rate fits.

use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad;
use crate::rng;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal quantile: Acklam's rational approximation polished by
/// one Halley step.
#[allow(clippy::excessive_precision)]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = norm_cdf(x) - p;
    let u = e / norm_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// ∫_{−∞}^{z} Φ, standardized.
fn lower_primitive(z: f64) -> f64 {
    z * norm_cdf(z) + norm_pdf(z)
}

/// ∫_{z}^{∞} (1 − Φ), standardized.
fn upper_primitive(z: f64) -> f64 {
    norm_pdf(z) - z * norm_cdf(-z)
}

/// ∫_a^b Φ for standardized a ≤ b, using whichever primitive is accurate.
fn cdf_integral(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        lower_primitive(b) - lower_primitive(a)
    } else {
        (b - a) - (upper_primitive(a) - upper_primitive(b))
    }
}

/// ∫_a^b |c − Φ| for standardized a ≤ b.
fn level_gap(c: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let below = |x: f64, y: f64| c * (y - x) - cdf_integral(x, y);
    let above = |x: f64, y: f64| cdf_integral(x, y) - c * (y - x);
    if c <= 0.0 {
        return cdf_integral(a, b);
    }
    if c >= 1.0 {
        return (b - a) - cdf_integral(a, b);
    }
    let x = norm_quantile(c);
    if x <= a {
        above(a, b).max(0.0)
    } else if x >= b {
        below(a, b).max(0.0)
    } else {
        below(a, x).max(0.0) + above(x, b).max(0.0)
    }
}

/// ∫ |F_n(x) − Φ(x/σ)| dx for the empirical CDF F_n of `sample`.
pub fn w1_to_gaussian(sample: &[f64], sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let sigma = sigma2.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| x / sigma).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sample contains non-finite values".into()));
    }
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let mut total = lower_primitive(z[0]) + upper_primitive(z[n - 1]);
    for k in 1..n {
        total += level_gap(k as f64 / n as f64, z[k - 1], z[k]);
    }
    Ok(sigma * total)
}

/// W₁ between two empirical distributions (exact, via quantile functions).
pub fn w1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    if x.len() == y.len() {
        return Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64);
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < x.len() && j < y.len() {
        let next_i = (i + 1) as f64 / n;
        let next_j = (j + 1) as f64 / m;
        let next = next_i.min(next_j);
        total += (next - u) * (x[i] - y[j]).abs();
        u = next;
        if next_i <= next {
            i += 1;
        }
        if next_j <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Bootstrap standard deviation of the plug-in distance.
pub fn bootstrap_se(sample: &[f64], sigma2: f64, resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 2 {
        return Err(Error::InvalidArgument("need at least two bootstrap resamples".into()));
    }
    let n = sample.len();
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut s = rng::stream(rng::keyed(rng::domain::BOOTSTRAP, seed, r as u64, n as u64));
            let re: Vec<f64> = (0..n).map(|_| sample[s.random_range(0..n)]).collect();
            w1_to_gaussian(&re, sigma2)
        })
        .collect::<Result<_>>()?;
    let mean = stats.iter().sum::<f64>() / resamples as f64;
    let var = stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

/// Approximate mean of the plug-in distance for n draws from the target
/// itself: σ·√(2/(πn))·∫√(Φ(1−Φ)).
pub fn bias_floor(n: usize, sigma2: f64) -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    let c = *C.get_or_init(|| quad::integrate(|z| (norm_cdf(z) * norm_cdf(-z)).sqrt(), -12.0, 12.0, 1e-12).unwrap_or(1.128));
    sigma2.sqrt() * (2.0 / (std::f64::consts::PI * n as f64)).sqrt() * c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub dw: f64,
    pub se: f64,
    pub n: usize,
    /// Expected distance of a sample of the same size drawn from the target.
    pub floor: f64,
}

pub fn estimate_distance(sample: &[f64], sigma2: f64, resamples: usize, seed: u64) -> Result<DistanceEstimate> {
    Ok(DistanceEstimate {
        dw: w1_to_gaussian(sample, sigma2)?,
        se: bootstrap_se(sample, sigma2, resamples, seed)?,
        n: sample.len(),
        floor: bias_floor(sample.len(), sigma2),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub horizon: f64,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub slope_se: f64,
    /// log C in d ≈ C·T^slope.
    pub intercept: f64,
}

/// Weighted least squares of log d on log T, weights (d/se)². Falls back
/// to ordinary least squares when any standard error is zero.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.estimate > 0.0) || !(p.horizon > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive point ({}, {})", p.horizon, p.estimate)));
    }
    let weighted = points.iter().all(|p| p.se > 0.0);
    let xs: Vec<f64> = points.iter().map(|p| p.horizon.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.estimate.ln()).collect();
    let ws: Vec<f64> = points.iter().map(|p| if weighted { (p.estimate / p.se).powi(2) } else { 1.0 }).collect();
    let sw: f64 = ws.iter().sum();
    let xm = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - xm) * (y - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("horizons must not all be equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let slope_se = if weighted {
        (1.0 / sxx).sqrt()
    } else {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (points.len() - 2) as f64 / sxx).sqrt()
    };
    Ok(RateFit { points: points.to_vec(), slope, slope_se, intercept })
}
