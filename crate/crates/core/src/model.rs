//! Kernels, link functions, time profiles and the Hawkes model variants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Excitation kernel φ on ℝ₊.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// scale · rate · e^{−rate t}
    Exponential { scale: f64, rate: f64 },
    /// scale · tail · delta^tail / (t + delta)^{1+tail}
    PowerLaw { scale: f64, delta: f64, tail: f64 },
    /// scale · (power+1)/support · (1 − t/support)^power on [0, support)
    CompactPolynomial { scale: f64, support: f64, power: f64 },
    /// Piecewise linear through `values[k]` at `k·step`, zero after the last node.
    Tabulated { step: f64, values: Vec<f64> },
}

impl Kernel {
    pub fn exponential(scale: f64, rate: f64) -> Self {
        Kernel::Exponential { scale, rate }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Kernel::Exponential { .. } => "exponential",
            Kernel::PowerLaw { .. } => "power_law",
            Kernel::CompactPolynomial { .. } => "compact_polynomial",
            Kernel::Tabulated { .. } => "tabulated",
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Kernel::Exponential { scale, rate } => scale * rate * (-rate * t).exp(),
            Kernel::PowerLaw { scale, delta, tail } => scale * tail * delta.powf(tail) / (t + delta).powf(1.0 + tail),
            Kernel::CompactPolynomial { scale, support, power } => {
                if t >= support {
                    0.0
                } else {
                    scale * (power + 1.0) / support * (1.0 - t / support).powf(power)
                }
            }
            Kernel::Tabulated { step, ref values } => tab_eval(step, values, t),
        }
    }

    /// ‖φ‖₁.
    pub fn l1_norm(&self) -> f64 {
        match *self {
            Kernel::Exponential { scale, .. } | Kernel::PowerLaw { scale, .. } | Kernel::CompactPolynomial { scale, .. } => {
                scale.abs()
            }
            Kernel::Tabulated { step, ref values } => tab_moments(step, values, f64::INFINITY).0,
        }
    }

    /// ∫ t|φ(t)| dt; infinite for power laws with tail ≤ 1.
    pub fn first_moment(&self) -> f64 {
        match *self {
            Kernel::Exponential { scale, rate } => scale.abs() / rate,
            Kernel::PowerLaw { scale, delta, tail } => {
                if tail > 1.0 {
                    scale.abs() * delta / (tail - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Kernel::CompactPolynomial { scale, support, power } => scale.abs() * support / (power + 2.0),
            Kernel::Tabulated { step, ref values } => tab_moments(step, values, f64::INFINITY).1,
        }
    }

    /// ∫_b^∞ |φ|.
    pub fn tail_mass(&self, b: f64) -> f64 {
        let b = b.max(0.0);
        match *self {
            Kernel::Exponential { scale, rate } => scale.abs() * (-rate * b).exp(),
            Kernel::PowerLaw { scale, delta, tail } => scale.abs() * (delta / (b + delta)).powf(tail),
            Kernel::CompactPolynomial { scale, support, power } => {
                if b >= support {
                    0.0
                } else {
                    scale.abs() * (1.0 - b / support).powf(power + 1.0)
                }
            }
            Kernel::Tabulated { step, ref values } => {
                (tab_moments(step, values, f64::INFINITY).0 - tab_moments(step, values, b).0).max(0.0)
            }
        }
    }

    /// Smallest B with ∫_B^∞|φ| ≤ eps / lipschitz.
    pub fn burn_in_for(&self, lipschitz: f64, eps: f64) -> f64 {
        let target = eps / lipschitz.max(f64::MIN_POSITIVE);
        match *self {
            Kernel::Exponential { scale, rate } => ((scale.abs() / target).ln() / rate).max(0.0),
            Kernel::PowerLaw { scale, delta, tail } => (delta * ((scale.abs() / target).powf(1.0 / tail) - 1.0)).max(0.0),
            _ => {
                if let Some(s) = self.support() {
                    return s;
                }
                let mut b = 1.0;
                while self.tail_mass(b) > target {
                    b *= 2.0;
                }
                b
            }
        }
    }

    pub fn support(&self) -> Option<f64> {
        match *self {
            Kernel::CompactPolynomial { support, .. } => Some(support),
            Kernel::Tabulated { step, ref values } => Some(step * (values.len().max(1) - 1) as f64),
            _ => None,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        match *self {
            Kernel::Exponential { scale, .. } | Kernel::PowerLaw { scale, .. } | Kernel::CompactPolynomial { scale, .. } => {
                scale >= 0.0
            }
            Kernel::Tabulated { ref values, .. } => values.iter().all(|v| *v >= 0.0),
        }
    }

    /// (amplitude, rate) when φ(t) = amplitude·e^{−rate t}.
    pub fn markov(&self) -> Option<(f64, f64)> {
        match *self {
            Kernel::Exponential { scale, rate } => Some((scale * rate, rate)),
            _ => None,
        }
    }

    /// Exact (min, max) of φ over [x, y], 0 ≤ x ≤ y.
    pub fn range_on(&self, x: f64, y: f64) -> (f64, f64) {
        let x = x.max(0.0);
        let y = y.max(x);
        match *self {
            Kernel::Tabulated { step, ref values } => {
                let mut lo = self.eval(x).min(self.eval(y));
                let mut hi = self.eval(x).max(self.eval(y));
                let last = step * (values.len() - 1) as f64;
                let k0 = (x / step).ceil() as usize;
                let mut k = k0;
                while k < values.len() && k as f64 * step <= y {
                    lo = lo.min(values[k]);
                    hi = hi.max(values[k]);
                    k += 1;
                }
                if y >= last {
                    lo = lo.min(0.0);
                    hi = hi.max(0.0);
                }
                (lo, hi)
            }
            _ => {
                let (a, b) = (self.eval(x), self.eval(y));
                (a.min(b), a.max(b))
            }
        }
    }

    fn check(&self, out: &mut Vec<Violation>) {
        let bad = |out: &mut Vec<Violation>, what: &str, v: f64| {
            out.push(Violation::new("kernel parameter", v, format!("kernel {what} must be positive and finite, got {v}")))
        };
        match *self {
            Kernel::Exponential { scale, rate } => {
                if !scale.is_finite() {
                    bad(out, "scale", scale);
                }
                if !(rate > 0.0 && rate.is_finite()) {
                    bad(out, "rate", rate);
                }
            }
            Kernel::PowerLaw { scale, delta, tail } => {
                if !scale.is_finite() {
                    bad(out, "scale", scale);
                }
                if !(delta > 0.0 && delta.is_finite()) {
                    bad(out, "delta", delta);
                }
                if !(tail > 0.0 && tail.is_finite()) {
                    bad(out, "tail", tail);
                }
            }
            Kernel::CompactPolynomial { scale, support, power } => {
                if !scale.is_finite() {
                    bad(out, "scale", scale);
                }
                if !(support > 0.0 && support.is_finite()) {
                    bad(out, "support", support);
                }
                if !(power >= 0.0 && power.is_finite()) {
                    out.push(Violation::new("kernel parameter", power, format!("kernel power must be >= 0, got {power}")));
                }
            }
            Kernel::Tabulated { step, ref values } => {
                if !(step > 0.0 && step.is_finite()) {
                    bad(out, "step", step);
                }
                if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
                    out.push(Violation::new(
                        "kernel parameter",
                        values.len() as f64,
                        "tabulated kernel needs at least two finite values".into(),
                    ));
                }
            }
        }
        let m = self.first_moment();
        if !m.is_finite() {
            out.push(Violation::new("∫t|φ|", m, format!("first moment ∫t|φ(t)|dt = {m} is not finite")));
        }
    }
}

fn tab_eval(step: f64, values: &[f64], t: f64) -> f64 {
    let x = t / step;
    let k = x.floor() as usize;
    if k + 1 >= values.len() {
        return if k + 1 == values.len() && x == k as f64 { values[k] } else { 0.0 };
    }
    let w = x - k as f64;
    values[k] * (1.0 - w) + values[k + 1] * w
}

// (∫₀^upto |f|, ∫₀^upto t|f|) for the piecewise-linear table, exact.
fn tab_moments(step: f64, values: &[f64], upto: f64) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut m1 = 0.0;
    for k in 0..values.len().saturating_sub(1) {
        let a = k as f64 * step;
        if a >= upto {
            break;
        }
        let b = ((k + 1) as f64 * step).min(upto);
        let fa = values[k];
        let fb = if b == (k + 1) as f64 * step { values[k + 1] } else { tab_eval(step, values, b) };
        let (x, y) = linear_abs_moments(a, b, fa, fb);
        l1 += x;
        m1 += y;
    }
    (l1, m1)
}

fn linear_abs_moments(a: f64, b: f64, fa: f64, fb: f64) -> (f64, f64) {
    if fa * fb < 0.0 {
        let r = a + (b - a) * fa / (fa - fb);
        let (x1, y1) = linear_abs_moments(a, r, fa, 0.0);
        let (x2, y2) = linear_abs_moments(r, b, 0.0, fb);
        return (x1 + x2, y1 + y2);
    }
    let h = b - a;
    let l1 = 0.5 * (fa + fb) * h;
    let m1 = h * (fa * (2.0 * a + b) + fb * (a + 2.0 * b)) / 6.0;
    (l1.abs(), m1.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
    None,
}

/// Link function h: ℝ → ℝ₊.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Link {
    Identity,
    PositivePart,
    /// max(floor, intercept + slope·x)
    AffineClipped {
        intercept: f64,
        slope: f64,
        floor: f64,
    },
    /// level / (1 + e^{−x})
    Sigmoid {
        level: f64,
    },
    /// Piecewise linear through `values[k]` at `origin + k·step`, constant outside.
    Tabulated {
        origin: f64,
        step: f64,
        values: Vec<f64>,
    },
}

impl Link {
    pub fn family(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::PositivePart => "positive_part",
            Link::AffineClipped { .. } => "affine_clipped",
            Link::Sigmoid { .. } => "sigmoid",
            Link::Tabulated { .. } => "tabulated",
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Link::Identity => x,
            Link::PositivePart => x.max(0.0),
            Link::AffineClipped { intercept, slope, floor } => (intercept + slope * x).max(floor),
            Link::Sigmoid { level } => level / (1.0 + (-x).exp()),
            Link::Tabulated { origin, step, ref values } => {
                let u = (x - origin) / step;
                if u <= 0.0 {
                    return values[0];
                }
                let k = u.floor() as usize;
                if k + 1 >= values.len() {
                    return values[values.len() - 1];
                }
                let w = u - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    /// Lipschitz constant α.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Link::Identity | Link::PositivePart => 1.0,
            Link::AffineClipped { slope, .. } => slope.abs(),
            Link::Sigmoid { level } => level.abs() / 4.0,
            Link::Tabulated { step, ref values, .. } => values.windows(2).map(|w| (w[1] - w[0]).abs() / step).fold(0.0, f64::max),
        }
    }

    pub fn monotonicity(&self) -> Monotonicity {
        match *self {
            Link::Identity | Link::PositivePart => Monotonicity::NonDecreasing,
            Link::AffineClipped { slope, .. } => {
                if slope >= 0.0 {
                    Monotonicity::NonDecreasing
                } else {
                    Monotonicity::NonIncreasing
                }
            }
            Link::Sigmoid { level } => {
                if level >= 0.0 {
                    Monotonicity::NonDecreasing
                } else {
                    Monotonicity::NonIncreasing
                }
            }
            Link::Tabulated { ref values, .. } => {
                if values.windows(2).all(|w| w[1] >= w[0]) {
                    Monotonicity::NonDecreasing
                } else if values.windows(2).all(|w| w[1] <= w[0]) {
                    Monotonicity::NonIncreasing
                } else {
                    Monotonicity::None
                }
            }
        }
    }

    /// Exact sup of h over [lo, hi].
    pub fn sup_on(&self, lo: f64, hi: f64) -> f64 {
        let ends = self.eval(lo).max(self.eval(hi));
        match *self {
            Link::Tabulated { origin, step, ref values } if self.monotonicity() == Monotonicity::None => {
                let mut m = ends;
                for (k, v) in values.iter().enumerate() {
                    let x = origin + k as f64 * step;
                    if x > lo && x < hi {
                        m = m.max(*v);
                    }
                }
                m
            }
            _ => ends,
        }
    }

    /// Exact inf of h over [lo, hi].
    pub fn inf_on(&self, lo: f64, hi: f64) -> f64 {
        let ends = self.eval(lo).min(self.eval(hi));
        match *self {
            Link::Tabulated { origin, step, ref values } if self.monotonicity() == Monotonicity::None => {
                let mut m = ends;
                for (k, v) in values.iter().enumerate() {
                    let x = origin + k as f64 * step;
                    if x > lo && x < hi {
                        m = m.min(*v);
                    }
                }
                m
            }
            _ => ends,
        }
    }

    fn check(&self, out: &mut Vec<Violation>) {
        match *self {
            Link::AffineClipped { intercept, slope, floor } => {
                if !(intercept.is_finite() && slope.is_finite() && floor.is_finite()) || floor < 0.0 {
                    out.push(Violation::new(
                        "link parameter",
                        floor,
                        "affine-clipped link needs finite parameters and floor >= 0".into(),
                    ));
                }
            }
            Link::Sigmoid { level } => {
                if !(level >= 0.0 && level.is_finite()) {
                    out.push(Violation::new("link parameter", level, format!("sigmoid level must be >= 0, got {level}")));
                }
            }
            Link::Tabulated { step, ref values, origin } => {
                if !(step > 0.0 && step.is_finite() && origin.is_finite()) || values.len() < 2 {
                    out.push(Violation::new("link parameter", step, "tabulated link needs step > 0 and two values".into()));
                    return;
                }
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    out.push(Violation::new("h ≥ 0", *v, format!("tabulated link takes the value {v} < 0")));
                }
            }
            _ => {}
        }
        // grid check of positivity and the declared Lipschitz constant
        if self.family() == "identity" {
            return;
        }
        let alpha = self.lipschitz();
        let mut prev: Option<(f64, f64)> = None;
        for k in -400..=400 {
            let x = k as f64 * 0.05;
            let h = self.eval(x);
            if h < 0.0 || !h.is_finite() {
                out.push(Violation::new("h ≥ 0", h, format!("h({x}) = {h} < 0")));
                return;
            }
            if let Some((px, ph)) = prev {
                if (h - ph).abs() > alpha * (x - px) * (1.0 + 1e-9) + 1e-12 {
                    out.push(Violation::new(
                        "Lipschitz",
                        (h - ph).abs() / (x - px),
                        format!("link is not {alpha}-Lipschitz near x = {x}"),
                    ));
                    return;
                }
            }
            prev = Some((x, h));
        }
    }
}

/// A function on [0, 1] used for μ(·) and γ(·).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// Linear from `at_zero` to `at_one`.
    Affine {
        at_zero: f64,
        at_one: f64,
    },
    /// Piecewise linear through equally spaced nodes on [0, 1].
    Tabulated {
        values: Vec<f64>,
    },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match *self {
            Profile::Constant { value } => value,
            Profile::Affine { at_zero, at_one } => at_zero + (at_one - at_zero) * x,
            Profile::Tabulated { ref values } => {
                if values.len() == 1 {
                    return values[0];
                }
                let u = x * (values.len() - 1) as f64;
                let k = (u.floor() as usize).min(values.len() - 2);
                let w = u - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    /// Exact (min, max) over [x0, x1] ∩ [0, 1].
    pub fn range_on(&self, x0: f64, x1: f64) -> (f64, f64) {
        let (a, b) = (x0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0));
        let (fa, fb) = (self.eval(a), self.eval(b));
        let (mut lo, mut hi) = (fa.min(fb), fa.max(fb));
        if let Profile::Tabulated { values } = self {
            let n = values.len().saturating_sub(1).max(1) as f64;
            for (k, v) in values.iter().enumerate() {
                let x = k as f64 / n;
                if x > a && x < b {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
        }
        (lo, hi)
    }

    pub fn sup(&self) -> f64 {
        self.range_on(0.0, 1.0).1
    }

    pub fn inf(&self) -> f64 {
        self.range_on(0.0, 1.0).0
    }

    fn is_finite(&self) -> bool {
        match self {
            Profile::Constant { value } => value.is_finite(),
            Profile::Affine { at_zero, at_one } => at_zero.is_finite() && at_one.is_finite(),
            Profile::Tabulated { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        }
    }
}

/// Non-negative coefficient sequence α₁, α₂, … of the discrete model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscreteKernel {
    /// α_k = values[k−1]
    Finite { values: Vec<f64> },
    /// α_k = first · ratio^{k−1}, for k ≤ terms (all k when `terms` is absent).
    Geometric {
        first: f64,
        ratio: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        terms: Option<usize>,
    },
}

impl DiscreteKernel {
    pub fn coefficient(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match *self {
            DiscreteKernel::Finite { ref values } => values.get(k - 1).copied().unwrap_or(0.0),
            DiscreteKernel::Geometric { first, ratio, terms } => {
                if terms.is_some_and(|n| k > n) {
                    0.0
                } else {
                    first * ratio.powi(k as i32 - 1)
                }
            }
        }
    }

    /// |α| = Σα_k.
    pub fn mass(&self) -> f64 {
        match *self {
            DiscreteKernel::Finite { ref values } => values.iter().sum(),
            DiscreteKernel::Geometric { first, ratio, terms } => match terms {
                Some(n) => first * (1.0 - ratio.powi(n as i32)) / (1.0 - ratio),
                None => first / (1.0 - ratio),
            },
        }
    }

    /// Σ k α_k.
    pub fn first_moment(&self) -> f64 {
        match *self {
            DiscreteKernel::Finite { ref values } => values.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum(),
            DiscreteKernel::Geometric { first, ratio, terms } => {
                let d = (1.0 - ratio) * (1.0 - ratio);
                match terms {
                    Some(n) => {
                        let n_f = n as f64;
                        first * (1.0 - (n_f + 1.0) * ratio.powi(n as i32) + n_f * ratio.powi(n as i32 + 1)) / d
                    }
                    None => first / d,
                }
            }
        }
    }

    /// Number of non-zero lags, `None` for an infinite geometric tail.
    pub fn len(&self) -> Option<usize> {
        match *self {
            DiscreteKernel::Finite { ref values } => Some(values.len()),
            DiscreteKernel::Geometric { terms, .. } => terms,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    pub alpha0: f64,
    pub alphas: DiscreteKernel,
}

impl DiscreteSpec {
    /// ς² = α₀/(1−|α|).
    pub fn varsigma2(&self) -> f64 {
        self.alpha0 / (1.0 - self.alphas.mass())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// λ_t = h(μ + Σ_{t_i<t} φ(t − t_i)), no events before 0.
    EmptyHistory {
        mu: f64,
        kernel: Kernel,
        link: Link,
    },
    /// Same dynamics started at −burn_in as a proxy for the stationary process.
    Stationaryized {
        mu: f64,
        kernel: Kernel,
        link: Link,
        burn_in: f64,
    },
    /// λ_t = μ(t/T) + γ(t/T) Σ φ(t − t_i).
    LocallyStationary {
        mu_fn: Profile,
        gamma_fn: Profile,
        kernel: Kernel,
    },
    Discrete(DiscreteSpec),
    /// λ_t = μ + a_T Σ φ(t − t_i), a_T = 1 − 1/T, ‖φ‖₁ = 1.
    NearlyUnstable {
        mu: f64,
        kernel: Kernel,
        horizon: f64,
    },
}

impl ModelSpec {
    pub fn variant(&self) -> &'static str {
        match self {
            ModelSpec::EmptyHistory { .. } => "empty_history",
            ModelSpec::Stationaryized { .. } => "stationaryized",
            ModelSpec::LocallyStationary { .. } => "locally_stationary",
            ModelSpec::Discrete(_) => "discrete",
            ModelSpec::NearlyUnstable { .. } => "nearly_unstable",
        }
    }

    pub fn kernel(&self) -> Option<&Kernel> {
        match self {
            ModelSpec::EmptyHistory { kernel, .. }
            | ModelSpec::Stationaryized { kernel, .. }
            | ModelSpec::LocallyStationary { kernel, .. }
            | ModelSpec::NearlyUnstable { kernel, .. } => Some(kernel),
            ModelSpec::Discrete(_) => None,
        }
    }

    /// Intensity is h(μ + Σφ) with identity link and φ ≥ 0 (or the affine
    /// analogue that never clips), so E[λ] solves a linear renewal equation.
    pub fn is_linear(&self) -> bool {
        match self {
            ModelSpec::EmptyHistory { mu, kernel, link } | ModelSpec::Stationaryized { mu, kernel, link, .. } => {
                linear_mean(*mu, kernel, link).is_some()
            }
            ModelSpec::LocallyStationary { .. } | ModelSpec::NearlyUnstable { .. } => true,
            ModelSpec::Discrete(_) => true,
        }
    }

    /// a_T for the nearly unstable variant.
    pub fn a_t(&self) -> Option<f64> {
        match self {
            ModelSpec::NearlyUnstable { horizon, .. } => Some(1.0 - 1.0 / horizon),
            _ => None,
        }
    }

    /// Certified lower bound of λ along any path, if positive: h(μ) for a
    /// non-decreasing h with φ ≥ 0.
    pub fn positivity_floor(&self) -> Option<f64> {
        let floor = match self {
            ModelSpec::EmptyHistory { mu, kernel, link } | ModelSpec::Stationaryized { mu, kernel, link, .. } => {
                if link.monotonicity() != Monotonicity::NonDecreasing || !kernel.is_non_negative() {
                    return None;
                }
                link.eval(*mu)
            }
            ModelSpec::LocallyStationary { mu_fn, gamma_fn, kernel } => {
                if !kernel.is_non_negative() || gamma_fn.inf() < 0.0 {
                    return None;
                }
                mu_fn.inf()
            }
            ModelSpec::NearlyUnstable { mu, kernel, .. } => {
                if !kernel.is_non_negative() {
                    return None;
                }
                *mu
            }
            ModelSpec::Discrete(_) => return None,
        };
        (floor > 0.0).then_some(floor)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ModelViolation(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))
        }
    }

    /// Parses a model table (`variant = ...` plus parameters).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn linear_mean(mu: f64, kernel: &Kernel, link: &Link) -> Option<f64> {
    if !kernel.is_non_negative() {
        return None;
    }
    let n = kernel.l1_norm();
    match *link {
        Link::Identity | Link::PositivePart if mu >= 0.0 => Some(mu / (1.0 - n)),
        Link::AffineClipped { intercept, slope, floor } if slope >= 0.0 && intercept + slope * mu >= floor => {
            Some((intercept + slope * mu) / (1.0 - slope * n))
        }
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub quantity: String,
    pub value: f64,
    pub message: String,
}

impl Violation {
    fn new(quantity: &str, value: f64, message: String) -> Self {
        Violation { quantity: quantity.to_string(), value, message }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fmt_num(x: f64) -> String {
    let r = (x * 1e12).round() / 1e12;
    format!("{r}")
}

/// Every violated stability or integrability condition. Never panics.
pub fn validate(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let finite = |out: &mut Vec<Violation>, name: &str, v: f64| {
        if !v.is_finite() {
            out.push(Violation::new(name, v, format!("{name} = {v} is not finite")));
        }
    };
    match spec {
        ModelSpec::EmptyHistory { mu, kernel, link } | ModelSpec::Stationaryized { mu, kernel, link, .. } => {
            finite(&mut out, "μ", *mu);
            kernel.check(&mut out);
            link.check(&mut out);
            let r = link.lipschitz() * kernel.l1_norm();
            if !(r < 1.0) {
                out.push(Violation::new("α‖φ‖₁", r, format!("α‖φ‖₁ = {} ≥ 1", fmt_num(r))));
            }
            if matches!(link, Link::Identity) && (*mu < 0.0 || !kernel.is_non_negative()) {
                out.push(Violation::new(
                    "h ≥ 0",
                    *mu,
                    "identity link needs μ ≥ 0 and φ ≥ 0 to keep the intensity non-negative".into(),
                ));
            }
            if let ModelSpec::Stationaryized { burn_in, .. } = spec {
                if !(*burn_in > 0.0 && burn_in.is_finite()) {
                    out.push(Violation::new("B", *burn_in, format!("burn-in B = {burn_in} must be positive")));
                } else {
                    let bias = link.lipschitz() * kernel.tail_mass(*burn_in);
                    if !(bias < 1e-6) {
                        out.push(Violation::new("α∫_B^∞|φ|", bias, format!("α∫_B^∞|φ| = {bias:e} ≥ 1e-6 for B = {burn_in}")));
                    }
                }
            }
        }
        ModelSpec::LocallyStationary { mu_fn, gamma_fn, kernel } => {
            kernel.check(&mut out);
            if !mu_fn.is_finite() || !gamma_fn.is_finite() {
                out.push(Violation::new("profile", f64::NAN, "μ(·) and γ(·) must be finite".into()));
                return out;
            }
            if mu_fn.inf() < 0.0 {
                out.push(Violation::new("μ(x) ≥ 0", mu_fn.inf(), format!("inf μ(x) = {} < 0", mu_fn.inf())));
            }
            if gamma_fn.inf() < 0.0 {
                out.push(Violation::new("γ(x) ≥ 0", gamma_fn.inf(), format!("inf γ(x) = {} < 0", gamma_fn.inf())));
            }
            if !kernel.is_non_negative() {
                out.push(Violation::new("φ ≥ 0", f64::NAN, "locally stationary kernel must be non-negative".into()));
            }
            let r = gamma_fn.sup() * kernel.l1_norm();
            if !(r < 1.0) {
                out.push(Violation::new("sup γ‖φ‖₁", r, format!("sup γ(x)‖φ‖₁ = {} ≥ 1", fmt_num(r))));
            }
        }
        ModelSpec::Discrete(d) => {
            if !(d.alpha0 > 0.0 && d.alpha0.is_finite()) {
                out.push(Violation::new("α₀", d.alpha0, format!("α₀ = {} must be > 0", d.alpha0)));
            }
            let neg = match &d.alphas {
                DiscreteKernel::Finite { values } => values.iter().any(|v| !(*v >= 0.0 && v.is_finite())),
                DiscreteKernel::Geometric { first, ratio, .. } => {
                    !(*first >= 0.0 && first.is_finite() && *ratio >= 0.0 && *ratio < 1.0)
                }
            };
            if neg {
                out.push(Violation::new(
                    "α_k ≥ 0",
                    f64::NAN,
                    "discrete coefficients must be non-negative (geometric ratio in [0, 1))".into(),
                ));
                return out;
            }
            let m = d.alphas.mass();
            if !(m < 1.0) {
                out.push(Violation::new("|α|", m, format!("Σα_k = {} ≥ 1", fmt_num(m))));
            }
            let k = d.alphas.first_moment();
            if !k.is_finite() {
                out.push(Violation::new("Σkα_k", k, "Σkα_k is not finite".into()));
            }
        }
        ModelSpec::NearlyUnstable { mu, kernel, horizon } => {
            kernel.check(&mut out);
            if !(*mu > 0.0 && mu.is_finite()) {
                out.push(Violation::new("μ", *mu, format!("μ = {mu} must be > 0")));
            }
            if !kernel.is_non_negative() {
                out.push(Violation::new("φ ≥ 0", f64::NAN, "nearly unstable kernel must be non-negative".into()));
            }
            let n = kernel.l1_norm();
            if (n - 1.0).abs() > 1e-9 {
                out.push(Violation::new("‖φ‖₁", n, format!("‖φ‖₁ = {} must equal 1", fmt_num(n))));
            }
            if !(*horizon > 1.0 && horizon.is_finite()) {
                out.push(Violation::new("T", *horizon, format!("T = {horizon} must exceed 1 so that a_T > 0")));
            }
        }
    }
    out
}

/// Gaussian targets and bounds computable without simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedConstants {
    /// Target variance of (H_T − ∫λ)/√T; `None` means estimate by long-run simulation.
    pub sigma2_target: Option<f64>,
    /// Target variance of every f = g functional.
    pub sigma2_reduced: f64,
    /// ς²/(1−|α|)² for the raw-count discrete functional.
    pub raw_count_variance: Option<f64>,
    pub branching_ratio: f64,
    /// sup_t E[λ_t].
    pub stationary_mean_bound: f64,
}

impl DerivedConstants {
    pub fn needs_simulation(&self) -> bool {
        self.sigma2_target.is_none()
    }
}

pub fn derived_constants(spec: &ModelSpec) -> Result<DerivedConstants> {
    spec.ensure_valid()?;
    let out = match spec {
        ModelSpec::EmptyHistory { mu, kernel, link } | ModelSpec::Stationaryized { mu, kernel, link, .. } => {
            let r = link.lipschitz() * kernel.l1_norm();
            DerivedConstants {
                sigma2_target: linear_mean(*mu, kernel, link),
                sigma2_reduced: 1.0,
                raw_count_variance: None,
                branching_ratio: r,
                stationary_mean_bound: link.eval(*mu) / (1.0 - r),
            }
        }
        ModelSpec::LocallyStationary { mu_fn, gamma_fn, kernel } => {
            let n = kernel.l1_norm();
            let s2 = quad::integrate(|x| mu_fn.eval(x) / (1.0 - gamma_fn.eval(x) * n), 0.0, 1.0, 1e-12)?;
            let r = gamma_fn.sup() * n;
            DerivedConstants {
                sigma2_target: Some(s2),
                sigma2_reduced: 1.0,
                raw_count_variance: None,
                branching_ratio: r,
                stationary_mean_bound: mu_fn.sup() / (1.0 - r),
            }
        }
        ModelSpec::Discrete(d) => {
            let s2 = d.varsigma2();
            let m = d.alphas.mass();
            DerivedConstants {
                sigma2_target: Some(s2),
                sigma2_reduced: 1.0,
                raw_count_variance: Some(s2 / ((1.0 - m) * (1.0 - m))),
                branching_ratio: m,
                stationary_mean_bound: s2,
            }
        }
        ModelSpec::NearlyUnstable { mu, horizon, .. } => DerivedConstants {
            // (H_T − ∫λ)/√T has no fixed Gaussian limit here; only F̂ is normalized.
            sigma2_target: None,
            sigma2_reduced: 1.0,
            raw_count_variance: None,
            branching_ratio: 1.0 - 1.0 / horizon,
            stationary_mean_bound: mu * horizon,
        },
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eh(mu: f64, kernel: Kernel, link: Link) -> ModelSpec {
        ModelSpec::EmptyHistory { mu, kernel, link }
    }

    #[test]
    fn stable_identity_is_valid() {
        assert!(validate(&eh(1.0, Kernel::exponential(0.5, 1.0), Link::Identity)).is_empty());
    }

    #[test]
    fn supercritical_identity_is_flagged() {
        let v = validate(&eh(1.0, Kernel::exponential(1.2, 1.0), Link::Identity));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "α‖φ‖₁ = 1.2 ≥ 1");
        assert_eq!(v[0].value, 1.2);
    }

    #[test]
    fn geometric_discrete_is_valid() {
        let d = ModelSpec::Discrete(DiscreteSpec {
            alpha0: 1.0,
            alphas: DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: None },
        });
        assert!(validate(&d).is_empty());
        if let ModelSpec::Discrete(s) = &d {
            assert!((s.alphas.mass() - 0.6).abs() < 1e-15);
            assert!((s.alphas.first_moment() - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_geometric_matches_direct_sums() {
        let k = DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: Some(40) };
        let direct: f64 = (1..=40).map(|i| k.coefficient(i)).sum();
        let direct_m: f64 = (1..=40).map(|i| i as f64 * k.coefficient(i)).sum();
        assert!((k.mass() - direct).abs() < 1e-14);
        assert!((k.first_moment() - direct_m).abs() < 1e-13);
        assert_eq!(k.coefficient(41), 0.0);
    }

    #[test]
    fn exponential_closed_forms_match_quadrature() {
        for (c, b) in [(0.5, 1.0), (0.9, 3.0), (0.2, 0.25)] {
            let k = Kernel::exponential(c, b);
            let l1 = quad::integrate(|t| k.eval(t).abs(), 0.0, 80.0 / b, 1e-13).unwrap();
            let m = quad::integrate(|t| t * k.eval(t).abs(), 0.0, 80.0 / b, 1e-13).unwrap();
            assert!((k.l1_norm() - l1).abs() < 1e-10);
            assert!((k.first_moment() - m).abs() < 1e-10);
        }
    }

    #[test]
    fn other_families_norms() {
        let kernels = [
            Kernel::PowerLaw { scale: 0.4, delta: 1.0, tail: 3.0 },
            Kernel::CompactPolynomial { scale: 0.7, support: 2.0, power: 2.0 },
            Kernel::Tabulated { step: 0.5, values: vec![1.0, -0.5, 0.25, 0.0] },
        ];
        for k in kernels {
            let end = k.support().unwrap_or(2e4);
            let l1 = quad::integrate(|t| k.eval(t).abs(), 0.0, end, 1e-12).unwrap();
            let m = quad::integrate(|t| t * k.eval(t).abs(), 0.0, end, 1e-12).unwrap();
            let tail = quad::integrate(|t| k.eval(t).abs(), 0.3, end, 1e-12).unwrap();
            let rel = 1e-6;
            assert!((k.l1_norm() - l1).abs() < rel * l1.max(1.0), "{k:?}");
            assert!((k.first_moment() - m).abs() < 1e-3 * m.max(1.0), "{k:?} {m}");
            assert!((k.tail_mass(0.3) - tail).abs() < rel * tail.max(1.0), "{k:?}");
        }
    }

    #[test]
    fn kernel_ranges_bound_samples() {
        let kernels = [
            Kernel::exponential(-0.5, 2.0),
            Kernel::PowerLaw { scale: 0.4, delta: 0.5, tail: 1.5 },
            Kernel::CompactPolynomial { scale: 0.7, support: 2.0, power: 0.5 },
            Kernel::Tabulated { step: 0.5, values: vec![1.0, -0.5, 0.25, 0.1] },
        ];
        for k in &kernels {
            for (x, y) in [(0.0, 0.3), (0.2, 1.7), (1.4, 2.6), (3.0, 4.0)] {
                let (lo, hi) = k.range_on(x, y);
                for i in 0..=200 {
                    let t = x + (y - x) * i as f64 / 200.0;
                    let v = k.eval(t);
                    assert!(v >= lo - 1e-15 && v <= hi + 1e-15, "{k:?} at {t}");
                }
            }
        }
    }

    #[test]
    fn burn_in_meets_tail_target() {
        let k = Kernel::exponential(0.5, 1.0);
        let b = k.burn_in_for(1.0, 1e-6);
        assert!(k.tail_mass(b) <= 1.0001e-6);
        let p = Kernel::PowerLaw { scale: 0.5, delta: 1.0, tail: 2.0 };
        let b = p.burn_in_for(1.0, 1e-6);
        assert!(p.tail_mass(b) <= 1.0001e-6);
    }

    #[test]
    fn link_properties() {
        let s = Link::Sigmoid { level: 2.0 };
        assert_eq!(s.lipschitz(), 0.5);
        assert!((s.eval(0.0) - 1.0).abs() < 1e-15);
        let t = Link::Tabulated { origin: -1.0, step: 1.0, values: vec![0.0, 2.0, 1.0] };
        assert_eq!(t.monotonicity(), Monotonicity::None);
        assert_eq!(t.lipschitz(), 2.0);
        assert_eq!(t.sup_on(-0.5, 0.5), 2.0);
        assert_eq!(t.inf_on(-2.0, 5.0), 0.0);
        let a = Link::AffineClipped { intercept: 1.0, slope: -0.5, floor: 0.2 };
        assert_eq!(a.monotonicity(), Monotonicity::NonIncreasing);
        assert_eq!(a.eval(10.0), 0.2);
    }

    #[test]
    fn negative_tabulated_link_is_flagged() {
        let t = Link::Tabulated { origin: 0.0, step: 1.0, values: vec![0.5, -0.1] };
        let v = validate(&eh(1.0, Kernel::exponential(0.1, 1.0), t));
        assert!(v.iter().any(|x| x.quantity == "h ≥ 0"));
    }

    #[test]
    fn validate_is_total_on_garbage() {
        let specs = [
            eh(f64::NAN, Kernel::exponential(f64::INFINITY, -1.0), Link::Sigmoid { level: f64::NAN }),
            eh(-1.0, Kernel::Tabulated { step: 0.0, values: vec![] }, Link::Identity),
            ModelSpec::NearlyUnstable { mu: 0.0, kernel: Kernel::exponential(2.0, 1.0), horizon: 0.5 },
            ModelSpec::Discrete(DiscreteSpec {
                alpha0: -1.0,
                alphas: DiscreteKernel::Geometric { first: 1.0, ratio: 2.0, terms: None },
            }),
            ModelSpec::LocallyStationary {
                mu_fn: Profile::Tabulated { values: vec![] },
                gamma_fn: Profile::Constant { value: 2.0 },
                kernel: Kernel::exponential(1.0, 1.0),
            },
        ];
        for s in specs {
            assert!(!validate(&s).is_empty());
        }
    }

    #[test]
    fn derived_linear_and_discrete() {
        let d = derived_constants(&eh(1.0, Kernel::exponential(0.5, 1.0), Link::Identity)).unwrap();
        assert_eq!(d.sigma2_target, Some(2.0));
        assert_eq!(d.stationary_mean_bound, 2.0);
        assert_eq!(d.sigma2_reduced, 1.0);
        let disc = ModelSpec::Discrete(DiscreteSpec {
            alpha0: 1.0,
            alphas: DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: None },
        });
        let d = derived_constants(&disc).unwrap();
        assert!((d.sigma2_target.unwrap() - 2.5).abs() < 1e-12);
        assert!((d.raw_count_variance.unwrap() - 15.625).abs() < 1e-10);
    }

    #[test]
    fn nonlinear_needs_simulation() {
        let d = derived_constants(&eh(0.5, Kernel::exponential(0.5, 1.0), Link::Sigmoid { level: 2.0 })).unwrap();
        assert!(d.needs_simulation());
        assert!(derived_constants(&eh(1.0, Kernel::exponential(1.5, 1.0), Link::Identity)).is_err());
    }

    #[test]
    fn locally_stationary_constant_profiles_reduce_to_linear() {
        let ls = ModelSpec::LocallyStationary {
            mu_fn: Profile::Constant { value: 1.3 },
            gamma_fn: Profile::Constant { value: 0.6 },
            kernel: Kernel::exponential(1.0, 2.0),
        };
        let lin = eh(1.3, Kernel::exponential(0.6, 2.0), Link::Identity);
        let a = derived_constants(&ls).unwrap().sigma2_target.unwrap();
        let b = derived_constants(&lin).unwrap().sigma2_target.unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn locally_stationary_quadrature() {
        let ls = ModelSpec::LocallyStationary {
            mu_fn: Profile::Affine { at_zero: 1.0, at_one: 1.5 },
            gamma_fn: Profile::Affine { at_zero: 0.4, at_one: 0.6 },
            kernel: Kernel::exponential(1.0, 1.0),
        };
        // ∫₀¹ (1 + x/2)/(0.6 − 0.2x) dx in closed form
        let exact = {
            let (a, b) = (0.6f64, -0.2f64);
            let f = |x: f64| x / (2.0 * b) * 1.0 + (1.0 - a / (2.0 * b)) * (a + b * x).ln() / b;
            f(1.0) - f(0.0)
        };
        let s2 = derived_constants(&ls).unwrap().sigma2_target.unwrap();
        assert!((s2 - exact).abs() < 1e-10, "{s2} vs {exact}");
    }

    #[test]
    fn serde_round_trip() {
        let s = ModelSpec::Stationaryized {
            mu: 1.0,
            kernel: Kernel::PowerLaw { scale: 0.3, delta: 1.0, tail: 2.0 },
            link: Link::AffineClipped { intercept: 0.5, slope: 1.0, floor: 0.0 },
            burn_in: 1e5,
        };
        let txt = toml::to_string(&s).unwrap();
        let back: ModelSpec = toml::from_str(&txt).unwrap();
        assert_eq!(s, back);
        let bad = txt.replace("burn_in", "burnin");
        assert!(toml::from_str::<ModelSpec>(&bad).is_err());
    }

    #[test]
    fn positivity_floor() {
        assert_eq!(eh(1.0, Kernel::exponential(0.5, 1.0), Link::Identity).positivity_floor(), Some(1.0));
        assert_eq!(eh(1.0, Kernel::exponential(-0.5, 1.0), Link::PositivePart).positivity_floor(), None);
    }
}
