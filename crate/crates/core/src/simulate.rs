//! Thinning of the driving measure under the intensity graph.
//!
//! Time is scanned one cell column at a time. For each column the scan
//! uses a mark ceiling Θ that dominates the intensity on the remainder of
//! the column; Θ is computed from exact kernel and link ranges, so no
//! atom under the graph can sit above it. When an accepted event pushes
//! the bound past Θ, Θ is doubled and the newly exposed strips are read.

use std::cmp::Ordering;

use crate::driving_measure::{atom_order, Atom, Configuration};
use crate::error::{Error, Result};
use crate::model::{DiscreteKernel, DiscreteSpec, Kernel, Link, ModelSpec, Profile};
use crate::quad;
use crate::rng;
use crate::volterra::GridFunction;

/// What a path is thinned against.
#[derive(Clone, Debug, PartialEq)]
pub enum IntensityLaw {
    Model(ModelSpec),
    /// A deterministic intensity curve on [0, T].
    Curve(GridFunction),
}

#[derive(Clone, Debug)]
enum Baseline {
    Const(f64),
    Profile(Profile),
    Curve(GridFunction),
}

#[derive(Clone, Debug)]
enum Gain {
    Const(f64),
    Profile(Profile),
}

/// λ(t) = link(baseline(t) + gain(t)·Σ φ(t − t_i)).
#[derive(Clone, Debug)]
struct Law {
    baseline: Baseline,
    gain: Gain,
    kernel: Option<Kernel>,
    link: Link,
    horizon: f64,
}

impl Law {
    fn new(law: &IntensityLaw, horizon: f64) -> Result<Self> {
        let l = match law {
            IntensityLaw::Curve(c) => {
                Law { baseline: Baseline::Curve(c.clone()), gain: Gain::Const(0.0), kernel: None, link: Link::Identity, horizon }
            }
            IntensityLaw::Model(spec) => match spec {
                ModelSpec::EmptyHistory { mu, kernel, link } | ModelSpec::Stationaryized { mu, kernel, link, .. } => Law {
                    baseline: Baseline::Const(*mu),
                    gain: Gain::Const(1.0),
                    kernel: Some(kernel.clone()),
                    link: link.clone(),
                    horizon,
                },
                ModelSpec::LocallyStationary { mu_fn, gamma_fn, kernel } => Law {
                    baseline: Baseline::Profile(mu_fn.clone()),
                    gain: Gain::Profile(gamma_fn.clone()),
                    kernel: Some(kernel.clone()),
                    link: Link::Identity,
                    horizon,
                },
                ModelSpec::NearlyUnstable { mu, kernel, horizon: h } => Law {
                    baseline: Baseline::Const(*mu),
                    gain: Gain::Const(1.0 - 1.0 / h),
                    kernel: Some(kernel.clone()),
                    link: Link::Identity,
                    horizon,
                },
                ModelSpec::Discrete(_) => {
                    return Err(Error::InvalidArgument("discrete models are simulated with simulate_discrete".into()))
                }
            },
        };
        Ok(l)
    }

    #[inline]
    fn base(&self, t: f64) -> f64 {
        match &self.baseline {
            Baseline::Const(m) => *m,
            Baseline::Profile(p) => p.eval(t / self.horizon),
            Baseline::Curve(c) => c.eval(t),
        }
    }

    #[inline]
    fn gain(&self, t: f64) -> f64 {
        match &self.gain {
            Gain::Const(g) => *g,
            Gain::Profile(p) => p.eval(t / self.horizon),
        }
    }

    fn base_range(&self, a: f64, b: f64) -> (f64, f64) {
        match &self.baseline {
            Baseline::Const(m) => (*m, *m),
            Baseline::Profile(p) => p.range_on(a / self.horizon, b / self.horizon),
            Baseline::Curve(c) => c.range_on(a, b),
        }
    }

    fn gain_range(&self, a: f64, b: f64) -> (f64, f64) {
        match &self.gain {
            Gain::Const(g) => (*g, *g),
            Gain::Profile(p) => p.range_on(a / self.horizon, b / self.horizon),
        }
    }

    #[inline]
    fn intensity(&self, t: f64, excitation: f64) -> f64 {
        self.link.eval(self.base(t) + self.gain(t) * excitation)
    }

    /// sup of λ over [a, b] given the excitation range there.
    fn upper(&self, a: f64, b: f64, s: (f64, f64)) -> f64 {
        let (bl, bh) = self.base_range(a, b);
        let (gl, gh) = self.gain_range(a, b);
        let corners = [gl * s.0, gl * s.1, gh * s.0, gh * s.1];
        let plo = corners.iter().copied().fold(f64::INFINITY, f64::min);
        let phi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.link.sup_on(bl + plo, bh + phi)
    }

    fn initial_ceiling(&self, spec: Option<&ModelSpec>, t_start: f64) -> f64 {
        let v = match spec {
            Some(ModelSpec::LocallyStationary { mu_fn, .. }) => 2.0 * mu_fn.sup(),
            _ => 2.0 * self.link.eval(self.base(t_start)),
        };
        if v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    }
}

/// Running excitation Σ_{t_i < t} φ(t − t_i) during a forward scan.
struct History<'k> {
    kernel: Option<&'k Kernel>,
    markov: Option<(f64, f64)>,
    times: Vec<f64>,
    post: Vec<f64>,
    first_live: usize,
}

impl<'k> History<'k> {
    fn new(kernel: Option<&'k Kernel>) -> Self {
        History { kernel, markov: kernel.and_then(|k| k.markov()), times: Vec::new(), post: Vec::new(), first_live: 0 }
    }

    fn push(&mut self, t: f64) {
        if let Some((amp, rate)) = self.markov {
            let prev = match (self.times.last(), self.post.last()) {
                (Some(&s), Some(&v)) => v * (-rate * (t - s)).exp(),
                _ => 0.0,
            };
            self.post.push(prev + amp);
        }
        self.times.push(t);
    }

    fn advance(&mut self, t: f64) {
        if let Some(s) = self.kernel.and_then(|k| k.support()) {
            while self.first_live < self.times.len() && self.times[self.first_live] + s < t {
                self.first_live += 1;
            }
        }
    }

    /// Excitation at t from every recorded event (all of which precede t).
    fn value(&mut self, t: f64) -> f64 {
        let Some(kernel) = self.kernel else { return 0.0 };
        if let Some((_, rate)) = self.markov {
            return match (self.times.last(), self.post.last()) {
                (Some(&s), Some(&v)) => v * (-rate * (t - s)).exp(),
                _ => 0.0,
            };
        }
        self.advance(t);
        self.times[self.first_live..].iter().map(|&s| kernel.eval(t - s)).sum()
    }

    /// (min, max) of the excitation over [a, b], counting events at ≤ a.
    fn range(&mut self, a: f64, b: f64) -> (f64, f64) {
        let Some(kernel) = self.kernel else { return (0.0, 0.0) };
        if let Some((_, rate)) = self.markov {
            let va = match (self.times.last(), self.post.last()) {
                (Some(&s), Some(&v)) => v * (-rate * (a - s)).exp(),
                _ => 0.0,
            };
            let vb = va * (-rate * (b - a)).exp();
            return (va.min(vb), va.max(vb));
        }
        self.advance(a);
        let mut lo = 0.0;
        let mut hi = 0.0;
        for &s in &self.times[self.first_live..] {
            let (l, h) = kernel.range_on(a - s, b - s);
            lo += l;
            hi += h;
        }
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeilingRecord {
    /// Time-cell column index.
    pub window: i64,
    /// Final mark ceiling used in that column.
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Guard against runaway intensities.
    pub max_ceiling: f64,
    /// Rescan every path at its final ceiling and fail on any missed atom.
    pub verify: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { max_ceiling: 1e6, verify: false }
    }
}

/// One realized trajectory.
#[derive(Clone, Debug)]
pub struct EventPath {
    law: IntensityLaw,
    compiled: Law,
    config: Configuration,
    t_start: f64,
    horizon: f64,
    events: Vec<Atom>,
    intensities: Vec<f64>,
    post: Vec<f64>,
    ceiling_trace: Vec<CeilingRecord>,
}

impl EventPath {
    pub fn law(&self) -> &IntensityLaw {
        &self.law
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        match &self.law {
            IntensityLaw::Model(s) => Some(s),
            IntensityLaw::Curve(_) => None,
        }
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    /// Start of the simulated window (negative after a burn-in).
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Accepted atoms in time order, over [t_start, T).
    pub fn events(&self) -> &[Atom] {
        &self.events
    }

    /// λ at each accepted event, from events strictly before it.
    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn ceiling_trace(&self) -> &[CeilingRecord] {
        &self.ceiling_trace
    }

    /// Index of the first event at or after t.
    pub fn first_at_or_after(&self, t: f64) -> usize {
        self.events.partition_point(|a| a.t < t)
    }

    /// Number of events in [a, b).
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.first_at_or_after(b) - self.first_at_or_after(a)
    }

    /// H_T: events in [0, T).
    pub fn count(&self) -> usize {
        self.count_in(0.0, self.horizon)
    }

    pub fn evaluator(&self) -> IntensityEvaluator<'_> {
        IntensityEvaluator { path: self }
    }

    /// Re-enumerates all atoms under the largest ceiling used and checks
    /// that exactly the atoms under the intensity graph were accepted.
    pub fn verify_completeness(&self) -> Result<()> {
        let m = self.config.measure();
        let theta = self.ceiling_trace.iter().map(|c| c.theta).fold(0.0, f64::max);
        let ev = self.evaluator();
        let atoms = self.config.atoms_in(self.t_start, self.horizon, theta);
        let mut k = 0usize;
        for a in atoms {
            let lam = ev.intensity(a.t);
            let window = m.column_of(a.t);
            if let Some(c) = self.ceiling_trace.iter().find(|c| c.window == window) {
                if lam > c.theta {
                    return Err(Error::Incomplete(format!("λ({}) = {lam} above the ceiling {}", a.t, c.theta)));
                }
            }
            let accepted = k < self.events.len() && self.events[k] == a;
            if accepted {
                k += 1;
            }
            if accepted != (a.theta <= lam) {
                return Err(Error::Incomplete(format!(
                    "atom ({}, {}) with λ = {lam} was {}",
                    a.t,
                    a.theta,
                    if accepted { "accepted" } else { "skipped" }
                )));
            }
        }
        if k != self.events.len() {
            return Err(Error::Incomplete(format!("{} events not found on rescan", self.events.len() - k)));
        }
        Ok(())
    }
}

/// Evaluates λ and its integrals along a finished path.
#[derive(Clone, Copy)]
pub struct IntensityEvaluator<'a> {
    path: &'a EventPath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Power {
    One,
    Half,
    MinusHalf,
}

impl Power {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Power::One => x,
            Power::Half => x.max(0.0).sqrt(),
            Power::MinusHalf => 1.0 / x.sqrt(),
        }
    }
}

impl<'a> IntensityEvaluator<'a> {
    /// Σ_{t_i < t} φ(t − t_i).
    pub fn excitation(&self, t: f64) -> f64 {
        let p = self.path;
        let Some(kernel) = p.compiled.kernel.as_ref() else { return 0.0 };
        let k = p.first_at_or_after(t);
        if k == 0 {
            return 0.0;
        }
        if let Some((_, rate)) = kernel.markov() {
            return p.post[k - 1] * (-rate * (t - p.events[k - 1].t)).exp();
        }
        let lo = match kernel.support() {
            Some(s) => p.events.partition_point(|a| a.t + s < t),
            None => 0,
        };
        p.events[lo..k].iter().map(|a| kernel.eval(t - a.t)).sum()
    }

    /// λ(t), using events strictly before t.
    pub fn intensity(&self, t: f64) -> f64 {
        self.path.compiled.intensity(t, self.excitation(t))
    }

    /// Event times inside (a, b), i.e. the breakpoints of λ there.
    fn breakpoints(&self, a: f64, b: f64) -> &'a [Atom] {
        let p = self.path;
        let i = p.events.partition_point(|x| x.t <= a);
        let j = p.first_at_or_after(b);
        &p.events[i..j.max(i)]
    }

    /// ∫ₐᵇ f(λ(t)) dt, adaptive quadrature between events.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
        let mut total = 0.0;
        let mut left = a;
        for e in self.breakpoints(a, b).iter().map(|x| x.t).chain(std::iter::once(b)) {
            if e > left {
                // on (left, e) the event set before t is fixed; evaluate just inside
                total += quad::integrate(|t| f(self.intensity(t)), left, e, quad::DEFAULT_REL_TOL)?;
            }
            left = e;
        }
        Ok(total)
    }

    /// ∫ₐᵇ λ(t)^p dt; closed forms for piecewise-linear curves and for
    /// exponential kernels under an identity-type link.
    pub fn integral_power(&self, a: f64, b: f64, power: Power) -> Result<f64> {
        let p = self.path;
        if let Baseline::Curve(c) = &p.compiled.baseline {
            return Ok(curve_power_integral(c, a, b, power));
        }
        if let Some(total) = self.markov_power_integral(a, b, power) {
            return Ok(total);
        }
        self.integrate(a, b, |x| power.apply(x))
    }

    fn markov_power_integral(&self, a: f64, b: f64, power: Power) -> Option<f64> {
        let p = self.path;
        let law = &p.compiled;
        let (amp, rate) = law.kernel.as_ref()?.markov()?;
        let (Baseline::Const(mu), Gain::Const(g)) = (&law.baseline, &law.gain) else { return None };
        let mu = match law.link {
            Link::Identity => *mu,
            Link::PositivePart if *mu >= 0.0 && amp * g >= 0.0 => *mu,
            _ => return None,
        };
        if mu < 0.0 || (power != Power::One && mu <= 0.0) || amp * g < 0.0 {
            return None;
        }
        if amp * g == 0.0 {
            return Some(power.apply(mu) * (b - a));
        }
        let mut total = 0.0;
        let mut left = a;
        // right limit at a: an event sitting exactly at a already counts
        let idx0 = p.events.partition_point(|x| x.t <= a);
        let mut s_left = match idx0 {
            0 => 0.0,
            k => g * p.post[k - 1] * (-rate * (a - p.events[k - 1].t)).exp(),
        };
        let pts = self.breakpoints(a, b);
        for (off, e) in pts.iter().map(|x| x.t).chain(std::iter::once(b)).enumerate() {
            let len = e - left;
            if len > 0.0 {
                total += exp_segment(mu, s_left, rate, len, power);
            }
            if e < b {
                s_left = g * p.post[idx0 + off];
            }
            left = e;
        }
        Some(total)
    }
}

/// ∫₀^L (μ + S e^{−βu})^p du for μ > 0 (μ ≥ 0 when p = 1), S ≥ 0.
fn exp_segment(mu: f64, s: f64, beta: f64, len: f64, power: Power) -> f64 {
    let decay = (-beta * len).exp();
    let one_minus = -(-beta * len).exp_m1();
    match power {
        Power::One => mu * len + s * one_minus / beta,
        Power::Half | Power::MinusHalf => {
            let c = mu.sqrt();
            let y0 = (mu + s).sqrt();
            let yl = (mu + s * decay).sqrt();
            let dy = s * one_minus / (y0 + yl);
            let log_ratio = (dy / (yl + c)).ln_1p();
            if power == Power::Half {
                2.0 * dy / beta + c * len - 2.0 * c * log_ratio / beta
            } else {
                len / c - 2.0 * log_ratio / (beta * c)
            }
        }
    }
}

/// ∫ₐᵇ m(t)^p dt for a piecewise-linear, non-negative curve m.
fn curve_power_integral(c: &GridFunction, a: f64, b: f64, power: Power) -> f64 {
    if b <= a {
        return 0.0;
    }
    let dt = c.dt();
    let mut total = 0.0;
    let mut left = a;
    let mut k = (a / dt).floor().max(0.0) as usize + 1;
    while left < b {
        // node index advances by integer steps; a rounded quotient never skips a cell
        while k as f64 * dt <= left {
            k += 1;
        }
        let right = (k as f64 * dt).min(b);
        total += linear_power(c.eval(left), c.eval(right), right - left, power);
        left = right;
    }
    total
}

fn linear_power(fl: f64, fr: f64, h: f64, power: Power) -> f64 {
    let d = fr - fl;
    match power {
        Power::One => 0.5 * (fl + fr) * h,
        Power::Half => {
            if d.abs() <= 1e-14 * fl.abs().max(1.0) {
                fl.max(0.0).sqrt() * h
            } else {
                // (2/3)h(fr^{3/2} − fl^{3/2})/(fr − fl)
                let (sl, sr) = (fl.max(0.0).sqrt(), fr.max(0.0).sqrt());
                2.0 / 3.0 * h * (fl + sl * sr + fr) / (sl + sr)
            }
        }
        Power::MinusHalf => 2.0 * h / (fl.sqrt() + fr.sqrt()),
    }
}

fn ceiling_for(theta0: f64, bound: f64, limit: f64, t: f64) -> Result<f64> {
    let mut theta = theta0;
    while theta < bound {
        theta *= 2.0;
        if theta > limit || !theta.is_finite() {
            return Err(Error::CeilingOverflow { ceiling: bound, limit, t });
        }
    }
    Ok(theta)
}

struct Thinned {
    events: Vec<Atom>,
    intensities: Vec<f64>,
    post: Vec<f64>,
    trace: Vec<CeilingRecord>,
}

fn thin(law: &Law, theta0: f64, config: &Configuration, t_start: f64, t_end: f64, opts: &SimOptions) -> Result<Thinned> {
    let m = config.measure();
    let mut hist = History::new(law.kernel.as_ref());
    let mut events = Vec::new();
    let mut intensities = Vec::new();
    let mut trace = Vec::new();
    let mut i = m.column_of(t_start);
    loop {
        let a = m.column_start(i).max(t_start);
        if a >= t_end {
            break;
        }
        let b = m.column_start(i + 1).min(t_end);
        let mut theta = ceiling_for(theta0, law.upper(a, b, hist.range(a, b)), opts.max_ceiling, a)?;
        let mut strips = m.strip_of(theta) + 1;
        let mut pending = config.column_atoms(i, 0..strips);
        let mut idx = 0;
        while idx < pending.len() {
            let at = pending[idx];
            idx += 1;
            if at.t < a || at.t >= b || at.theta > theta {
                continue;
            }
            let lam = law.intensity(at.t, hist.value(at.t));
            if at.theta > lam {
                continue;
            }
            events.push(at);
            intensities.push(lam);
            hist.push(at.t);
            let bound = law.upper(at.t, b, hist.range(at.t, b));
            if bound > theta {
                theta = ceiling_for(theta0, bound, opts.max_ceiling, at.t)?;
                let wanted = m.strip_of(theta) + 1;
                if wanted > strips {
                    let mut rest: Vec<Atom> = pending[idx..].to_vec();
                    rest.extend(
                        config.column_atoms(i, strips..wanted).into_iter().filter(|x| atom_order(x, &at) == Ordering::Greater),
                    );
                    rest.sort_by(atom_order);
                    pending = rest;
                    idx = 0;
                    strips = wanted;
                }
            }
        }
        trace.push(CeilingRecord { window: i, theta });
        i += 1;
    }
    Ok(Thinned { events, intensities, post: hist.post, trace })
}

fn run(law: IntensityLaw, config: &Configuration, t_start: f64, horizon: f64, opts: &SimOptions) -> Result<EventPath> {
    if !(horizon > t_start) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must exceed the start {t_start}")));
    }
    let compiled = Law::new(&law, horizon)?;
    let spec = match &law {
        IntensityLaw::Model(s) => Some(s),
        IntensityLaw::Curve(_) => None,
    };
    let theta0 = compiled.initial_ceiling(spec, t_start);
    let th = thin(&compiled, theta0, config, t_start, horizon, opts)?;
    let path = EventPath {
        law,
        compiled,
        config: config.clone(),
        t_start,
        horizon,
        events: th.events,
        intensities: th.intensities,
        post: th.post,
        ceiling_trace: th.trace,
    };
    if opts.verify {
        path.verify_completeness()?;
    }
    Ok(path)
}

pub fn simulate(spec: &ModelSpec, config: &Configuration, horizon: f64) -> Result<EventPath> {
    simulate_with(spec, config, horizon, &SimOptions::default())
}

pub fn simulate_with(spec: &ModelSpec, config: &Configuration, horizon: f64, opts: &SimOptions) -> Result<EventPath> {
    spec.ensure_valid()?;
    let t_start = match spec {
        ModelSpec::Stationaryized { burn_in, .. } => -burn_in,
        _ => 0.0,
    };
    run(IntensityLaw::Model(spec.clone()), config, t_start, horizon, opts)
}

/// Path thinned against a deterministic curve on [0, T].
pub fn simulate_deterministic(curve: &GridFunction, config: &Configuration, horizon: f64) -> Result<EventPath> {
    if curve.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("intensity curve must be finite and non-negative".into()));
    }
    if curve.horizon() + 1e-9 * horizon < horizon {
        return Err(Error::GridMismatch(format!("curve covers [0, {}] but the horizon is {horizon}", curve.horizon())));
    }
    run(IntensityLaw::Curve(curve.clone()), config, 0.0, horizon, &SimOptions::default())
}

/// (base path, path on the configuration shifted at `shift_point`).
pub fn simulate_coupled(
    spec: &ModelSpec,
    config: &Configuration,
    horizon: f64,
    shift_point: Atom,
) -> Result<(EventPath, EventPath)> {
    if shift_point.theta != 0.0 {
        return Err(Error::InvalidArgument(format!("shift mark must be 0, got {}", shift_point.theta)));
    }
    let base = simulate(spec, config, horizon)?;
    let shifted = simulate(spec, &config.shift(shift_point), horizon)?;
    Ok((base, shifted))
}

/// ∫ₐᵇ f(λ(t), λ'(t)) dt for two paths on the same horizon.
pub fn integrate_pair(p: &EventPath, q: &EventPath, a: f64, b: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let (ep, eq) = (p.evaluator(), q.evaluator());
    let mut cuts: Vec<f64> = ep.breakpoints(a, b).iter().chain(eq.breakpoints(a, b)).map(|x| x.t).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(b);
    let mut total = 0.0;
    let mut left = a;
    for e in cuts {
        if e > left {
            total += quad::integrate(|t| f(ep.intensity(t), eq.intensity(t)), left, e, quad::DEFAULT_REL_TOL)?;
        }
        left = e;
    }
    Ok(total)
}

pub fn compensator(path: &EventPath) -> Result<f64> {
    path.evaluator().integral_power(0.0, path.horizon, Power::One)
}

/// X_k ~ Poisson(λ_k), λ_k = α₀ + Σ_{i<k} α_{k−i} X_i.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    pub counts: Vec<u64>,
    pub intensities: Vec<f64>,
}

impl DiscretePath {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// H_n.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn simulate_discrete(spec: &DiscreteSpec, n: usize, seed: u64) -> Result<DiscretePath> {
    ModelSpec::Discrete(spec.clone()).ensure_valid()?;
    let mut counts: Vec<u64> = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    let draw = |k: usize, mean: f64| {
        let mut s = rng::stream(rng::keyed(rng::domain::DISCRETE, seed, k as u64, 0));
        rng::poisson(&mut s, mean)
    };
    match spec.alphas {
        DiscreteKernel::Geometric { first, ratio, terms: None } => {
            // y_k = Σ_{i<k} ratio^{k−1−i} X_i
            let mut y = 0.0;
            for k in 1..=n {
                if k > 1 {
                    y = ratio * y + counts[k - 2] as f64;
                }
                let lam = spec.alpha0 + first * y;
                intensities.push(lam);
                counts.push(draw(k, lam));
            }
        }
        ref kernel => {
            let len = kernel.len().unwrap_or(0);
            let coeffs: Vec<f64> = (1..=len).map(|l| kernel.coefficient(l)).collect();
            for k in 1..=n {
                let mut lam = spec.alpha0;
                for (l, c) in coeffs.iter().enumerate().take(k - 1) {
                    lam += c * counts[k - 2 - l] as f64;
                }
                intensities.push(lam);
                counts.push(draw(k, lam));
            }
        }
    }
    Ok(DiscretePath { counts, intensities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Link;

    fn linear() -> ModelSpec {
        ModelSpec::EmptyHistory { mu: 1.0, kernel: Kernel::exponential(0.5, 1.0), link: Link::Identity }
    }

    fn verify() -> SimOptions {
        SimOptions { verify: true, ..Default::default() }
    }

    #[test]
    fn poisson_case_compensator_is_exact() {
        let spec = ModelSpec::EmptyHistory { mu: 3.0, kernel: Kernel::exponential(0.0, 1.0), link: Link::Identity };
        let p = simulate_with(&spec, &Configuration::from_seed(1), 10.0, &verify()).unwrap();
        assert_eq!(compensator(&p).unwrap(), 30.0);
        assert!(p.intensities().iter().all(|l| *l == 3.0));
    }

    #[test]
    fn curve_integrals_visit_every_cell() {
        // 0.0016 is not a binary fraction, so k·dt/dt rounds below k at some nodes
        let c = GridFunction::sample(0.0016, 32.0, |t| 1.0 + t + (3.0 * t).sin()).unwrap();
        let p = simulate_deterministic(&c, &Configuration::from_seed(4), 32.0).unwrap();
        let ev = p.evaluator();
        let one = ev.integral_power(0.0, 32.0, Power::One).unwrap();
        assert!((one - c.integral()).abs() < 1e-9 * one, "{one} vs {}", c.integral());
        let half = ev.integral_power(0.0, 32.0, Power::Half).unwrap();
        let q = crate::quad::integrate(|t| c.eval(t).sqrt(), 0.0, 32.0, 1e-10).unwrap();
        assert!((half - q).abs() < 1e-6 * q);
        let split =
            ev.integral_power(0.0, 7.2, Power::MinusHalf).unwrap() + ev.integral_power(7.2, 32.0, Power::MinusHalf).unwrap();
        let whole = ev.integral_power(0.0, 32.0, Power::MinusHalf).unwrap();
        assert!((split - whole).abs() < 1e-10 * whole);
    }

    #[test]
    fn paths_are_complete_for_every_family() {
        let kernels = [
            Kernel::exponential(0.6, 2.0),
            Kernel::PowerLaw { scale: 0.5, delta: 0.5, tail: 2.0 },
            Kernel::CompactPolynomial { scale: 0.7, support: 1.5, power: 1.0 },
            Kernel::Tabulated { step: 0.25, values: vec![0.9, 0.6, -0.2, 0.3, 0.0] },
        ];
        let links = [
            Link::PositivePart,
            Link::Sigmoid { level: 3.0 },
            Link::Tabulated { origin: -2.0, step: 1.0, values: vec![0.1, 0.5, 2.0, 1.5, 2.5] },
        ];
        for (s, k) in kernels.iter().enumerate() {
            for l in &links {
                let alpha = l.lipschitz();
                let k = match k {
                    Kernel::Tabulated { step, values } => {
                        Kernel::Tabulated { step: *step, values: values.iter().map(|v| v / alpha.max(1.0)).collect() }
                    }
                    other => other.clone(),
                };
                let spec = ModelSpec::EmptyHistory { mu: 0.8, kernel: k.clone(), link: l.clone() };
                if !spec.validate().is_empty() {
                    continue;
                }
                let p = simulate_with(&spec, &Configuration::from_seed(100 + s as u64), 30.0, &verify()).unwrap();
                assert!(!p.events().is_empty());
            }
        }
    }

    #[test]
    fn completeness_catches_tampering() {
        let mut p = simulate(&linear(), &Configuration::from_seed(3), 20.0).unwrap();
        p.events.remove(3);
        assert!(p.verify_completeness().is_err());
    }

    #[test]
    fn predictable_intensity_at_events() {
        let p = simulate(&linear(), &Configuration::from_seed(5), 50.0).unwrap();
        let ev = p.evaluator();
        for (a, l) in p.events().iter().zip(p.intensities()) {
            assert!((ev.intensity(a.t) - l).abs() < 1e-12 * l);
            assert!(a.theta <= *l);
        }
    }

    #[test]
    fn exponential_closed_forms_match_quadrature() {
        let p = simulate(&linear(), &Configuration::from_seed(9), 60.0).unwrap();
        let ev = p.evaluator();
        for pw in [Power::One, Power::Half, Power::MinusHalf] {
            let closed = ev.integral_power(0.0, 60.0, pw).unwrap();
            let numeric = ev.integrate(0.0, 60.0, |x| pw.apply(x)).unwrap();
            assert!((closed - numeric).abs() < 1e-7 * numeric.abs(), "{pw:?}: {closed} vs {numeric}");
        }
        let part = ev.integral_power(3.3, 17.9, Power::Half).unwrap();
        let numeric = ev.integrate(3.3, 17.9, |x| x.sqrt()).unwrap();
        assert!((part - numeric).abs() < 1e-7 * numeric);
    }

    #[test]
    fn curve_integrals_are_exact() {
        let c = GridFunction::new(0.5, vec![1.0, 3.0, 2.0, 2.0, 5.0]).unwrap();
        for pw in [Power::One, Power::Half, Power::MinusHalf] {
            let closed = curve_power_integral(&c, 0.2, 1.9, pw);
            let numeric = quad::integrate(|t| pw.apply(c.eval(t)), 0.2, 0.5, 1e-13).unwrap()
                + quad::integrate(|t| pw.apply(c.eval(t)), 0.5, 1.0, 1e-13).unwrap()
                + quad::integrate(|t| pw.apply(c.eval(t)), 1.0, 1.5, 1e-13).unwrap()
                + quad::integrate(|t| pw.apply(c.eval(t)), 1.5, 1.9, 1e-13).unwrap();
            assert!((closed - numeric).abs() < 1e-12, "{pw:?}");
        }
    }

    #[test]
    fn coupled_paths_agree_before_shift() {
        let (b, s) = simulate_coupled(&linear(), &Configuration::from_seed(11), 40.0, Atom::new(12.5, 0.0)).unwrap();
        let nb = b.first_at_or_after(12.5);
        assert_eq!(&b.events()[..nb], &s.events()[..nb]);
        assert_eq!(s.events()[nb], Atom::new(12.5, 0.0));
        // non-negative kernel: the shifted path dominates
        let (eb, es) = (b.evaluator(), s.evaluator());
        for a in b.events().iter().filter(|a| a.t > 12.5) {
            assert!(es.intensity(a.t) >= eb.intensity(a.t));
        }
    }

    #[test]
    fn shift_beyond_horizon_changes_nothing() {
        let (b, s) = simulate_coupled(&linear(), &Configuration::from_seed(2), 10.0, Atom::new(11.0, 0.0)).unwrap();
        assert_eq!(b.events(), s.events());
    }

    #[test]
    fn coupled_rejects_positive_mark() {
        assert!(simulate_coupled(&linear(), &Configuration::from_seed(2), 10.0, Atom::new(1.0, 0.5)).is_err());
    }

    #[test]
    fn stationaryized_starts_before_zero() {
        let spec =
            ModelSpec::Stationaryized { mu: 1.0, kernel: Kernel::exponential(0.5, 1.0), link: Link::Identity, burn_in: 20.0 };
        let p = simulate_with(&spec, &Configuration::from_seed(4), 10.0, &verify()).unwrap();
        assert_eq!(p.t_start(), -20.0);
        assert!(p.events()[0].t < 0.0);
        assert!(p.count() < p.events().len());
    }

    #[test]
    fn locally_stationary_and_nearly_unstable_run() {
        let ls = ModelSpec::LocallyStationary {
            mu_fn: Profile::Affine { at_zero: 1.0, at_one: 1.5 },
            gamma_fn: Profile::Affine { at_zero: 0.4, at_one: 0.6 },
            kernel: Kernel::exponential(1.0, 1.0),
        };
        simulate_with(&ls, &Configuration::from_seed(6), 50.0, &verify()).unwrap();
        let nu = ModelSpec::NearlyUnstable { mu: 1.0, kernel: Kernel::exponential(1.0, 1.0), horizon: 32.0 };
        simulate_with(&nu, &Configuration::from_seed(6), 32.0, &verify()).unwrap();
    }

    #[test]
    fn deterministic_curve_path() {
        let c = GridFunction::sample(0.01, 20.0, |t| 1.0 + 0.5 * t).unwrap();
        let p = simulate_deterministic(&c, &Configuration::from_seed(8), 20.0).unwrap();
        p.verify_completeness().unwrap();
        assert!((compensator(&p).unwrap() - (20.0 + 100.0)).abs() < 1e-9);
        assert!(simulate_deterministic(&c, &Configuration::from_seed(8), 30.0).is_err());
    }

    #[test]
    fn ceiling_guard() {
        let spec = ModelSpec::EmptyHistory { mu: 1.0, kernel: Kernel::exponential(0.9, 1.0), link: Link::Identity };
        let opts = SimOptions { max_ceiling: 2.5, verify: false };
        let r = simulate_with(&spec, &Configuration::from_seed(1), 200.0, &opts);
        assert!(matches!(r, Err(Error::CeilingOverflow { .. })));
    }

    #[test]
    fn discrete_intensities_follow_the_recursion() {
        let specs = [
            DiscreteSpec { alpha0: 1.0, alphas: DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: None } },
            DiscreteSpec { alpha0: 1.0, alphas: DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: Some(40) } },
            DiscreteSpec { alpha0: 0.5, alphas: DiscreteKernel::Finite { values: vec![0.2, 0.0, 0.3] } },
        ];
        for spec in specs {
            let p = simulate_discrete(&spec, 300, 17).unwrap();
            for k in 1..=300 {
                let direct: f64 =
                    spec.alpha0 + (1..k).map(|i| spec.alphas.coefficient(k - i) * p.counts[i - 1] as f64).sum::<f64>();
                assert!((p.intensities[k - 1] - direct).abs() < 1e-12 * direct);
            }
            assert_eq!(p, simulate_discrete(&spec, 300, 17).unwrap());
        }
    }

    #[test]
    fn discrete_prefix_is_stable() {
        let spec = DiscreteSpec { alpha0: 1.0, alphas: DiscreteKernel::Finite { values: vec![0.4] } };
        let a = simulate_discrete(&spec, 50, 3).unwrap();
        let b = simulate_discrete(&spec, 80, 3).unwrap();
        assert_eq!(a.counts[..], b.counts[..50]);
    }
}
