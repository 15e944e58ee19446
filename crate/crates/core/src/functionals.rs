//! Normalized functionals of simulated paths, pathwise Malliavin
//! derivatives, and Monte Carlo estimates of the Wasserstein bound terms.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driving_measure::{Atom, Configuration};
use crate::error::{Error, Result};
use crate::model::{derived_constants, DiscreteSpec, ModelSpec};
use crate::rng;
use crate::simulate::{self, integrate_pair, simulate, simulate_coupled, DiscretePath, EventPath, IntensityLaw, Power};
use crate::volterra::{self, GridFunction};
use crate::wasserstein::{self, DistanceEstimate};

/// Choice of g in Z_t = 1/√(T g(t)); f is always the model intensity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// g ≡ 1: F = (H_T − ∫λ)/√T.
    #[default]
    UnitG,
    /// g = λ: the variance-reduced functional.
    SelfG,
    /// f = g = E[λ_t], a deterministic curve.
    DeterministicG,
    /// g ≡ Δ_T²/T with Δ_T² = rate·T.
    DeltaT { rate: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteMode {
    /// (H_n − Σλ_k)/√n
    #[default]
    Martingale,
    /// (H_n − nς²)/√n
    RawCount,
}

fn root_t(path: &EventPath) -> f64 {
    path.horizon().sqrt()
}

/// (H_T − ∫₀ᵀλ)/√T.
pub fn functional_standard(path: &EventPath) -> Result<f64> {
    Ok((path.count() as f64 - simulate::compensator(path)?) / root_t(path))
}

/// (H_T − ∫₀ᵀλ)/Δ_T.
pub fn functional_delta(path: &EventPath, delta_t: f64) -> Result<f64> {
    if !(delta_t > 0.0) {
        return Err(Error::InvalidArgument(format!("Δ_T must be positive, got {delta_t}")));
    }
    Ok((path.count() as f64 - simulate::compensator(path)?) / delta_t)
}

fn reduced_value(path: &EventPath) -> Result<f64> {
    let t = path.horizon();
    let first = path.first_at_or_after(0.0);
    let jumps: f64 = path.intensities()[first..].iter().map(|l| 1.0 / (t * l).sqrt()).sum();
    let drift = path.evaluator().integral_power(0.0, t, Power::Half)?;
    Ok(jumps - drift / t.sqrt())
}

/// Σ (Tλ(t_i))^{−1/2} − T^{−1/2}∫√λ, for specs whose intensity is bounded
/// below by a positive constant.
pub fn functional_reduced(path: &EventPath) -> Result<f64> {
    let floor = match path.law() {
        IntensityLaw::Model(spec) => spec.positivity_floor().ok_or_else(|| {
            Error::Inadmissible(format!(
                "{} model has no certified positive lower bound (needs non-decreasing h, φ ≥ 0, h(μ) > 0)",
                spec.variant()
            ))
        })?,
        IntensityLaw::Curve(c) => c.values().iter().copied().fold(f64::INFINITY, f64::min),
    };
    if !(floor > 0.0) {
        return Err(Error::Inadmissible("intensity curve is not bounded away from 0".into()));
    }
    let first = path.first_at_or_after(0.0);
    for (a, l) in path.events()[first..].iter().zip(&path.intensities()[first..]) {
        if !(*l >= floor * (1.0 - 1e-12)) {
            return Err(Error::NonPositiveIntensity { t: a.t, value: *l });
        }
    }
    reduced_value(path)
}

/// F̂^T: the path must be thinned against `mean_curve` itself.
pub fn functional_nearly(path: &EventPath, mean_curve: &GridFunction) -> Result<f64> {
    match path.law() {
        IntensityLaw::Curve(c) if c == mean_curve => {}
        _ => return Err(Error::GridMismatch("path was not thinned against this mean curve".into())),
    }
    if mean_curve.horizon() + 1e-9 * path.horizon() < path.horizon() {
        return Err(Error::GridMismatch("mean curve is shorter than the path horizon".into()));
    }
    functional_reduced(path)
}

pub fn functional_discrete(path: &DiscretePath, spec: &DiscreteSpec, mode: DiscreteMode) -> f64 {
    let n = path.len() as f64;
    let h = path.total() as f64;
    match mode {
        DiscreteMode::Martingale => (h - path.intensities.iter().sum::<f64>()) / n.sqrt(),
        DiscreteMode::RawCount => (h - n * spec.varsigma2()) / n.sqrt(),
    }
}

/// ε_n = √n·F^n − (1−|α|)H_n + nα₀ (martingale F^n); non-negative on every path.
pub fn discrete_residual(path: &DiscretePath, spec: &DiscreteSpec) -> f64 {
    let n = path.len() as f64;
    let h = path.total() as f64;
    n.sqrt() * functional_discrete(path, spec, DiscreteMode::Martingale) - (1.0 - spec.alphas.mass()) * h + n * spec.alpha0
}

/// The same residual accumulated as Σ_i X_i (|α| − Σ_{j ≤ n−i} α_j), which
/// is non-negative term by term.
pub fn discrete_residual_by_lags(path: &DiscretePath, spec: &DiscreteSpec) -> f64 {
    let n = path.len();
    let mass = spec.alphas.mass();
    let mut partial = vec![0.0; n + 1];
    for m in 1..=n {
        partial[m] = partial[m - 1] + spec.alphas.coefficient(m);
    }
    path.counts.iter().enumerate().map(|(i, x)| *x as f64 * (mass - partial[n - 1 - i]).max(0.0)).sum()
}

/// Which functional a Malliavin derivative acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Standard,
    Reduced,
}

pub fn evaluate_target(path: &EventPath, target: Target) -> Result<f64> {
    match target {
        Target::Standard => functional_standard(path),
        Target::Reduced => functional_reduced(path),
    }
}

/// D_{(t,0)}F = F∘ε⁺_{(t,0)} − F.
pub fn malliavin_derivative(spec: &ModelSpec, config: &Configuration, horizon: f64, shift_t: f64, target: Target) -> Result<f64> {
    let (base, shifted) = simulate_coupled(spec, config, horizon, Atom::new(shift_t, 0.0))?;
    Ok(evaluate_target(&shifted, target)? - evaluate_target(&base, target)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate::default();
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate { mean, se: (var / n).sqrt() }
    }
}

/// i.i.d. realizations of one scalar functional.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSample {
    pub values: Vec<f64>,
    pub sigma2_target: f64,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub label: String,
}

impl FunctionalSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Estimate {
        Estimate::from_samples(&self.values)
    }

    /// Sample variance with a fourth-moment standard error.
    pub fn variance(&self) -> Estimate {
        let n = self.values.len() as f64;
        let m = self.values.iter().sum::<f64>() / n;
        let dev2: Vec<f64> = self.values.iter().map(|x| (x - m).powi(2)).collect();
        let s2 = dev2.iter().sum::<f64>() / (n - 1.0);
        let m4 = dev2.iter().map(|d| d * d).sum::<f64>() / n;
        Estimate { mean: s2, se: ((m4 - s2 * s2).max(0.0) / n).sqrt() }
    }

    /// Moment E[F^k] with its standard error.
    pub fn raw_moment(&self, k: i32) -> Estimate {
        let xs: Vec<f64> = self.values.iter().map(|x| x.powi(k)).collect();
        Estimate::from_samples(&xs)
    }

    pub fn distance(&self, resamples: usize, seed: u64) -> Result<DistanceEstimate> {
        wasserstein::estimate_distance(&self.values, self.sigma2_target, resamples, seed)
    }
}

/// Runs `f(seed)` for each replication seed in parallel; output order is
/// the replication order whatever the thread count.
pub fn replicate<F>(reps: usize, base_seed: u64, horizon_index: u64, f: F) -> Result<(Vec<f64>, Vec<u64>)>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let seeds: Vec<u64> = (0..reps as u64).map(|r| rng::replication_seed(base_seed, horizon_index, r)).collect();
    let values = seeds.par_iter().map(|s| f(*s)).collect::<Result<Vec<f64>>>()?;
    Ok((values, seeds))
}

/// Functional families a batch can be drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FunctionalKind {
    Standard,
    Reduced,
    /// F̂^T against E[λ_t] (nearly unstable or any linear model).
    Nearly,
    Discrete(DiscreteMode),
    Delta {
        rate: f64,
    },
}

impl FunctionalKind {
    pub fn for_normalization(spec: &ModelSpec, n: Normalization, discrete_mode: DiscreteMode) -> Result<Self> {
        Ok(match (spec, n) {
            (ModelSpec::Discrete(_), Normalization::UnitG) => FunctionalKind::Discrete(discrete_mode),
            (ModelSpec::Discrete(_), other) => {
                return Err(Error::Inadmissible(format!("discrete models support only unit_g, got {other:?}")))
            }
            (ModelSpec::NearlyUnstable { .. }, Normalization::UnitG) => {
                return Err(Error::Inadmissible(
                    "(H_T − ∫λ)/√T has no fixed Gaussian target in the nearly unstable regime".into(),
                ))
            }
            (_, Normalization::UnitG) => FunctionalKind::Standard,
            (_, Normalization::SelfG) => FunctionalKind::Reduced,
            (_, Normalization::DeterministicG) => FunctionalKind::Nearly,
            (_, Normalization::DeltaT { rate }) => FunctionalKind::Delta { rate },
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            FunctionalKind::Standard => "standard",
            FunctionalKind::Reduced => "reduced",
            FunctionalKind::Nearly => "nearly",
            FunctionalKind::Discrete(DiscreteMode::Martingale) => "discrete_martingale",
            FunctionalKind::Discrete(DiscreteMode::RawCount) => "discrete_raw_count",
            FunctionalKind::Delta { .. } => "delta",
        }
    }
}

/// E[λ_t] on [0, T] for specs whose mean intensity solves a linear
/// renewal equation.
pub fn mean_curve(spec: &ModelSpec, horizon: f64) -> Result<GridFunction> {
    let dt = (horizon / 20_000.0).min(1e-2);
    match spec {
        ModelSpec::NearlyUnstable { mu, kernel, horizon: h } => {
            volterra::mean_intensity_linear(*mu, kernel, 1.0 - 1.0 / h, horizon, dt)
        }
        ModelSpec::EmptyHistory { mu, kernel, link: crate::model::Link::Identity } if kernel.is_non_negative() => {
            volterra::mean_intensity_linear(*mu, kernel, 1.0, horizon, dt)
        }
        other => Err(Error::Inadmissible(format!("no deterministic mean curve for the {} model", other.variant()))),
    }
}

/// Gaussian target variance for a functional family.
pub fn target_variance(spec: &ModelSpec, kind: FunctionalKind, seed: u64) -> Result<f64> {
    let d = derived_constants(spec)?;
    Ok(match kind {
        FunctionalKind::Reduced | FunctionalKind::Nearly => d.sigma2_reduced,
        FunctionalKind::Discrete(DiscreteMode::Martingale) => d.sigma2_target.unwrap_or(f64::NAN),
        FunctionalKind::Discrete(DiscreteMode::RawCount) => d.raw_count_variance.unwrap_or(f64::NAN),
        FunctionalKind::Standard | FunctionalKind::Delta { .. } => {
            let s2 = match d.sigma2_target {
                Some(s) => s,
                None => estimate_stationary_mean(spec, 2000.0, 64, seed)?.mean,
            };
            match kind {
                FunctionalKind::Delta { rate } => s2 / rate,
                _ => s2,
            }
        }
    })
}

/// Draws `reps` realizations at one horizon (T, or n steps for discrete models).
pub fn sample_functional(
    spec: &ModelSpec,
    kind: FunctionalKind,
    horizon: f64,
    reps: usize,
    base_seed: u64,
    horizon_index: u64,
) -> Result<FunctionalSample> {
    spec.ensure_valid()?;
    let sigma2 = target_variance(spec, kind, base_seed)?;
    let (values, seeds) = match kind {
        FunctionalKind::Discrete(mode) => {
            let ModelSpec::Discrete(d) = spec else {
                return Err(Error::Inadmissible("discrete functional on a continuous model".into()));
            };
            let n = horizon.round() as usize;
            replicate(reps, base_seed, horizon_index, |s| {
                Ok(functional_discrete(&simulate::simulate_discrete(d, n, s)?, d, mode))
            })?
        }
        FunctionalKind::Nearly => {
            let curve = mean_curve(spec, horizon)?;
            replicate(reps, base_seed, horizon_index, |s| {
                let p = simulate::simulate_deterministic(&curve, &Configuration::from_seed(s), horizon)?;
                functional_nearly(&p, &curve)
            })?
        }
        FunctionalKind::Standard | FunctionalKind::Reduced | FunctionalKind::Delta { .. } => {
            if let (FunctionalKind::Delta { rate }, Some(floor)) = (kind, spec_mu(spec)) {
                if rate < floor {
                    return Err(Error::Inadmissible(format!("Δ_T² = {rate}·T is below μ·T = {floor}·T")));
                }
            }
            replicate(reps, base_seed, horizon_index, |s| {
                let p = simulate(spec, &Configuration::from_seed(s), horizon)?;
                match kind {
                    FunctionalKind::Standard => functional_standard(&p),
                    FunctionalKind::Reduced => functional_reduced(&p),
                    FunctionalKind::Delta { rate } => functional_delta(&p, (rate * horizon).sqrt()),
                    _ => unreachable!(),
                }
            })?
        }
    };
    Ok(FunctionalSample { values, sigma2_target: sigma2, horizon, seeds, label: kind.label().to_string() })
}

fn spec_mu(spec: &ModelSpec) -> Option<f64> {
    match spec {
        ModelSpec::EmptyHistory { mu, .. } | ModelSpec::Stationaryized { mu, .. } | ModelSpec::NearlyUnstable { mu, .. } => {
            Some(*mu)
        }
        _ => None,
    }
}

/// Long-run E[λ] from burn-in paths: mean of (1/T)∫₀ᵀλ.
pub fn estimate_stationary_mean(spec: &ModelSpec, horizon: f64, reps: usize, seed: u64) -> Result<Estimate> {
    let stationary = match spec {
        ModelSpec::EmptyHistory { mu, kernel, link } => ModelSpec::Stationaryized {
            mu: *mu,
            kernel: kernel.clone(),
            link: link.clone(),
            burn_in: kernel.burn_in_for(link.lipschitz(), 5e-7),
        },
        s @ ModelSpec::Stationaryized { .. } => s.clone(),
        other => return Err(Error::Inadmissible(format!("no stationary version of the {} model", other.variant()))),
    };
    let (vals, _) = replicate(reps, seed, u64::MAX, |s| {
        let p = simulate(&stationary, &Configuration::from_seed(s), horizon)?;
        Ok(simulate::compensator(&p)? / horizon)
    })?;
    Ok(Estimate::from_samples(&vals))
}

/// Estimated right-hand side of the Wasserstein bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTerms {
    pub normalization: Normalization,
    pub horizon: f64,
    pub reps: usize,
    pub t_subsample: usize,
    pub sigma2: f64,
    /// E|σ² − (1/T)∫f/g|, T^{−3/2}E∫f/g^{3/2}, and the three δ terms.
    pub terms: [Estimate; 5],
    pub total: Estimate,
    /// f = g decomposition: E[F³], the two double integrals, and the
    /// signed conditional-expectation term.
    pub reduced: Option<[Estimate; 4]>,
    pub simulations: usize,
}

/// Simulations `bound_terms` will run.
pub fn simulation_cost(reps: usize, t_subsample: usize, normalization: Normalization) -> usize {
    match normalization {
        Normalization::SelfG => reps * (1 + t_subsample),
        _ => reps,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundOptions {
    pub seed: u64,
    /// σ² for UnitG; taken from the closed form (or a long-run estimate) when absent.
    pub sigma2: Option<f64>,
    pub max_simulations: Option<usize>,
}

struct RepTerms {
    parts: [f64; 5],
    reduced: [f64; 4],
}

pub fn bound_terms(
    spec: &ModelSpec,
    horizon: f64,
    reps: usize,
    t_subsample: usize,
    normalization: Normalization,
    opts: &BoundOptions,
) -> Result<BoundTerms> {
    if t_subsample == 0 || reps == 0 {
        return Err(Error::InvalidArgument("reps and t_subsample must be at least 1".into()));
    }
    let cost = simulation_cost(reps, t_subsample, normalization);
    if let Some(max) = opts.max_simulations {
        if cost > max {
            return Err(Error::BudgetExceeded(format!("bound_terms needs {cost} simulations, budget is {max}")));
        }
    }
    let sigma2 = match normalization {
        Normalization::UnitG => match opts.sigma2 {
            Some(s) => s,
            None => target_variance(spec, FunctionalKind::Standard, opts.seed)?,
        },
        Normalization::SelfG => {
            if spec.positivity_floor().is_none() {
                return Err(Error::Inadmissible("self-normalization needs a positive intensity floor".into()));
            }
            1.0
        }
        other => return Err(Error::Inadmissible(format!("bound_terms supports unit_g and self_g, got {other:?}"))),
    };
    let seeds: Vec<u64> = (0..reps as u64).map(|r| rng::replication_seed(opts.seed, 0, r)).collect();
    let per_rep: Vec<RepTerms> = seeds
        .par_iter()
        .map(|&s| match normalization {
            Normalization::UnitG => unit_g_rep(spec, horizon, sigma2, s),
            _ => self_g_rep(spec, horizon, t_subsample, s),
        })
        .collect::<Result<_>>()?;
    let col = |k: usize| Estimate::from_samples(&per_rep.iter().map(|r| r.parts[k]).collect::<Vec<_>>());
    let terms = [col(0), col(1), col(2), col(3), col(4)];
    let total = Estimate::from_samples(&per_rep.iter().map(|r| r.parts.iter().sum()).collect::<Vec<f64>>());
    let reduced = (normalization == Normalization::SelfG).then(|| {
        let c = |k: usize| Estimate::from_samples(&per_rep.iter().map(|r| r.reduced[k]).collect::<Vec<_>>());
        [c(0), c(1), c(2), c(3)]
    });
    Ok(BoundTerms { normalization, horizon, reps, t_subsample, sigma2, terms, total, reduced, simulations: cost })
}

fn unit_g_rep(spec: &ModelSpec, horizon: f64, sigma2: f64, seed: u64) -> Result<RepTerms> {
    let p = simulate(spec, &Configuration::from_seed(seed), horizon)?;
    let comp = simulate::compensator(&p)?;
    // g is deterministic, so its Malliavin derivative and the δ terms vanish
    Ok(RepTerms { parts: [(sigma2 - comp / horizon).abs(), comp / horizon.powf(1.5), 0.0, 0.0, 0.0], reduced: [0.0; 4] })
}

fn self_g_rep(spec: &ModelSpec, horizon: f64, k_max: usize, seed: u64) -> Result<RepTerms> {
    let t = horizon;
    let rt = t.sqrt();
    let config = Configuration::from_seed(seed);
    let base = simulate(spec, &config, t)?;
    let ev = base.evaluator();
    let f = functional_reduced(&base)?;
    let inv_sqrt = ev.integral_power(0.0, t, Power::MinusHalf)?;

    let mut sub = rng::stream(rng::keyed(rng::domain::SUBSAMPLE, seed, 0, 0));
    let times: Vec<f64> = (0..k_max).map(|_| sub.random::<f64>() * t).collect();
    let shifted: Vec<EventPath> =
        times.iter().map(|&u| simulate(spec, &config.shift(Atom::new(u, 0.0)), t)).collect::<Result<_>>()?;

    let dz = |l: f64, lp: f64| (1.0 / lp.sqrt() - 1.0 / l.sqrt()) / rt;
    let mut lam_t = Vec::with_capacity(k_max);
    let mut deltas = Vec::with_capacity(k_max);
    let (mut a3, mut a4, mut a5, mut b, mut d) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (u, sp) in times.iter().zip(&shifted) {
        let es = sp.evaluator();
        let lt = ev.intensity(*u);
        let jumps: f64 = base.events()[base.first_at_or_after(*u)..]
            .iter()
            .filter(|a| a.t > *u)
            .map(|a| dz(ev.intensity(a.t), es.intensity(a.t)))
            .sum();
        let drift = integrate_pair(&base, sp, *u, t, |l, lp| l * dz(l, lp))?;
        let delta = jumps - drift;
        a3 += lt.sqrt() * delta.abs();
        a4 += lt.sqrt() * delta * delta;
        a5 += delta.abs();
        b += lt.sqrt() * integrate_pair(&base, sp, *u, t, |l, lp| l.sqrt() * dz(l, lp).abs())?;
        d += lt.sqrt() * integrate_pair(&base, sp, *u, t, |l, lp| l.sqrt() * dz(l, lp))?;
        lam_t.push(lt);
        deltas.push(delta);
    }
    let k = k_max as f64;
    // outer dt-integrals: T · (average over uniform shift times)
    let parts = [0.0, inv_sqrt / t.powf(1.5), t * a3 / (k * rt), t * a4 / (k * rt), 2.0 * a5 / k];
    let mut c = 0.0;
    if k_max >= 2 {
        for (i, ui) in times.iter().enumerate() {
            let es = shifted[i].evaluator();
            for (j, uj) in times.iter().enumerate() {
                if uj > ui {
                    let ls = ev.intensity(*uj);
                    c += lam_t[i].sqrt() * ls * (deltas[j] * dz(ls, es.intensity(*uj))).abs();
                }
            }
        }
        c *= t * t / (rt * k * (k - 1.0));
    }
    Ok(RepTerms { parts, reduced: [f * f * f, b / k, c, -2.0 * d / k] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscreteKernel, Kernel, Link};

    fn linear() -> ModelSpec {
        ModelSpec::EmptyHistory { mu: 1.0, kernel: Kernel::exponential(0.5, 1.0), link: Link::Identity }
    }

    fn poisson(mu: f64) -> ModelSpec {
        ModelSpec::EmptyHistory { mu, kernel: Kernel::exponential(0.0, 1.0), link: Link::Identity }
    }

    #[test]
    fn empty_poisson_path_value() {
        // find a seed with no atoms under μ = 0.05 on [0, 4)
        let spec = poisson(0.05);
        let seed = (0..1000).find(|s| simulate(&spec, &Configuration::from_seed(*s), 4.0).unwrap().count() == 0).unwrap();
        let p = simulate(&spec, &Configuration::from_seed(seed), 4.0).unwrap();
        assert!((functional_standard(&p).unwrap() + 0.05 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn reduced_equals_normalized_poisson() {
        let p = simulate(&poisson(2.5), &Configuration::from_seed(3), 30.0).unwrap();
        let direct = (p.count() as f64 - 75.0) / 75f64.sqrt();
        assert!((functional_reduced(&p).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn reduced_rejects_inhibition() {
        let spec = ModelSpec::EmptyHistory { mu: 1.0, kernel: Kernel::exponential(-0.5, 1.0), link: Link::PositivePart };
        let p = simulate(&spec, &Configuration::from_seed(1), 10.0).unwrap();
        assert!(matches!(functional_reduced(&p), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn nearly_requires_its_curve() {
        let c = GridFunction::sample(0.01, 10.0, |_| 2.0).unwrap();
        let other = GridFunction::sample(0.01, 10.0, |_| 3.0).unwrap();
        let p = simulate::simulate_deterministic(&c, &Configuration::from_seed(2), 10.0).unwrap();
        assert!(functional_nearly(&p, &other).is_err());
        let direct = (p.count() as f64 - 20.0) / 20f64.sqrt();
        assert!((functional_nearly(&p, &c).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn derivative_bookkeeping() {
        let cfg = Configuration::from_seed(21);
        let t = 30.0;
        let (b, s) = simulate_coupled(&linear(), &cfg, t, Atom::new(7.0, 0.0)).unwrap();
        let direct = malliavin_derivative(&linear(), &cfg, t, 7.0, Target::Standard).unwrap();
        let extra = s.count() as f64 - b.count() as f64 - 1.0;
        let dcomp = integrate_pair(&b, &s, 0.0, t, |l, lp| lp - l).unwrap();
        let book = (1.0 + extra - dcomp) / t.sqrt();
        assert!((direct - book).abs() < 1e-9, "{direct} vs {book}");
        assert_eq!(malliavin_derivative(&linear(), &cfg, t, 31.0, Target::Standard).unwrap(), 0.0);
    }

    #[test]
    fn discrete_residual_identities() {
        let spec = DiscreteSpec { alpha0: 1.0, alphas: DiscreteKernel::Geometric { first: 0.3, ratio: 0.5, terms: Some(40) } };
        for seed in 0..20 {
            let p = simulate::simulate_discrete(&spec, 500, seed).unwrap();
            let r = discrete_residual(&p, &spec);
            let lags = discrete_residual_by_lags(&p, &spec);
            assert!(lags >= 0.0);
            assert!((r - lags).abs() < 1e-8 * (1.0 + lags), "{r} {lags}");
        }
    }

    #[test]
    fn zero_feedback_discrete() {
        let spec = DiscreteSpec { alpha0: 2.0, alphas: DiscreteKernel::Finite { values: vec![] } };
        let p = simulate::simulate_discrete(&spec, 100, 1).unwrap();
        let direct = (p.total() as f64 - 200.0) / 10.0;
        assert!((functional_discrete(&p, &spec, DiscreteMode::Martingale) - direct).abs() < 1e-12);
    }

    #[test]
    fn unit_g_correction_terms_vanish() {
        let b =
            bound_terms(&linear(), 20.0, 8, 4, Normalization::UnitG, &BoundOptions { seed: 1, ..Default::default() }).unwrap();
        for k in 2..5 {
            assert_eq!(b.terms[k], Estimate { mean: 0.0, se: 0.0 });
        }
        assert_eq!(b.simulations, 8);
        assert_eq!(b.sigma2, 2.0);
    }

    #[test]
    fn self_g_without_feedback_has_no_corrections() {
        let b = bound_terms(&poisson(1.5), 20.0, 4, 6, Normalization::SelfG, &BoundOptions { seed: 2, ..Default::default() })
            .unwrap();
        for k in [0, 2, 3, 4] {
            assert_eq!(b.terms[k].mean, 0.0);
        }
        let r = b.reduced.unwrap();
        assert_eq!(r[1].mean, 0.0);
        assert_eq!(r[2].mean, 0.0);
        assert_eq!(r[3].mean, 0.0);
        assert!((b.terms[1].mean - 1.0 / (20.0 * 1.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bound_budget_is_checked_up_front() {
        let opts = BoundOptions { seed: 0, sigma2: None, max_simulations: Some(50) };
        let r = bound_terms(&linear(), 20.0, 10, 32, Normalization::SelfG, &opts);
        assert!(matches!(r, Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn replicate_is_ordered() {
        let (v, s) = replicate(50, 7, 2, |seed| Ok((seed % 1000) as f64)).unwrap();
        assert_eq!(s[3], rng::replication_seed(7, 2, 3));
        assert_eq!(v[10], (s[10] % 1000) as f64);
    }

    #[test]
    fn kinds_follow_normalization() {
        assert_eq!(
            FunctionalKind::for_normalization(&linear(), Normalization::SelfG, DiscreteMode::Martingale).unwrap(),
            FunctionalKind::Reduced
        );
        let nu = ModelSpec::NearlyUnstable { mu: 1.0, kernel: Kernel::exponential(1.0, 1.0), horizon: 10.0 };
        assert!(FunctionalKind::for_normalization(&nu, Normalization::UnitG, DiscreteMode::Martingale).is_err());
    }
}
