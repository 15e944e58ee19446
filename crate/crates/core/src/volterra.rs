//! Convolution-type Volterra equations on a uniform grid.
//!
//! All convolutions use trapezoidal weights, `(f∗g)(t_k) ≈ dt·Σ w_j f_j g_{k−j}`
//! with half weights at both ends. The equation `L = M + Φ∗L` is solved by
//! forward substitution, treating the `j = k` term implicitly.

use crate::error::{Error, Result};
use crate::model::{Kernel, ModelSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    dt: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::GridMismatch(format!("grid step must be positive, got {dt}")));
        }
        Ok(GridFunction { dt, values })
    }

    /// Samples `f` at `k·dt` for k = 0..=round(horizon/dt).
    pub fn sample(dt: f64, horizon: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = (horizon / dt).round() as usize + 1;
        Self::new(dt, (0..n).map(|k| f(k as f64 * dt)).collect())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.values.len().saturating_sub(1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| k as f64 * self.dt)
    }

    /// Linear interpolation, constant beyond either end.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let u = t / self.dt;
        if u <= 0.0 {
            return self.values[0];
        }
        let k = u.floor() as usize;
        if k + 1 >= n {
            return self.values[n - 1];
        }
        let w = u - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    /// Trapezoidal ∫ over the whole grid.
    pub fn integral(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.dt * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    pub fn abs(&self) -> GridFunction {
        GridFunction { dt: self.dt, values: self.values.iter().map(|v| v.abs()).collect() }
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction { dt: self.dt, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        check_dt(self, other)?;
        if self.len() != other.len() {
            return Err(Error::GridMismatch(format!("lengths {} and {}", self.len(), other.len())));
        }
        Ok(GridFunction { dt: self.dt, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Exact (min, max) of the interpolant over [a, b].
    pub fn range_on(&self, a: f64, b: f64) -> (f64, f64) {
        let (fa, fb) = (self.eval(a), self.eval(b));
        let (mut lo, mut hi) = (fa.min(fb), fa.max(fb));
        let k0 = ((a / self.dt).floor().max(0.0) as usize).min(self.values.len());
        let mut k = k0;
        while k < self.values.len() && (k as f64) * self.dt < b {
            if (k as f64) * self.dt > a {
                lo = lo.min(self.values[k]);
                hi = hi.max(self.values[k]);
            }
            k += 1;
        }
        (lo, hi)
    }
}

fn check_dt(f: &GridFunction, g: &GridFunction) -> Result<()> {
    if f.dt != g.dt {
        return Err(Error::GridMismatch(format!("grid steps {} and {} differ", f.dt, g.dt)));
    }
    Ok(())
}

/// Causal trapezoidal convolution. The sum is evaluated in a symmetric
/// order so that `convolve(f, g) == convolve(g, f)` bit for bit.
pub fn convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    check_dt(f, g)?;
    let n = f.len().min(g.len());
    let (a, b) = (&f.values, &g.values);
    let mut out = vec![0.0; n];
    for (k, slot) in out.iter_mut().enumerate().skip(1) {
        let mut s = 0.5 * (a[0] * b[k] + a[k] * b[0]);
        let (mut lo, mut hi) = (1usize, k - 1);
        while lo < hi {
            s += a[lo] * b[hi] + a[hi] * b[lo];
            lo += 1;
            hi -= 1;
        }
        if lo == hi {
            s += a[lo] * b[lo];
        }
        *slot = f.dt * s;
    }
    Ok(GridFunction { dt: f.dt, values: out })
}

/// Solves L = M + Φ∗L on the common grid.
pub fn solve_volterra(m: &GridFunction, phi: &GridFunction) -> Result<GridFunction> {
    check_dt(m, phi)?;
    let norm = phi.abs().integral();
    if !(norm < 1.0) {
        return Err(Error::Unstable { norm });
    }
    Ok(forward_solve(m, phi))
}

fn forward_solve(m: &GridFunction, phi: &GridFunction) -> GridFunction {
    let n = m.len().min(phi.len());
    let dt = m.dt;
    let p = &phi.values;
    let mut l = vec![0.0; n];
    if n == 0 {
        return GridFunction { dt, values: l };
    }
    l[0] = m.values[0];
    let diag = 1.0 - 0.5 * dt * p[0];
    for k in 1..n {
        let hist: f64 = p[1..k].iter().rev().zip(&l[1..k]).map(|(a, b)| a * b).sum();
        l[k] = (m.values[k] + dt * (hist + 0.5 * p[k] * l[0])) / diag;
    }
    GridFunction { dt, values: l }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolventGrid {
    pub base: GridFunction,
    pub alpha: f64,
    /// α‖φ‖₁
    pub ratio: f64,
    /// Mass of ψ beyond the grid: Σ_{k≥1} (α‖φ‖₁)^k minus the captured integral.
    pub l1_tail_bound: f64,
}

impl ResolventGrid {
    /// Σ_{k>K} (α‖φ‖₁)^k, the L¹ mass left out by a K-term Neumann sum.
    pub fn neumann_tail(&self, terms: usize) -> f64 {
        self.ratio.powi(terms as i32 + 1) / (1.0 - self.ratio)
    }
}

/// ψ^(α) = Σ_{k≥1} α^k |φ|^{∗k}, via ψ = α|φ| + α|φ|∗ψ.
pub fn resolvent(kernel: &Kernel, alpha: f64, horizon: f64, dt: f64) -> Result<ResolventGrid> {
    let ratio = alpha * kernel.l1_norm();
    if !(ratio < 1.0) || alpha < 0.0 {
        return Err(Error::Unstable { norm: ratio });
    }
    let a = GridFunction::sample(dt, horizon, |t| alpha * kernel.eval(t).abs())?;
    let psi = forward_solve(&a, &a);
    let captured = psi.integral();
    Ok(ResolventGrid { base: psi, alpha, ratio, l1_tail_bound: (ratio / (1.0 - ratio) - captured).max(0.0) })
}

/// Σ_{k=1}^{K} α^k |φ|^{∗k} by repeated convolution.
pub fn neumann_series(kernel: &Kernel, alpha: f64, horizon: f64, dt: f64, terms: usize) -> Result<GridFunction> {
    let a = GridFunction::sample(dt, horizon, |t| alpha * kernel.eval(t).abs())?;
    let mut power = a.clone();
    let mut sum = a.clone();
    for _ in 1..terms {
        power = convolve(&a, &power)?;
        sum = sum.add(&power)?;
    }
    Ok(sum)
}

/// E[λ_t] for λ_t = μ + c·Σφ(t − t_i): solves m = μ + cφ∗m.
pub fn mean_intensity_linear(mu: f64, kernel: &Kernel, gain: f64, horizon: f64, dt: f64) -> Result<GridFunction> {
    let m = GridFunction::sample(dt, horizon, |_| mu)?;
    let phi = GridFunction::sample(dt, horizon, |t| gain * kernel.eval(t))?;
    solve_volterra(&m, &phi)
}

/// E[λ^T_t] on [0, T] for the nearly unstable model.
pub fn mean_intensity_nearly_unstable(spec: &ModelSpec, dt: f64) -> Result<GridFunction> {
    spec.ensure_valid()?;
    match spec {
        ModelSpec::NearlyUnstable { mu, kernel, horizon } => {
            mean_intensity_linear(*mu, kernel, 1.0 - 1.0 / horizon, *horizon, dt)
        }
        other => Err(Error::InvalidArgument(format!("expected a nearly unstable model, got {}", other.variant()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_grid(dt: f64, horizon: f64, rate: f64) -> GridFunction {
        GridFunction::sample(dt, horizon, |t| (-rate * t).exp()).unwrap()
    }

    #[test]
    fn convolution_of_zero() {
        let z = GridFunction::sample(0.01, 5.0, |_| 0.0).unwrap();
        let g = exp_grid(0.01, 5.0, 1.0);
        assert!(convolve(&z, &g).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exponential_self_convolution() {
        let dt = 1e-3;
        let f = exp_grid(dt, 10.0, 1.0);
        let c = convolve(&f, &f).unwrap();
        let exact = GridFunction::sample(dt, 10.0, |t| t * (-t).exp()).unwrap();
        assert!(c.max_abs_diff(&exact) < 5.0 * dt);
    }

    #[test]
    fn convolution_commutes_exactly() {
        let dt = 0.01;
        let f = GridFunction::sample(dt, 3.0, |t| (3.0 * t).sin() + 0.1).unwrap();
        let g = GridFunction::sample(dt, 3.0, |t| 1.0 / (1.0 + t * t)).unwrap();
        assert_eq!(convolve(&f, &g).unwrap(), convolve(&g, &f).unwrap());
    }

    #[test]
    fn mismatched_steps() {
        let f = exp_grid(0.01, 1.0, 1.0);
        let g = exp_grid(0.02, 1.0, 1.0);
        assert!(matches!(convolve(&f, &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn resolvent_exponential_closed_form() {
        let r = resolvent(&Kernel::exponential(1.0, 1.0), 0.5, 10.0, 1e-3).unwrap();
        let exact = GridFunction::sample(1e-3, 10.0, |t| 0.5 * (-0.5 * t).exp()).unwrap();
        assert!(r.base.max_abs_diff(&exact) < 1e-4);
        assert!(r.base.values().iter().all(|v| *v >= 0.0));
        assert!(r.base.integral() <= r.ratio / (1.0 - r.ratio) + 1e-6);
        assert!((r.l1_tail_bound - (-5f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn resolvent_of_zero_kernel() {
        let r = resolvent(&Kernel::exponential(0.0, 1.0), 0.5, 5.0, 0.01).unwrap();
        assert!(r.base.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn resolvent_rejects_unstable() {
        assert!(matches!(resolvent(&Kernel::exponential(1.0, 1.0), 1.0, 5.0, 0.01), Err(Error::Unstable { .. })));
    }

    #[test]
    fn refinement_at_least_halves_error() {
        let k = Kernel::exponential(1.0, 1.0);
        let err = |dt: f64| {
            let r = resolvent(&k, 0.5, 5.0, dt).unwrap();
            let exact = GridFunction::sample(dt, 5.0, |t| 0.5 * (-0.5 * t).exp()).unwrap();
            r.base.max_abs_diff(&exact)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e2 <= 0.5 * e1, "{e1} {e2}");
    }

    #[test]
    fn neumann_matches_fixed_point() {
        let k = Kernel::exponential(0.8, 2.0);
        let r = resolvent(&k, 0.7, 8.0, 0.005).unwrap();
        let s = neumann_series(&k, 0.7, 8.0, 0.005, 12).unwrap();
        let diff = GridFunction::new(0.005, r.base.values().iter().zip(s.values()).map(|(a, b)| a - b).collect()).unwrap();
        assert!(diff.values().iter().all(|v| *v >= -1e-12));
        assert!(diff.integral() <= r.neumann_tail(12) + 1e-9);
    }

    #[test]
    fn volterra_with_zero_kernel_is_identity() {
        let m = GridFunction::sample(0.01, 2.0, |t| t.cos()).unwrap();
        let z = GridFunction::sample(0.01, 2.0, |_| 0.0).unwrap();
        assert_eq!(solve_volterra(&m, &z).unwrap(), m);
    }

    #[test]
    fn renewal_limit() {
        // Φ = 0.6·2e^{−2t}: mean lifetime 0.5, so t = 10 is 20 lifetimes
        let dt = 1e-3;
        let l = mean_intensity_linear(1.5, &Kernel::exponential(0.6, 2.0), 1.0, 10.0, dt).unwrap();
        let limit = 1.5 / (1.0 - 0.6);
        assert!((l.values().last().unwrap() - limit).abs() < 0.01 * limit);
    }

    #[test]
    fn volterra_rejects_norm_one() {
        let m = GridFunction::sample(0.01, 50.0, |_| 1.0).unwrap();
        let phi = GridFunction::sample(0.01, 50.0, |t| 1.1 * (-t).exp()).unwrap();
        assert!(matches!(solve_volterra(&m, &phi), Err(Error::Unstable { .. })));
    }

    #[test]
    fn volterra_agrees_with_resolvent_form() {
        let dt = 1e-3;
        let k = Kernel::exponential(0.5, 1.0);
        let m = GridFunction::sample(dt, 6.0, |t| 1.0 + (2.0 * t).sin().abs()).unwrap();
        let phi = GridFunction::sample(dt, 6.0, |t| k.eval(t)).unwrap();
        let l = solve_volterra(&m, &phi).unwrap();
        let psi = resolvent(&k, 1.0, 6.0, dt).unwrap().base;
        let alt = m.add(&convolve(&psi, &m).unwrap()).unwrap();
        assert!(l.max_abs_diff(&alt) < 10.0 * dt);
    }

    #[test]
    fn nearly_unstable_mean_curve() {
        let spec = ModelSpec::NearlyUnstable { mu: 1.0, kernel: Kernel::exponential(1.0, 1.0), horizon: 10.0 };
        let m = mean_intensity_nearly_unstable(&spec, 1e-3).unwrap();
        let exact = GridFunction::sample(1e-3, 10.0, |t| 10.0 - 9.0 * (-t / 10.0).exp()).unwrap();
        assert!(m.max_abs_diff(&exact) < 1e-3);
        assert_eq!(m.values()[0], 1.0);
        assert!(m.values().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn grid_eval_and_range() {
        let g = GridFunction::new(0.5, vec![0.0, 2.0, -1.0, 1.0]).unwrap();
        assert_eq!(g.eval(0.25), 1.0);
        assert_eq!(g.eval(9.0), 1.0);
        assert_eq!(g.range_on(0.1, 1.2), (-1.0, 2.0));
        assert_eq!(g.range_on(0.0, 0.25), (0.0, 1.0));
    }
}
