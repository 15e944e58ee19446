//! The driving Poisson measure on ℝ×ℝ₊ with unit intensity.
//!
//! Atoms are materialized per rectangular cell from a stream keyed by
//! `(seed, i, j)`, so every cell can be regenerated on demand and a path
//! and its shifted copy see exactly the same atoms.

use std::cmp::Ordering;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub t: f64,
    pub theta: f64,
}

impl Atom {
    pub fn new(t: f64, theta: f64) -> Self {
        Atom { t, theta }
    }
}

/// Lexicographic order on (t, θ).
pub fn atom_order(a: &Atom, b: &Atom) -> Ordering {
    a.t.total_cmp(&b.t).then(a.theta.total_cmp(&b.theta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub i: i64,
    pub j: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrivingMeasure {
    seed: u64,
    cell_dt: f64,
    cell_dtheta: f64,
}

impl DrivingMeasure {
    pub fn new(seed: u64) -> Self {
        DrivingMeasure { seed, cell_dt: 1.0, cell_dtheta: 1.0 }
    }

    pub fn with_cells(seed: u64, cell_dt: f64, cell_dtheta: f64) -> Result<Self> {
        if !(cell_dt > 0.0 && cell_dt.is_finite() && cell_dtheta > 0.0 && cell_dtheta.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell sizes must be positive and finite, got {cell_dt} x {cell_dtheta}")));
        }
        Ok(DrivingMeasure { seed, cell_dt, cell_dtheta })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cell_dt(&self) -> f64 {
        self.cell_dt
    }

    pub fn cell_dtheta(&self) -> f64 {
        self.cell_dtheta
    }

    pub fn column_of(&self, t: f64) -> i64 {
        (t / self.cell_dt).floor() as i64
    }

    pub fn strip_of(&self, theta: f64) -> u64 {
        (theta / self.cell_dtheta).floor().max(0.0) as u64
    }

    pub fn column_start(&self, i: i64) -> f64 {
        i as f64 * self.cell_dt
    }

    /// Atoms of one cell, sorted by (t, θ).
    pub fn cell_atoms(&self, cell: CellIndex) -> Vec<Atom> {
        let key = rng::keyed(rng::domain::CELL, self.seed, cell.i as u64, cell.j);
        let mut s = rng::stream(key);
        let n = rng::poisson(&mut s, self.cell_dt * self.cell_dtheta);
        let t0 = cell.i as f64 * self.cell_dt;
        let th0 = cell.j as f64 * self.cell_dtheta;
        let mut atoms: Vec<Atom> = (0..n)
            .map(|_| {
                let u: f64 = s.random();
                let v: f64 = s.random();
                Atom::new(t0 + u * self.cell_dt, th0 + v * self.cell_dtheta)
            })
            .collect();
        atoms.sort_by(atom_order);
        atoms
    }
}

/// A realization ω: the lazily generated measure plus atoms added by shifts.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    measure: DrivingMeasure,
    added: Vec<Atom>,
}

impl Configuration {
    pub fn new(measure: DrivingMeasure) -> Self {
        Configuration { measure, added: Vec::new() }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(DrivingMeasure::new(seed))
    }

    pub fn measure(&self) -> &DrivingMeasure {
        &self.measure
    }

    pub fn added_atoms(&self) -> &[Atom] {
        &self.added
    }

    pub fn contains(&self, atom: Atom) -> bool {
        if self.added.contains(&atom) {
            return true;
        }
        let cell = CellIndex { i: self.measure.column_of(atom.t), j: self.measure.strip_of(atom.theta) };
        self.measure.cell_atoms(cell).contains(&atom)
    }

    /// ε⁺: the configuration with `atom` present. Shifting at an atom that is
    /// already there returns an equal configuration.
    ///
    /// # Panics
    /// If `atom.theta` is negative or either coordinate is not finite.
    pub fn shift(&self, atom: Atom) -> Configuration {
        assert!(
            atom.theta >= 0.0 && atom.t.is_finite() && atom.theta.is_finite(),
            "shift point must have finite t and theta >= 0"
        );
        let mut out = self.clone();
        if !self.contains(atom) {
            let pos = out.added.partition_point(|a| atom_order(a, &atom) == Ordering::Less);
            out.added.insert(pos, atom);
        }
        out
    }

    /// Atoms of time column `i` in the given strips, sorted by (t, θ).
    pub fn column_atoms(&self, i: i64, strips: Range<u64>) -> Vec<Atom> {
        let mut atoms = Vec::new();
        for j in strips.clone() {
            atoms.extend(self.measure.cell_atoms(CellIndex { i, j }));
        }
        for a in &self.added {
            if self.measure.column_of(a.t) == i && strips.contains(&self.measure.strip_of(a.theta)) {
                atoms.push(*a);
            }
        }
        atoms.sort_by(atom_order);
        atoms
    }

    /// Every atom in [t_lo, t_hi) × [0, theta_hi], sorted by (t, θ).
    pub fn atoms_in(&self, t_lo: f64, t_hi: f64, theta_hi: f64) -> Vec<Atom> {
        if !(t_lo < t_hi) || theta_hi < 0.0 {
            return Vec::new();
        }
        let j_hi = self.measure.strip_of(theta_hi) + 1;
        let i_lo = self.measure.column_of(t_lo);
        let i_hi = self.measure.column_of(t_hi);
        let mut out = Vec::new();
        for i in i_lo..=i_hi {
            out.extend(self.column_atoms(i, 0..j_hi).into_iter().filter(|a| a.t >= t_lo && a.t < t_hi && a.theta <= theta_hi));
        }
        out
    }
}

pub fn atoms_in(config: &Configuration, t_lo: f64, t_hi: f64, theta_hi: f64) -> Vec<Atom> {
    config.atoms_in(t_lo, t_hi, theta_hi)
}

pub fn shift(config: &Configuration, atom: Atom) -> Configuration {
    config.shift(atom)
}

/// Integrand for the divergence: a function on the time–mark plane with
/// a known Lebesgue integral over [0, T] × ℝ₊.
pub trait Integrand {
    fn eval(&self, t: f64, theta: f64) -> f64;
    /// u vanishes for θ above this value; `None` if no such bound is known.
    fn mark_ceiling(&self) -> Option<f64>;
    /// ∫₀ᵀ ∫ u dθ dt.
    fn integral(&self, horizon: f64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPiece {
    pub t0: f64,
    pub t1: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub value: f64,
}

/// Deterministic step function: a sum of weighted half-open rectangles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepProcess {
    pieces: Vec<StepPiece>,
}

impl StepProcess {
    pub fn new() -> Self {
        StepProcess { pieces: Vec::new() }
    }

    pub fn with(mut self, t0: f64, t1: f64, theta0: f64, theta1: f64, value: f64) -> Self {
        assert!(t0 <= t1 && 0.0 <= theta0 && theta0 <= theta1, "degenerate step piece");
        self.pieces.push(StepPiece { t0, t1, theta0, theta1, value });
        self
    }

    pub fn pieces(&self) -> &[StepPiece] {
        &self.pieces
    }

    /// u restricted to times ≥ t.
    pub fn from_time(&self, t: f64) -> StepProcess {
        StepProcess { pieces: self.pieces.iter().filter(|p| p.t1 > t).map(|p| StepPiece { t0: p.t0.max(t), ..*p }).collect() }
    }

    /// ∫∫ u·v over times ≥ t.
    pub fn inner_product(&self, other: &StepProcess, t: f64) -> f64 {
        let mut acc = 0.0;
        for p in &self.pieces {
            for q in &other.pieces {
                let dt = (p.t1.min(q.t1) - p.t0.max(q.t0).max(t)).max(0.0);
                let dth = (p.theta1.min(q.theta1) - p.theta0.max(q.theta0)).max(0.0);
                acc += p.value * q.value * dt * dth;
            }
        }
        acc
    }
}

impl Integrand for StepProcess {
    fn eval(&self, t: f64, theta: f64) -> f64 {
        self.pieces.iter().filter(|p| t >= p.t0 && t < p.t1 && theta >= p.theta0 && theta < p.theta1).map(|p| p.value).sum()
    }

    fn mark_ceiling(&self) -> Option<f64> {
        Some(self.pieces.iter().map(|p| p.theta1).fold(0.0, f64::max))
    }

    fn integral(&self, horizon: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let dt = (p.t1.min(horizon) - p.t0.max(0.0)).max(0.0);
                p.value * dt * (p.theta1 - p.theta0)
            })
            .sum()
    }
}

/// δ(u) = Σ u(atoms) − ∫∫ u over [0, T] × ℝ₊.
pub fn divergence(config: &Configuration, u: &dyn Integrand, horizon: f64) -> Result<f64> {
    let ceiling = u.mark_ceiling().ok_or(Error::MissingMarkCeiling)?;
    let sum: f64 = config.atoms_in(0.0, horizon, ceiling).iter().map(|a| u.eval(a.t, a.theta)).sum();
    Ok(sum - u.integral(horizon))
}
