//! Experiment runner: config file → simulations → functionals → distances,
//! with CSV/JSON artifacts and a run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driving_measure::{divergence, Atom, Configuration, StepProcess};
use crate::error::{Error, Result};
use crate::functionals::{
    self, bound_terms, BoundOptions, BoundTerms, DiscreteMode, Estimate, FunctionalKind, FunctionalSample, Normalization,
};
use crate::model::{Kernel, Link, ModelSpec};
use crate::rng;
use crate::simulate::{self, simulate, simulate_coupled};
use crate::volterra;
use crate::wasserstein::{self, RatePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Horizons T (step counts n for discrete models).
    pub horizons: Vec<f64>,
    pub replications: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub discrete_mode: DiscreteMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Wall-clock cap in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub resolvent: ResolventOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub dir: PathBuf,
    /// Write per-event rows in `simulate`.
    pub events: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { dir: PathBuf::from("out"), events: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Analysis {
    pub resamples: usize,
    /// Also estimate the bound terms in `dw`.
    pub bounds: bool,
    pub bound_reps: usize,
    pub t_subsample: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_simulations: Option<usize>,
    /// Long-run mean intensity, when it has no closed form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub slope_band: [f64; 2],
    pub nearly_unstable_cap: f64,
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis {
            resamples: 200,
            bounds: false,
            bound_reps: 200,
            t_subsample: 16,
            max_simulations: None,
            sigma2: None,
            slope_band: [-0.7, -0.3],
            nearly_unstable_cap: 512.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolventOptions {
    /// Defaults to the Lipschitz constant of the model's link.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions { alpha: None, horizon: 10.0, dt: 1e-3 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // unit variants of tagged enums accept stray keys; compare against the canonical form
        let input: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let canon: toml::Table = cfg.to_toml()?.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut stray = Vec::new();
        unknown_keys(&input, &canon, "", &mut stray);
        if !stray.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", stray.join(", "))));
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Structural checks that do not involve the model.
    pub fn check(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Config("horizons must be a non-empty list of positive numbers".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {} to round-trip through TOML", i64::MAX)));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return Err(Error::Config("budget must be a positive number of seconds".into()));
            }
        }
        let [lo, hi] = self.analysis.slope_band;
        if !(lo < hi) {
            return Err(Error::Config("slope_band must be [low, high] with low < high".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// The model at horizon T: nearly unstable specs carry their own T.
    pub fn spec_at(&self, horizon: f64) -> Result<ModelSpec> {
        match &self.model {
            ModelSpec::NearlyUnstable { mu, kernel, .. } => {
                if horizon > self.analysis.nearly_unstable_cap {
                    return Err(Error::Config(format!(
                        "horizon {horizon} exceeds the nearly unstable cap {}",
                        self.analysis.nearly_unstable_cap
                    )));
                }
                Ok(ModelSpec::NearlyUnstable { mu: *mu, kernel: kernel.clone(), horizon })
            }
            other => Ok(other.clone()),
        }
    }

    /// Linear Hawkes, μ = 1, φ(t) = 0.5e^{−t}.
    pub fn example() -> Self {
        ExperimentConfig {
            seed: 1,
            horizons: vec![50.0, 100.0, 200.0],
            replications: 2000,
            normalization: Normalization::UnitG,
            discrete_mode: DiscreteMode::Martingale,
            threads: None,
            budget: None,
            model: ModelSpec::EmptyHistory { mu: 1.0, kernel: Kernel::exponential(0.5, 1.0), link: Link::Identity },
            outputs: Outputs::default(),
            analysis: Analysis::default(),
            resolvent: ResolventOptions::default(),
        }
    }
}

fn unknown_keys(input: &toml::Table, canon: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in input {
        let path = format!("{prefix}{k}");
        match (v, canon.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(a), Some(toml::Value::Table(b))) => unknown_keys(a, b, &format!("{path}."), out),
            _ => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Resolvent,
    Dw,
    Rate,
    Check,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Resolvent => "resolvent",
            Command::Dw => "dw",
            Command::Rate => "rate",
            Command::Check => "check",
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::ModelViolation(_)
        | Error::Unstable { .. }
        | Error::Inadmissible(_)
        | Error::MissingMarkCeiling
        | Error::NonPositiveIntensity { .. }
        | Error::CeilingOverflow { .. } => 3,
        Error::BudgetExceeded(_) => 4,
        _ => 1,
    }
}

/// Worker count: flag, then HAWKES_STEIN_THREADS (handled by the caller), then config.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Deadline {
    start: Instant,
    cap: Option<Duration>,
}

impl Deadline {
    fn new(seconds: Option<f64>) -> Self {
        Deadline { start: Instant::now(), cap: seconds.map(Duration::from_secs_f64) }
    }

    fn check(&self) -> Result<()> {
        match self.cap {
            Some(c) if self.start.elapsed() > c => {
                Err(Error::BudgetExceeded(format!("wall-clock budget of {:.1}s exhausted", c.as_secs_f64())))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub replications: usize,
    pub horizons: Vec<f64>,
    pub seed_derivation: String,
    pub version: String,
    pub threads: usize,
    pub partial: bool,
    pub outputs: Vec<String>,
    pub elapsed_seconds: f64,
}

/// What a run produced; `error` is set when it stopped early.
#[derive(Debug)]
pub struct RunReport {
    pub manifest: Manifest,
    pub lines: Vec<String>,
    pub error: Option<Error>,
    pub failed_checks: usize,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            Some(e) => exit_code(e),
            None if self.failed_checks > 0 => 1,
            None => 0,
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn csv(&mut self, name: &str) -> Result<csv::Writer<fs::File>> {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(self.dir.join(name)).map_err(csv_err)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = fs::File::create(self.dir.join(name))?;
        serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Io(e.into()))?;
        f.write_all(b"\n")?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Runs one subcommand; artifacts land in `config.outputs.dir`.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunReport> {
    config.check()?;
    let start = Instant::now();
    let deadline = Deadline::new(config.budget);
    let mut art = Artifacts::new(&config.outputs.dir)?;
    let mut lines = Vec::new();
    let mut failed_checks = 0;
    let outcome = match command {
        Command::Simulate => run_simulate(config, &mut art, &mut lines, &deadline),
        Command::Resolvent => run_resolvent(config, &mut art, &mut lines),
        Command::Dw => run_dw(config, &mut art, &mut lines, &deadline).map(|_| ()),
        Command::Rate => run_rate(config, &mut art, &mut lines, &deadline),
        Command::Check => {
            let checks = invariant_suite(&config.model, config.replications, config.seed)?;
            for c in &checks {
                lines.push(c.line());
                if c.status == Status::Fail {
                    failed_checks += 1;
                }
            }
            Ok(())
        }
    };
    let error = match outcome {
        Ok(()) => None,
        Err(e @ Error::BudgetExceeded(_)) => Some(e),
        Err(e) => return Err(e),
    };
    let manifest = Manifest {
        command: command.name().to_string(),
        config_sha256: config.hash()?,
        seed: config.seed,
        replications: config.replications,
        horizons: config.horizons.clone(),
        seed_derivation: rng::REPLICATION_SEED_SCHEME.into(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        partial: error.is_some(),
        outputs: art.written.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    art.json("manifest.json", &manifest)?;
    Ok(RunReport { manifest, lines, error, failed_checks })
}

#[derive(Serialize)]
struct SummaryRow {
    rep: usize,
    seed: u64,
    horizon: f64,
    events: u64,
    compensator: f64,
    standard: f64,
    reduced: Option<f64>,
}

fn run_simulate(cfg: &ExperimentConfig, art: &mut Artifacts, lines: &mut Vec<String>, deadline: &Deadline) -> Result<()> {
    use rayon::prelude::*;
    let hi = cfg.horizons.len() - 1;
    let horizon = cfg.horizons[hi];
    let spec = cfg.spec_at(horizon)?;
    spec.ensure_valid()?;
    let seeds: Vec<u64> = (0..cfg.replications as u64).map(|r| rng::replication_seed(cfg.seed, hi as u64, r)).collect();
    let mut summary = art.csv("summary.csv")?;
    let mut events = if cfg.outputs.events { Some(art.csv("events.csv")?) } else { None };

    if let ModelSpec::Discrete(d) = &spec {
        let n = horizon.round() as usize;
        let paths = seeds
            .par_iter()
            .map(|s| {
                deadline.check()?;
                simulate::simulate_discrete(d, n, *s)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(w) = events.as_mut() {
            w.write_record(["rep", "t", "count", "intensity"]).map_err(csv_err)?;
        }
        for (rep, (p, s)) in paths.iter().zip(&seeds).enumerate() {
            if let Some(w) = events.as_mut() {
                for (k, (c, l)) in p.counts.iter().zip(&p.intensities).enumerate() {
                    w.serialize((rep, k + 1, c, l)).map_err(csv_err)?;
                }
            }
            summary
                .serialize(SummaryRow {
                    rep,
                    seed: *s,
                    horizon,
                    events: p.total(),
                    compensator: p.intensities.iter().sum(),
                    standard: functionals::functional_discrete(p, d, DiscreteMode::Martingale),
                    reduced: None,
                })
                .map_err(csv_err)?;
        }
    } else {
        let paths = seeds
            .par_iter()
            .map(|s| {
                deadline.check()?;
                simulate(&spec, &Configuration::from_seed(*s), horizon)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(w) = events.as_mut() {
            w.write_record(["rep", "t", "theta"]).map_err(csv_err)?;
        }
        for (rep, (p, s)) in paths.iter().zip(&seeds).enumerate() {
            if let Some(w) = events.as_mut() {
                for a in &p.events()[p.first_at_or_after(0.0)..] {
                    w.serialize((rep, a.t, a.theta)).map_err(csv_err)?;
                }
            }
            summary
                .serialize(SummaryRow {
                    rep,
                    seed: *s,
                    horizon,
                    events: p.count() as u64,
                    compensator: simulate::compensator(p)?,
                    standard: functionals::functional_standard(p)?,
                    reduced: functionals::functional_reduced(p).ok(),
                })
                .map_err(csv_err)?;
        }
    }
    summary.flush()?;
    if let Some(mut w) = events {
        w.flush()?;
    }
    lines.push(format!("simulated {} paths at horizon {horizon}", cfg.replications));
    Ok(())
}

fn link_lipschitz(spec: &ModelSpec) -> f64 {
    match spec {
        ModelSpec::EmptyHistory { link, .. } | ModelSpec::Stationaryized { link, .. } => link.lipschitz(),
        ModelSpec::LocallyStationary { gamma_fn, .. } => gamma_fn.sup(),
        ModelSpec::NearlyUnstable { horizon, .. } => 1.0 - 1.0 / horizon,
        ModelSpec::Discrete(_) => 1.0,
    }
}

fn run_resolvent(cfg: &ExperimentConfig, art: &mut Artifacts, lines: &mut Vec<String>) -> Result<()> {
    let kernel =
        cfg.model.kernel().ok_or_else(|| Error::Config(format!("the {} model has no continuous kernel", cfg.model.variant())))?;
    let r = &cfg.resolvent;
    let alpha = r.alpha.unwrap_or_else(|| link_lipschitz(&cfg.model));
    let psi = volterra::resolvent(kernel, alpha, r.horizon, r.dt)?;
    let mut w = art.csv("resolvent.csv")?;
    w.write_record(["t", "psi"]).map_err(csv_err)?;
    for (t, v) in psi.base.times().zip(psi.base.values()) {
        w.serialize((t, v)).map_err(csv_err)?;
    }
    w.flush()?;
    lines.push(format!(
        "resolvent: alpha = {alpha}, alpha*|phi|_1 = {:.6}, integral on grid = {:.6}, tail bound = {:.3e}",
        psi.ratio,
        psi.base.integral(),
        psi.l1_tail_bound
    ));
    Ok(())
}

#[derive(Serialize)]
struct DwRow {
    horizon: f64,
    n_reps: usize,
    mean: f64,
    mean_se: f64,
    variance: f64,
    variance_se: f64,
    sigma2_target: f64,
    dw: f64,
    se: f64,
    floor: f64,
}

/// One batch per horizon, in horizon order; stops at the budget.
fn sample_all(
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    lines: &mut Vec<String>,
    deadline: &Deadline,
    on_sample: &mut dyn FnMut(&mut Artifacts, &FunctionalSample, &wasserstein::DistanceEstimate) -> Result<()>,
) -> Result<Vec<(FunctionalSample, wasserstein::DistanceEstimate)>> {
    let kind = FunctionalKind::for_normalization(&cfg.model, cfg.normalization, cfg.discrete_mode)?;
    let mut out = Vec::new();
    let mut fw = art.csv("functionals.csv")?;
    fw.write_record(["rep", "horizon", "value"]).map_err(csv_err)?;
    for (hi, &t) in cfg.horizons.iter().enumerate() {
        deadline.check()?;
        let spec = cfg.spec_at(t)?;
        let mut sample = functionals::sample_functional(&spec, kind, t, cfg.replications, cfg.seed, hi as u64)
            .and_then(|s| deadline.check().map(|_| s))?;
        if let (FunctionalKind::Standard, Some(s2)) = (kind, cfg.analysis.sigma2) {
            sample.sigma2_target = s2;
        }
        let est = sample.distance(cfg.analysis.resamples, rng::keyed(rng::domain::BOOTSTRAP, cfg.seed, hi as u64, 0))?;
        for (rep, v) in sample.values.iter().enumerate() {
            fw.serialize((rep, t, v)).map_err(csv_err)?;
        }
        fw.flush()?;
        lines.push(format!(
            "T = {t}: {} = {:.5} ± {:.5} (floor {:.5}), var = {:.4} vs {:.4}",
            sample.label,
            est.dw,
            est.se,
            est.floor,
            sample.variance().mean,
            sample.sigma2_target
        ));
        on_sample(art, &sample, &est)?;
        out.push((sample, est));
    }
    Ok(out)
}

fn run_dw(cfg: &ExperimentConfig, art: &mut Artifacts, lines: &mut Vec<String>, deadline: &Deadline) -> Result<()> {
    let mut dw = art.csv("dw.csv")?;
    let mut bounds = if cfg.analysis.bounds {
        let mut w = art.csv("bounds.csv")?;
        w.write_record(["horizon", "term", "mean", "se"]).map_err(csv_err)?;
        Some(w)
    } else {
        None
    };
    let mut bound_lines = Vec::new();
    sample_all(cfg, art, lines, deadline, &mut |_, s, e| {
        let m = s.mean();
        let v = s.variance();
        dw.serialize(DwRow {
            horizon: s.horizon,
            n_reps: s.len(),
            mean: m.mean,
            mean_se: m.se,
            variance: v.mean,
            variance_se: v.se,
            sigma2_target: s.sigma2_target,
            dw: e.dw,
            se: e.se,
            floor: e.floor,
        })
        .map_err(csv_err)?;
        dw.flush()?;
        if let Some(w) = bounds.as_mut() {
            deadline.check()?;
            let spec = cfg.spec_at(s.horizon)?;
            let opts = BoundOptions {
                seed: rng::keyed(rng::domain::SUBSAMPLE, cfg.seed, s.horizon.to_bits(), 1),
                sigma2: cfg.analysis.sigma2.or(Some(s.sigma2_target)),
                max_simulations: cfg.analysis.max_simulations,
            };
            let b = bound_terms(&spec, s.horizon, cfg.analysis.bound_reps, cfg.analysis.t_subsample, cfg.normalization, &opts)?;
            for (name, est) in bound_rows(&b) {
                w.serialize((s.horizon, name, est.mean, est.se)).map_err(csv_err)?;
            }
            w.flush()?;
            bound_lines.push(format!(
                "T = {}: bound total = {:.5} ± {:.5} over {} simulations",
                s.horizon, b.total.mean, b.total.se, b.simulations
            ));
        }
        Ok(())
    })?;
    lines.extend(bound_lines);
    Ok(())
}

/// Named rows of a bound estimate, in output order.
pub fn bound_rows(b: &BoundTerms) -> Vec<(&'static str, Estimate)> {
    let names = ["variance_gap", "drift", "delta_weighted", "delta_squared", "delta_plain"];
    let mut rows: Vec<_> = names.iter().copied().zip(b.terms).collect();
    rows.push(("total", b.total));
    if let Some(r) = b.reduced {
        let extra = ["third_moment", "double_integral", "pair_integral", "signed_remainder"];
        rows.extend(extra.iter().copied().zip(r));
    }
    rows
}

#[derive(Clone, Debug, Serialize)]
pub struct RateVerdict {
    pub label: String,
    pub sigma2_target: f64,
    pub points: Vec<RatePointRecord>,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub slope_band: [f64; 2],
    pub slope_in_band: bool,
    /// Each consecutive drop exceeds two combined standard errors.
    pub strictly_decreasing: bool,
    /// Smallest dw / floor ratio; the harness wants at least 4.
    pub min_floor_ratio: f64,
    pub floor_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatePointRecord {
    pub horizon: f64,
    pub dw: f64,
    pub se: f64,
    pub floor: f64,
    pub n_reps: usize,
}

/// Verdict on a sweep of distance estimates.
pub fn rate_verdict(label: &str, sigma2: f64, points: &[RatePointRecord], band: [f64; 2]) -> Result<RateVerdict> {
    let fit = wasserstein::fit_rate(
        &points.iter().map(|p| RatePoint { horizon: p.horizon, estimate: p.dw, se: p.se }).collect::<Vec<_>>(),
    )?;
    let strictly_decreasing = points.windows(2).all(|w| w[0].dw - w[1].dw > 2.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt());
    let min_floor_ratio = points.iter().map(|p| p.dw / p.floor).fold(f64::INFINITY, f64::min);
    let slope_in_band = band[0] <= fit.slope && fit.slope <= band[1];
    Ok(RateVerdict {
        label: label.to_string(),
        sigma2_target: sigma2,
        points: points.to_vec(),
        slope: fit.slope,
        slope_se: fit.slope_se,
        intercept: fit.intercept,
        slope_band: band,
        slope_in_band,
        strictly_decreasing,
        min_floor_ratio,
        floor_ok: min_floor_ratio >= 4.0,
        pass: slope_in_band,
    })
}

fn run_rate(cfg: &ExperimentConfig, art: &mut Artifacts, lines: &mut Vec<String>, deadline: &Deadline) -> Result<()> {
    if cfg.horizons.len() < 3 {
        return Err(Error::Config("rate needs at least 3 horizons".into()));
    }
    let mut rw = art.csv("rate.csv")?;
    rw.write_record(["horizon", "dw", "se", "n_reps"]).map_err(csv_err)?;
    let samples = sample_all(cfg, art, lines, deadline, &mut |_, s, e| {
        rw.serialize((s.horizon, e.dw, e.se, s.len())).map_err(csv_err)?;
        rw.flush()?;
        Ok(())
    })?;
    let points: Vec<RatePointRecord> = samples
        .iter()
        .map(|(s, e)| RatePointRecord { horizon: s.horizon, dw: e.dw, se: e.se, floor: e.floor, n_reps: s.len() })
        .collect();
    let (s0, _) = &samples[0];
    let v = rate_verdict(&s0.label, s0.sigma2_target, &points, cfg.analysis.slope_band)?;
    lines.push(format!(
        "slope = {:.3} ± {:.3} (band [{}, {}]): {}; decreasing beyond 2 SE: {}; min dw/floor = {:.2}",
        v.slope,
        v.slope_se,
        v.slope_band[0],
        v.slope_band[1],
        if v.pass { "PASS" } else { "FAIL" },
        v.strictly_decreasing,
        v.min_floor_ratio
    ));
    art.json("rate.json", &v)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        CheckResult { name, status: if pass { Status::Pass } else { Status::Fail }, detail }
    }

    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// Isometry, third moment, Malliavin domination and Volterra closed forms.
pub fn invariant_suite(spec: &ModelSpec, reps: usize, seed: u64) -> Result<Vec<CheckResult>> {
    spec.ensure_valid()?;
    let mut out = vec![check_resolvent()?, check_isometry(reps, seed)?];
    out.push(check_third_moment(spec, reps, seed)?);
    out.push(check_malliavin(spec, reps, seed)?);
    Ok(out)
}

fn check_resolvent() -> Result<CheckResult> {
    let psi = volterra::resolvent(&Kernel::exponential(1.0, 1.0), 0.5, 10.0, 1e-3)?;
    let err = psi.base.times().zip(psi.base.values()).map(|(t, v)| (v - 0.5 * (-0.5 * t).exp()).abs()).fold(0.0, f64::max);
    Ok(CheckResult::new("volterra_closed_form", err < 1e-4, format!("max |psi - 0.5e^(-t/2)| = {err:.2e} (tol 1e-4)")))
}

fn check_isometry(reps: usize, seed: u64) -> Result<CheckResult> {
    use rayon::prelude::*;
    let u = StepProcess::new().with(0.0, 2.0, 0.0, 1.0, 1.0).with(2.0, 5.0, 0.5, 2.0, -0.7);
    let target = 2.0 + 3.0 * 1.5 * 0.49;
    let sq: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let d = divergence(&Configuration::from_seed(rng::replication_seed(seed, 0, r)), &u, 5.0)?;
            Ok(d * d)
        })
        .collect::<Result<_>>()?;
    let e = Estimate::from_samples(&sq);
    let z = (e.mean - target) / e.se;
    Ok(CheckResult::new(
        "divergence_isometry",
        z.abs() <= 4.0,
        format!("E[delta(u)^2] = {:.4} ± {:.4} vs {target}", e.mean, e.se),
    ))
}

fn check_third_moment(spec: &ModelSpec, reps: usize, seed: u64) -> Result<CheckResult> {
    use rayon::prelude::*;
    if matches!(spec, ModelSpec::Discrete(_) | ModelSpec::NearlyUnstable { .. }) || spec.positivity_floor().is_none() {
        return Ok(CheckResult {
            name: "third_moment",
            status: Status::Skip,
            detail: format!("the {} model has no certified positive intensity floor", spec.variant()),
        });
    }
    let t = 50.0;
    let pairs: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let p = simulate(spec, &Configuration::from_seed(rng::replication_seed(seed, 1, r)), t)?;
            let f = functionals::functional_reduced(&p)?;
            let i = p.evaluator().integral_power(0.0, t, simulate::Power::MinusHalf)?;
            Ok((f.powi(3), i / t.powf(1.5)))
        })
        .collect::<Result<_>>()?;
    let a = Estimate::from_samples(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let b = Estimate::from_samples(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let half = 1.96 * (a.se.powi(2) + b.se.powi(2)).sqrt();
    Ok(CheckResult::new(
        "third_moment",
        (a.mean - b.mean).abs() <= half,
        format!("E[F^3] = {:.5} ± {:.5} vs T^(-3/2) E int lambda^(-1/2) = {:.5} ± {:.5}", a.mean, a.se, b.mean, b.se),
    ))
}

/// Mean |λ∘ε⁺_{(0,0)}(s) − λ(s)| at each s, from coupled paths.
pub fn shifted_intensity_gap(
    spec: &ModelSpec,
    grid: &[f64],
    reps: usize,
    seed: u64,
    horizon_index: u64,
) -> Result<Vec<Estimate>> {
    use rayon::prelude::*;
    let horizon = grid.iter().copied().fold(0.0, f64::max) + 1.0;
    let rows: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = Configuration::from_seed(rng::replication_seed(seed, horizon_index, r));
            let (b, s) = simulate_coupled(spec, &cfg, horizon, Atom::new(0.0, 0.0))?;
            let (eb, es) = (b.evaluator(), s.evaluator());
            Ok(grid.iter().map(|&t| (es.intensity(t) - eb.intensity(t)).abs()).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..grid.len()).map(|k| Estimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>())).collect())
}

fn check_malliavin(spec: &ModelSpec, reps: usize, seed: u64) -> Result<CheckResult> {
    let Some(kernel) = spec.kernel() else {
        return Ok(CheckResult { name: "malliavin_domination", status: Status::Skip, detail: "no continuous kernel".into() });
    };
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
    let psi = volterra::resolvent(kernel, link_lipschitz(spec), 5.0, 1e-3)?;
    let gaps = shifted_intensity_gap(spec, &grid, reps, seed, 2)?;
    let mut worst = f64::NEG_INFINITY;
    for (s, g) in grid.iter().zip(&gaps) {
        worst = worst.max((g.mean - psi.base.eval(*s)) / g.se.max(f64::MIN_POSITIVE));
    }
    Ok(CheckResult::new(
        "malliavin_domination",
        worst <= 4.0,
        format!("max (E|D lambda_s| - psi(s)) / SE over s in {grid:?} = {worst:.2} (tol 4)"),
    ))
}
