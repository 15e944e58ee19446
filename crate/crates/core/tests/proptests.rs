use proptest::prelude::*;

use hawkes_stein::cli::ExperimentConfig;
use hawkes_stein::driving_measure::{Atom, Configuration};
use hawkes_stein::functionals::functional_standard;
use hawkes_stein::model::{Kernel, Link, ModelSpec};
use hawkes_stein::simulate::{simulate, simulate_coupled, simulate_with, SimOptions};
use hawkes_stein::volterra::{self, GridFunction};
use hawkes_stein::wasserstein;

fn exp_spec(mu: f64, scale: f64, rate: f64) -> ModelSpec {
    ModelSpec::EmptyHistory { mu, kernel: Kernel::exponential(scale, rate), link: Link::Identity }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn atoms_depend_only_on_seed_and_region(seed in any::<u64>(), t0 in 0.0..20.0f64, len in 0.1..10.0f64, th in 0.1..5.0f64) {
        let a = Configuration::from_seed(seed).atoms_in(t0, t0 + len, th);
        // a wider query returns a superset that restricts back to the same atoms
        let wide = Configuration::from_seed(seed).atoms_in(0.0, t0 + len + 5.0, th + 1.0);
        let restricted: Vec<Atom> = wide.into_iter().filter(|x| x.t >= t0 && x.t < t0 + len && x.theta < th).collect();
        prop_assert_eq!(a, restricted);
    }

    #[test]
    fn shift_is_idempotent(seed in any::<u64>(), t in 0.0..10.0f64, theta in 0.0..3.0f64) {
        let c = Configuration::from_seed(seed);
        let p = Atom::new(t, theta);
        let once = c.shift(p);
        prop_assert!(once.contains(p));
        let twice = once.shift(p);
        prop_assert_eq!(once.atoms_in(0.0, 12.0, 4.0), twice.atoms_in(0.0, 12.0, 4.0));
    }

    #[test]
    fn shift_only_changes_the_future(seed in 0u64..10_000, s in 0.5..15.0f64) {
        let spec = exp_spec(1.0, 0.5, 1.0);
        let (a, b) = simulate_coupled(&spec, &Configuration::from_seed(seed), 20.0, Atom::new(s, 0.0)).unwrap();
        let before = |p: &hawkes_stein::simulate::EventPath| p.events().iter().filter(|e| e.t < s).copied().collect::<Vec<_>>();
        prop_assert_eq!(before(&a), before(&b));
        prop_assert!(b.count() > a.count());
    }

    #[test]
    fn same_seed_same_path(seed in any::<u64>(), scale in 0.0..0.9f64, rate in 0.2..3.0f64) {
        let spec = exp_spec(1.0, scale, rate);
        let a = simulate(&spec, &Configuration::from_seed(seed), 15.0).unwrap();
        let b = simulate(&spec, &Configuration::from_seed(seed), 15.0).unwrap();
        prop_assert_eq!(a.events(), b.events());
        prop_assert_eq!(functional_standard(&a).unwrap(), functional_standard(&b).unwrap());
    }

    #[test]
    fn thinning_is_complete(seed in 0u64..1_000_000, scale in 0.0..0.9f64, rate in 0.2..3.0f64) {
        let spec = exp_spec(0.7, scale, rate);
        let p = simulate_with(&spec, &Configuration::from_seed(seed), 10.0, &SimOptions::default()).unwrap();
        prop_assert!(p.verify_completeness().is_ok());
        let ev = p.evaluator();
        for (e, l) in p.events().iter().zip(p.intensities()) {
            prop_assert!(e.theta <= *l);
            prop_assert!((ev.intensity(e.t) - l).abs() <= 1e-12 * l.max(1.0));
        }
    }

    #[test]
    fn convolution_commutes(a in 0.1..3.0f64, b in 0.1..3.0f64, c in -1.0..1.0f64) {
        let f = GridFunction::sample(1e-2, 5.0, |t| (-a * t).exp()).unwrap();
        let g = GridFunction::sample(1e-2, 5.0, |t| c + (b * t).sin()).unwrap();
        let fg = volterra::convolve(&f, &g).unwrap();
        let gf = volterra::convolve(&g, &f).unwrap();
        prop_assert!(fg.max_abs_diff(&gf) < 1e-12);
    }

    #[test]
    fn volterra_is_monotone_in_the_forcing(scale in 0.0..0.95f64, rate in 0.2..3.0f64, bump in 0.0..1.0f64) {
        let phi = GridFunction::sample(1e-2, 10.0, |t| scale * rate * (-rate * t).exp()).unwrap();
        let m1 = GridFunction::sample(1e-2, 10.0, |_| 1.0 + bump).unwrap();
        let m2 = GridFunction::sample(1e-2, 10.0, |t| 1.0 + bump * (-t).exp()).unwrap();
        let l1 = volterra::solve_volterra(&m1, &phi).unwrap();
        let l2 = volterra::solve_volterra(&m2, &phi).unwrap();
        prop_assert!(l1.values().iter().zip(l2.values()).all(|(x, y)| *x >= *y - 1e-12));
        prop_assert!(l2.values().iter().zip(m2.values()).all(|(x, y)| *x >= *y - 1e-12));
    }

    #[test]
    fn w1_scales_and_translates(xs in prop::collection::vec(-5.0..5.0f64, 1..60), shift in -3.0..3.0f64, k in 0.1..4.0f64) {
        let ys: Vec<f64> = xs.iter().map(|x| x + 1.0).collect();
        prop_assert!(wasserstein::w1_empirical(&xs, &xs).unwrap().abs() < 1e-12);
        prop_assert!((wasserstein::w1_empirical(&xs, &ys).unwrap() - 1.0).abs() < 1e-9);
        let xs2: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let ys2: Vec<f64> = ys.iter().map(|x| x + shift).collect();
        prop_assert!((wasserstein::w1_empirical(&xs2, &ys2).unwrap() - 1.0).abs() < 1e-9);
        // W1(kX, N(0, k²σ²)) = k·W1(X, N(0, σ²))
        let scaled: Vec<f64> = xs.iter().map(|x| k * x).collect();
        let a = wasserstein::w1_to_gaussian(&scaled, k * k).unwrap();
        let b = k * wasserstein::w1_to_gaussian(&xs, 1.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }

    #[test]
    fn config_round_trips(seed in 0..=i64::MAX as u64, reps in 1usize..100_000, scale in 0.0..0.99f64) {
        let mut cfg = ExperimentConfig::example();
        cfg.seed = seed;
        cfg.replications = reps;
        cfg.model = exp_spec(1.0, scale, 1.0);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        cfg.seed = seed | (1 << 63);
        prop_assert!(cfg.check().is_err());
    }
}
