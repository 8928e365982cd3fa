//! Property tests for the invariants of each module.

use brox::diffusion::{decompose_hitting, hit, DiffusionConfig};
use brox::potential::{decompose_valleys_with, interval_depths, reflected, sample_potential, scale_table, PotentialPath, ValleyConfig};
use brox::processes::{integrate_xi, simulate_besq, SdeConfig};
use brox::spectral::{bobkov_bracket, principal_lambda, PotentialWeight};
use brox::tails::{self, FitMode};
use proptest::prelude::*;

/// `∫ e^W` over one linear cell by composite Simpson on 256 sub-panels.
fn simpson_cell(wl: f64, wr: f64, dx: f64) -> f64 {
    let m = 256;
    let h = dx / m as f64;
    let f = |k: usize| (wl + (wr - wl) * k as f64 / m as f64).exp();
    let mut acc = f(0) + f(m);
    for k in 1..m {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
    }
    acc * h / 3.0
}

fn brute_rise(w: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..w.len() {
        for j in i..w.len() {
            best = best.max(w[j] - w[i]);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn potential_is_deterministic(seed in any::<u64>(), kappa in 0.0f64..2.0, left in 1usize..200, right in 1usize..200) {
        let dx = 0.05;
        let a = sample_potential(kappa, -(left as f64) * dx, right as f64 * dx, dx, seed).unwrap();
        let b = sample_potential(kappa, -(left as f64) * dx, right as f64 * dx, dx, seed).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        prop_assert_eq!(a.values[a.origin], 0.0);
    }

    #[test]
    fn scale_table_matches_cellwise_quadrature(seed in any::<u64>(), kappa in 0.0f64..1.5) {
        let env = sample_potential(kappa, -5.0, 5.0, 0.01, seed).unwrap();
        let table = scale_table(&env);
        let mut acc = 0.0;
        for i in env.origin..env.len() - 1 {
            acc += simpson_cell(env.values[i], env.values[i + 1], env.dx);
            let a = table.a[i + 1];
            prop_assert!((a - acc).abs() <= 1e-12 * acc.abs().max(1e-300), "A({}) = {a} vs {acc}", env.x(i + 1));
        }
        let mut acc = 0.0;
        for i in (0..env.origin).rev() {
            acc -= simpson_cell(env.values[i], env.values[i + 1], env.dx);
            prop_assert!((table.a[i] - acc).abs() <= 1e-12 * acc.abs());
        }
    }

    #[test]
    fn interval_depths_match_brute_force(seed in any::<u64>(), kappa in 0.0f64..1.0, lo in 0usize..200, len in 0usize..300) {
        let env = sample_potential(kappa, -2.5, 2.49, 0.01, seed).unwrap();
        prop_assert!(env.len() <= 500);
        let hi = (lo + len).min(env.len() - 1);
        let (a, c) = (env.x(lo), env.x(hi));
        let d = interval_depths(&env, a, c).unwrap();
        let w = &env.values[lo..=hi];
        let rev: Vec<f64> = w.iter().rev().cloned().collect();
        prop_assert_eq!(d.d_plus, brute_rise(w));
        prop_assert_eq!(d.d_minus, brute_rise(&rev));
        prop_assert_eq!(d.d, d.d_plus.min(d.d_minus));
        let spread = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - w.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d.m, spread);
    }

    #[test]
    fn reflected_potential_is_w_minus_running_min(seed in any::<u64>(), kappa in 0.1f64..1.0) {
        let env = sample_potential(kappa, 0.0, 20.0, 0.01, seed).unwrap();
        let u = reflected(&env);
        for (j, &x) in u.iter().enumerate() {
            let lo = env.values[..=j].iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(x, env.values[j] - lo);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn break_points_increase_and_move_left_without_near_record(seed in any::<u64>(), kappa in 0.5f64..1.0) {
        let t = 20.0;
        let env = sample_potential(kappa, -20.0, 250.0, 0.01, seed).unwrap();
        let cfg = ValleyConfig { right_window: Some(150.0), near_record: true };
        let with = decompose_valleys_with(&env, t, 80.0, cfg).unwrap();
        let without = decompose_valleys_with(&env, t, 80.0, ValleyConfig { near_record: false, ..cfg }).unwrap();
        for v in [&with, &without] {
            prop_assert!(v.k.windows(2).all(|p| p[0] < p[1]), "{:?}", v.k);
        }
        prop_assert!(without.k[1] <= with.k[1]);
    }

    #[test]
    fn hitting_identities_hold_on_every_path(seed in 0u64..1_000_000, kappa in 1.0f64..3.0) {
        // small horizon so that several valleys lie between the origin and v
        let (t, v) = (3.0, 6.0);
        let env = sample_potential(kappa, -30.0, 40.0, 0.01, seed).unwrap();
        let valleys = decompose_valleys_with(&env, t, v, ValleyConfig { right_window: Some(30.0), near_record: true }).unwrap();
        let cfg = DiffusionConfig::new(1e-2, seed);
        let h = hit(&env, v, &cfg).unwrap();
        let b = decompose_hitting(&env, &valleys, &cfg).unwrap();
        prop_assert!((h.theta1 + h.theta2 - h.h).abs() <= cfg.dt);
        prop_assert!((b.sum() - b.h_total).abs() <= cfg.dt);
        prop_assert_eq!(b.h_total, h.h);
        prop_assert!([b.h_init, b.h_dir, b.h_back, b.h_left, b.h_right].iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn xi_and_besq_stay_non_negative(seed in any::<u64>(), kappa in 0.0f64..2.0, delta in 0.0f64..3.0, x0 in 0.0f64..2.0) {
        let cfg = SdeConfig::new(1e-2, seed);
        prop_assert!(integrate_xi(kappa, 5.0, &cfg).unwrap().values.iter().all(|&x| x >= 0.0));
        prop_assert!(simulate_besq(delta, x0, 5.0, &cfg, None).unwrap().values.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn bobkov_bracket_holds(values in prop::collection::vec(0.0f64..50.0, 1..60), spike in 0usize..60, height in 0.0f64..1e4) {
        let mut values = values;
        let k = spike % values.len();
        values[k] += height;
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let b = bobkov_bracket(&PotentialWeight::new(values).unwrap()).unwrap();
        prop_assert!(b.lower_ok && b.upper_ok, "{:?}", b);
    }

    #[test]
    fn principal_value_scales_inversely(values in prop::collection::vec(0.01f64..10.0, 1..40)) {
        let w = PotentialWeight::new(values).unwrap();
        let base = principal_lambda(&w).unwrap();
        for c in [0.5, 2.0, 4.0] {
            let scaled = principal_lambda(&w.scaled(c).unwrap()).unwrap();
            prop_assert!((scaled * c - base).abs() <= 1e-6 * base, "c={c}: {} vs {base}", scaled * c);
        }
    }
}

proptest! {
    #[test]
    fn quenched_slowdown_exponent_is_non_increasing_in_nu(kappa in 0.05f64..5.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let top = kappa.min(1.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(lo > 0.0);
        let p = |nu: f64| tails::predicted_exponents(kappa, Some(nu * top)).unwrap().quenched_slowdown_doublelog.unwrap();
        prop_assert!(p(hi) <= p(lo));
    }

    #[test]
    fn fits_recover_exact_laws(alpha in 0.2f64..4.0, c in 0.01f64..0.5) {
        let us = [1.5f64, 2.0, 3.0, 4.5];
        let stretched: Vec<(f64, f64)> = us.iter().map(|&u| (u, (-c * u.powf(alpha)).exp())).collect();
        let f = tails::fit_exponent(&stretched, FitMode::LogVsLog).unwrap();
        prop_assert!((f.slope - alpha).abs() < 1e-9 && (f.r2 - 1.0).abs() < 1e-9);
        let power: Vec<(f64, f64)> = us.iter().map(|&u| (u, c * u.powf(-alpha))).filter(|p| p.1 < 1.0).collect();
        prop_assume!(power.len() >= 3);
        let f = tails::fit_exponent(&power, FitMode::PowerLaw).unwrap();
        prop_assert!((f.slope + alpha).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimates_report_binomial_errors(seed in any::<u64>(), u in 0.2f64..2.0) {
        let opts = tails::TailOptions { dt: 2e-2, dx: 0.05, ..Default::default() };
        let e = tails::estimate_tail_annealed(0.5, 2.0, u, tails::AnnealedEvent::SpeedupX, 100, seed, &opts).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.p_hat));
        prop_assert_eq!(e.p_hat, e.successes as f64 / 100.0);
        prop_assert!((e.se - (e.p_hat * (1.0 - e.p_hat) / 100.0).sqrt()).abs() < 1e-15);
        prop_assert_eq!(e.upper95.is_some(), e.successes == 0);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let env = PotentialPath::pure_drift(0.5, -20.0, 20.0, 0.05).unwrap();
        let cfg = DiffusionConfig::new(1e-2, seed).replicate(3);
        prop_assert_eq!(hit(&env, 1.0, &cfg).unwrap(), hit(&env, 1.0, &cfg).unwrap());
    }
}
