//! End-to-end checks across modules and of the command-line binary.

use std::process::Command;

use brox::diffusion::{decompose_hitting, exit_time_in, hit, hit_in, DiffusionConfig, Medium};
use brox::numerics::{ks_two_sample, linear_fit, mean_se};
use brox::potential::{
    check_events, decompose_valleys_with, sample_potential, sample_potential_with, sample_straddling_excursion, EnvNoise, PotentialPath,
    ValleyConfig,
};
use brox::processes::{
    bessel_passage_rng, sample_upsilon_exact, simulate_besq, stable_functional, theta_from_xi, SdeConfig, StableConfig, Stepping,
};
use brox::rng::{self, Purpose};
use brox::spectral::exit_laplace_bound;
use brox::tails::{
    estimate_tail_annealed, estimate_tail_annealed_grid, estimate_tail_quenched, AnnealedEvent, AnnealedMethod, QuenchedEvent, TailOptions,
};
use brox::Error;

#[test]
fn besq_dimensions_and_starting_points_add() {
    let n = 5000u64;
    let end = |delta: f64, x0: f64, seed: u64, r: u64| {
        simulate_besq(delta, x0, 1.0, &SdeConfig::new(1e-3, seed).replicate(r), None).unwrap().last()
    };
    let sum: Vec<f64> = (0..n).map(|r| end(0.5, 1.0, 1, r) + end(1.5, 0.5, 2, r)).collect();
    let joint: Vec<f64> = (0..n).map(|r| end(2.0, 1.5, 3, r)).collect();
    let d = ks_two_sample(&sum, &joint);
    assert!(d < 0.03, "KS {d}");
}

#[test]
fn upsilon_exact_law_matches_bessel_passage() {
    let (n, cap) = (2000u64, 20.0);
    for kappa in [0.3, 0.5, 0.7] {
        let exact: Vec<f64> =
            (0..n).map(|r| sample_upsilon_exact(kappa, &mut rng::stream(5, r, Purpose::Auxiliary)).unwrap().min(cap)).collect();
        let sim: Vec<f64> = (0..n)
            .map(|r| {
                let mut rng = rng::stream(6, r, Purpose::Bessel);
                bessel_passage_rng(2.0 - 2.0 * kappa, 1.0, 0.0, Stepping::Fixed(1e-3), cap, u64::MAX, &mut rng).unwrap().time
            })
            .collect();
        let d = ks_two_sample(&exact, &sim);
        assert!(d < 0.06, "kappa {kappa}: KS {d}");
    }
}

#[test]
fn pure_drift_hitting_mean_is_stable_under_grid_refinement() {
    let (kappa, v, n) = (1.0, 1.0, 2000u64);
    let target = 4.0 * v / kappa;
    for dx in [0.1, 0.02] {
        let env = PotentialPath::pure_drift(kappa, -40.0, 5.0, dx).unwrap();
        let med = Medium::new(&env);
        let hs: Vec<f64> = (0..n).map(|r| hit_in(&med, &env, v, &DiffusionConfig::new(1e-3, 7).replicate(r)).unwrap().h).collect();
        let (m, se) = mean_se(&hs);
        assert!((m - target).abs() <= 3.0 * se, "dx {dx}: {m} ± {se} vs {target}");
    }
}

#[test]
fn flat_environment_speedup_is_gaussian() {
    // X_4 is Brownian with drift 1/4 per unit time at κ=1; P(X_4 > 3) = P(Z > 1)
    let opts = TailOptions { dt: 1e-3, noise: EnvNoise::Zero, ..Default::default() };
    let e = estimate_tail_annealed(1.0, 4.0, 0.75, AnnealedEvent::SpeedupX, 4000, 8, &opts).unwrap();
    assert!((e.p_hat - 0.158_655).abs() <= 3.0 * e.se, "{} ± {}", e.p_hat, e.se);
}

#[test]
#[ignore = "not attained at t = 400: u·p̂ spans a factor ≈ 2.5 (0.82, 1.23, 2.01); paths that reach t^κ/u often fall back below it"]
fn annealed_slowdown_decays_like_one_over_u() {
    let opts = TailOptions { dt: 1e-2, ..Default::default() };
    let es = estimate_tail_annealed_grid(0.5, 400.0, &[2.0, 4.0, 8.0], AnnealedEvent::SlowdownX, 2000, 9, &opts).unwrap();
    let scaled: Vec<f64> = es.iter().map(|e| e.u * e.p_hat).collect();
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(lo > 0.0 && hi <= 2.0 * lo, "u·p = {scaled:?}");
}

#[test]
fn annealed_running_max_slowdown_decays_like_one_over_u() {
    // {sup_{s<t} X_s < t^κ/u} = {H(t^κ/u) > t}
    let opts = TailOptions { dt: 2e-2, method: AnnealedMethod::Representation, ..Default::default() };
    let scaled: Vec<f64> = [2.0, 4.0, 8.0]
        .iter()
        .map(|&u| u * estimate_tail_annealed(0.5, 0.0, u, AnnealedEvent::SlowdownH { v: 20.0 / u }, 4000, 12, &opts).unwrap().p_hat)
        .collect();
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(lo > 0.0 && hi <= 2.0 * lo, "u·p = {scaled:?}");
}

#[test]
fn quenched_slowdown_probability_falls_with_time() {
    let opts = TailOptions { dt: 1e-2, ..Default::default() };
    let p: Vec<f64> = [1e3, 1e4]
        .iter()
        .map(|&t| estimate_tail_quenched(10, 0.5, t, 0.25, QuenchedEvent::SlowdownH, 400, 11, &opts).unwrap().p_hat)
        .collect();
    assert!(p.iter().all(|&x| x > 0.0 && x < 1.0), "{p:?}");
    assert!(p[1] < p[0], "{p:?}");
}

#[test]
fn quenched_level_beyond_window_is_an_error() {
    let opts = TailOptions { window: Some((-10.0, 5.0)), ..Default::default() };
    let r = estimate_tail_quenched(1, 0.5, 1e4, 0.25, QuenchedEvent::SlowdownH, 10, 1, &opts);
    assert!(matches!(r, Err(Error::WindowExceeded(_))), "{r:?}");
}

#[test]
fn event_frequencies_do_not_fall_with_time() {
    // event A needs valley spacings ≤ (log t)², out of reach until log t ≥ 6/κ²,
    // so Ω itself stays at 0 here; its other components must not become rarer
    let mut prev: Option<(usize, usize, usize)> = None;
    for t in [1e2f64, 1e3, 1e4] {
        let (mut omega, mut k, mut l) = (0, 0, 0);
        for e in 0..100u64 {
            let env = sample_potential(0.5, -t, t.max(t / 2.0 + 60.0 * t.ln()), 0.05, 500 + e).unwrap();
            let r = check_events(&env, t, t / 2.0, 4, 0.5).unwrap();
            omega += r.omega as usize;
            k += r.k as usize;
            l += r.l as usize;
        }
        if let Some((o0, k0, l0)) = prev {
            assert!(omega >= o0 && k >= k0 && l >= l0, "t {t}: Ω {omega} K {k} L {l} after {prev:?}");
        }
        prev = Some((omega, k, l));
    }
}

#[test]
fn busy_period_has_gamma_mean() {
    // the busy period straddling a fixed point is Gamma(1/2, rate κ²/8)
    let mut rng = rng::stream(13, 0, Purpose::Excursion);
    let lengths: Vec<f64> = (0..20_000).map(|_| sample_straddling_excursion(0.5, 0.0025, &mut rng).length).collect();
    let (m, se) = mean_se(&lengths);
    assert!((m - 16.0).abs() <= 3.0 * se, "{m} ± {se}");
}

#[test]
fn positive_occupation_mean_from_xi() {
    // 4∫₀² E[Z_s] ds with E[Z_s] = (e^{(1−κ)s/2} − 1)/(1−κ) at κ = 1/2
    let exact = 8.0 * (4.0 * 0.5f64.exp_m1() - 2.0);
    let bessel = Stepping::Relative { h: 2e-3, dt_min: 0.0 };
    let xs: Vec<f64> =
        (0..10_000u64).map(|r| theta_from_xi(0.5, 2.0, &SdeConfig::new(1e-4, 14).replicate(r), bessel, 16.0).unwrap().theta1).collect();
    let (m, se) = mean_se(&xs);
    assert!((m - exact).abs() <= 3.0 * se, "{m} ± {se} vs {exact}");
}

#[test]
fn hitting_time_law_from_xi_matches_diffusion() {
    // both sides censored at the same time; H has a heavy tail
    let (kappa, v, cap, n) = (0.5, 2.0, 100.0, 2000u64);
    let bessel = Stepping::Relative { h: 2e-3, dt_min: 0.0 };
    let from_xi: Vec<f64> = (0..n)
        .map(|r| {
            let s = theta_from_xi(kappa, v, &SdeConfig::new(1e-3, 15).replicate(r), bessel, cap).unwrap();
            (s.theta1 + s.theta2).min(cap)
        })
        .collect();
    let direct: Vec<f64> = (0..n)
        .map(|r| {
            let env = sample_potential_with(kappa, -100.0, v + 1.0, 0.01, 16, r, EnvNoise::Gaussian).unwrap();
            hit(&env, v, &DiffusionConfig::new(1e-3, 17).replicate(r).capped(cap)).unwrap().h.min(cap)
        })
        .collect();
    let d = ks_two_sample(&from_xi, &direct);
    assert!(d < 0.05, "KS {d}");
}

#[test]
fn bessel_passage_scales() {
    // Υ(√a⇝1) has the law of a·Υ(1⇝1/√a); a = 4, dimension 1, both censored at 20
    let (n, cap) = (5000u64, 20.0);
    let passage = |from: f64, to: f64, cap: f64, seed: u64, r: u64| {
        bessel_passage_rng(1.0, from, to, Stepping::Fixed(1e-4), cap, u64::MAX, &mut rng::stream(seed, r, Purpose::Bessel)).unwrap().time
    };
    let wide: Vec<f64> = (0..n).map(|r| passage(2.0, 1.0, cap, 18, r)).collect();
    let scaled: Vec<f64> = (0..n).map(|r| 4.0 * passage(1.0, 0.5, cap / 4.0, 19, r)).collect();
    let d = ks_two_sample(&wide, &scaled);
    assert!(d < 0.03, "KS {d}");
}

#[test]
fn stable_functional_is_self_similar() {
    // U_s / s^{1/κ} has the law of U_1; κ = 1/2, s = 2, both censored at 10
    let (n, cap) = (5000u64, 10.0);
    let draw = |s: f64, seed: u64, r: u64| {
        let cfg = StableConfig { u_cap: cap * s * s, ..Default::default() };
        let u = stable_functional(0.5, s, &cfg, &mut rng::stream(seed, r, Purpose::Driving)).unwrap();
        (u.value / (s * s)).min(cap)
    };
    let one: Vec<f64> = (0..n).map(|r| draw(1.0, 20, r)).collect();
    let two: Vec<f64> = (0..n).map(|r| draw(2.0, 21, r)).collect();
    let d = ks_two_sample(&one, &two);
    assert!(d < 0.03, "KS {d}");
}

#[test]
fn backtrack_counts_decay_exponentially() {
    // short horizon and steep drift so that backtracks are observable
    let (kappa, t, v) = (1.5, 3.0, 6.0);
    let mut at_least = [0usize; 6];
    for e in 0..500u64 {
        let env = sample_potential(kappa, -30.0, 40.0, 0.01, e).unwrap();
        let valleys = decompose_valleys_with(&env, t, v, ValleyConfig { right_window: Some(30.0), near_record: true }).unwrap();
        let b = decompose_hitting(&env, &valleys, &DiffusionConfig::new(1e-2, 22).replicate(e)).unwrap();
        for (f, c) in at_least.iter_mut().enumerate() {
            *c += (b.b_total >= f as u64) as usize;
        }
    }
    let f: Vec<f64> = (1..6).map(|f| f as f64).collect();
    let lp: Vec<f64> = (1..6).map(|f| (at_least[f] as f64 / 500.0).ln()).collect();
    assert!(lp.iter().all(|x| x.is_finite()), "{at_least:?}");
    let (slope, _, _) = linear_fit(&f, &lp);
    assert!(slope <= -0.5, "slope {slope}, counts {at_least:?}");
}

#[test]
fn flat_exit_time_respects_certified_moment() {
    let env = PotentialPath::pure_drift(0.0, -1.0, 2.0, 0.01).unwrap();
    let bound = exit_laplace_bound(&env, 0.0, 1.0).unwrap();
    let med = Medium::new(&env);
    let ys: Vec<f64> = (0..10_000u64)
        .map(|r| {
            (bound.lambda_star * exit_time_in(&med, &env, 0.5, 0.0, 1.0, &DiffusionConfig::new(1e-4, 23).replicate(r)).unwrap().time).exp()
        })
        .collect();
    let (m, se) = mean_se(&ys);
    assert!(m - 3.0 * se <= bound.bound, "{m} ± {se} vs {}", bound.bound);
}

fn brox(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_brox")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn cli_constants_prints_json() {
    let (code, out) = brox(&["constants", "--kappa", "0.5"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["c_kappa"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((v["c_h_fullline"].as_f64().unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn cli_fit_recovers_slope() {
    let dir = std::env::temp_dir().join(format!("brox-fit-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tail.csv");
    let rows: String = [1.0f64, 1.5, 2.0, 2.5].iter().map(|&u| format!("{u},{}\n", (-0.5 * u.powi(3)).exp())).collect();
    std::fs::write(&path, format!("u,p_hat\n{rows}")).unwrap();
    let (code, out) = brox(&["fit", "--input", path.to_str().unwrap(), "--mode", "log_vs_log"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["slope"].as_f64().unwrap() - 3.0).abs() < 1e-9, "{out}");
}

#[test]
fn cli_verify_constants_passes() {
    let (code, out) = brox(&["verify", "constants"]);
    assert_eq!(code, 0);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn cli_usage_errors_exit_two() {
    assert_eq!(brox(&["no-such-command"]).0, 2);
    let dir = std::env::temp_dir().join(format!("brox-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"kappa": 0.5, "unknown_key": 1}"#).unwrap();
    assert_eq!(brox(&["constants", "--config", path.to_str().unwrap()]).0, 2);
    assert_eq!(brox(&["tail-annealed", "--event", "speedup_x", "--kappa", "-1", "--t", "4", "--u", "1", "--n", "10"]).0, 2);
}
