//! Deviation probabilities by Monte Carlo, annealed (fresh environment per
//! replicate) and quenched (one frozen environment), with exponent fits, the
//! predicted exponents, and the constants `c_κ` and `∫h`.
//!
//! Every replicate draws from its own streams keyed by `(seed, replicate)`,
//! and results are reduced in replicate order, so estimates are bit-exact for
//! any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{self, DiffusionConfig, Medium};
use crate::error::{require, Error, Result};
use crate::numerics;
use crate::potential::{sample_potential_with, EnvNoise, PotentialPath};
use crate::processes::{bessel_passage_rng, xi_theta1, Stepping};
use crate::rng::{self, Purpose};

/// Annealed deviation events; `t` is the time horizon for X events and
/// `v` the level for H events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnealedEvent {
    /// `X_t > t^κ·u`.
    SpeedupX,
    /// `sup_{s≤t} X_s ≥ t^κ·u`.
    SpeedupSupX,
    /// `X_t < t^κ/u`.
    SlowdownX,
    /// `H(v) < (v/u)^{1/κ}`.
    SpeedupH { v: f64 },
    /// `H(v) > (v·u)^{1/κ}`.
    SlowdownH { v: f64 },
}

impl AnnealedEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SpeedupX => "speedup_X",
            Self::SpeedupSupX => "speedup_sup_X",
            Self::SlowdownX => "slowdown_X",
            Self::SpeedupH { .. } => "speedup_H",
            Self::SlowdownH { .. } => "slowdown_H",
        }
    }

    fn level(&self) -> Option<f64> {
        match self {
            Self::SpeedupH { v } | Self::SlowdownH { v } => Some(*v),
            _ => None,
        }
    }

    /// Threshold in space (X events) or time (H events).
    fn threshold(&self, kappa: f64, t: f64, u: f64) -> f64 {
        match self {
            Self::SpeedupX | Self::SpeedupSupX => t.powf(kappa) * u,
            Self::SlowdownX => t.powf(kappa) / u,
            Self::SpeedupH { v } => (v / u).powf(1.0 / kappa),
            Self::SlowdownH { v } => (v * u).powf(1.0 / kappa),
        }
    }

    fn regime_warning(&self, kappa: f64, t: f64, u: f64) -> Option<String> {
        let (scale, name) = match self.level() {
            Some(v) => (v, "v"),
            None => (t, "t"),
        };
        match self {
            Self::SpeedupX | Self::SpeedupSupX | Self::SpeedupH { .. } if kappa < 1.0 && u >= scale.powf(1.0 - kappa) => {
                Some(format!("u = {u} is not small against {name}^(1-kappa) = {:.3}", scale.powf(1.0 - kappa)))
            }
            Self::SlowdownX | Self::SlowdownH { .. } if u.ln() >= scale => {
                Some(format!("log u = {:.3} is not small against {name} = {scale}", u.ln()))
            }
            _ => None,
        }
    }
}

/// Quenched deviation events in one frozen environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuenchedEvent {
    /// `X_t > t^κ·u` (parameter `u`).
    Speedup,
    /// `H(t^ν) > t` (parameter `ν`).
    SlowdownH,
    /// `X_t < t^ν` (parameter `ν`).
    SlowdownX,
}

impl QuenchedEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Speedup => "quenched_speedup",
            Self::SlowdownH => "quenched_slowdown_H",
            Self::SlowdownX => "quenched_slowdown_X",
        }
    }
}

/// How annealed probabilities are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnnealedMethod {
    /// Fresh environment and diffusion per replicate.
    #[default]
    Direct,
    /// H events only: `H(v)` sampled as `θ₁ + θ₂`, with `θ₁ = 4∫₀ᵛZ` from
    /// the `Ξ` diffusion and `θ₂ = 16·Υ_{2−2κ}(e^{Ξ(v)/2}⇝1)` from a Bessel
    /// passage, which has the annealed law of `H(v)` and costs `O(v/dt)`.
    Representation,
}

/// Numerical options shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub dt: f64,
    pub dx: f64,
    /// Environment window `[x_min, x_max]`; `None` picks one from the event.
    pub window: Option<(f64, f64)>,
    pub noise: EnvNoise,
    pub method: AnnealedMethod,
    /// Relative step of the Bessel passages in the representation method.
    pub bessel_h: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub max_steps: u64,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            dx: 0.05,
            window: None,
            noise: EnvNoise::Gaussian,
            method: AnnealedMethod::Direct,
            bessel_h: 2e-3,
            workers: None,
            max_steps: 2_000_000_000,
        }
    }
}

/// Estimated probability of one event at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub event: String,
    pub kappa: f64,
    /// Horizon `t` (X events and quenched events) or level `v` (annealed H events).
    pub t: f64,
    /// `u` for speedup and annealed slowdown events, `ν` for quenched slowdown.
    pub u: f64,
    pub n: usize,
    pub successes: usize,
    pub p_hat: f64,
    pub se: f64,
    /// One-sided 95% upper bound `3/n` when no success was observed.
    pub upper95: Option<f64>,
    pub seed: u64,
    pub env_seed: Option<u64>,
    pub regime_warning: Option<String>,
}

pub const TAIL_CSV_HEADER: &str = "event,kappa,t,u,n,p_hat,se,seed,env_seed";

impl TailEstimate {
    #[allow(clippy::too_many_arguments)]
    fn from_counts(event: String, kappa: f64, t: f64, u: f64, n: usize, successes: usize, seed: u64, env_seed: Option<u64>) -> Self {
        let p = successes as f64 / n as f64;
        Self {
            event,
            kappa,
            t,
            u,
            n,
            successes,
            p_hat: p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
            upper95: (successes == 0).then(|| 3.0 / n as f64),
            seed,
            env_seed,
            regime_warning: None,
        }
    }

    pub fn csv_row(&self) -> String {
        let env = self.env_seed.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{},{},{},{}", self.event, self.kappa, self.t, self.u, self.n, self.p_hat, self.se, self.seed, env)
    }
}

/// Evaluate `f` on replicates `0..n` on `workers` threads, in replicate order.
fn fan_out<T: Send>(n: usize, workers: Option<usize>, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let run = || (0..n as u64).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match workers {
        None => run(),
        Some(w) => {
            require(w >= 1, "workers must be at least 1")?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().map_err(|e| Error::Config(e.to_string()))?;
            pool.install(run)
        }
    }
}

fn tally(flags: &[Vec<bool>], k: usize) -> usize {
    flags.iter().filter(|f| f[k]).count()
}

/// `P(event)` under the annealed law, one estimate per `u` in `us`, all
/// sharing the same replicates.
pub fn estimate_tail_annealed_grid(
    kappa: f64,
    t: f64,
    us: &[f64],
    event: AnnealedEvent,
    n: usize,
    seed: u64,
    opts: &TailOptions,
) -> Result<Vec<TailEstimate>> {
    require(n > 0, "n must be positive")?;
    require(!us.is_empty(), "need at least one u")?;
    require(kappa > 0.0, "kappa must be positive")?;
    require(opts.dt > 0.0 && opts.dx > 0.0, "dt and dx must be positive")?;
    let thresholds: Vec<f64> = us.iter().map(|&u| event.threshold(kappa, t, u)).collect();
    let flags = match (opts.method, event) {
        (AnnealedMethod::Representation, AnnealedEvent::SpeedupH { v } | AnnealedEvent::SlowdownH { v }) => {
            let speedup = matches!(event, AnnealedEvent::SpeedupH { .. });
            fan_out(n, opts.workers, |r| representation_replicate(kappa, v, &thresholds, speedup, seed, r, opts))?
        }
        (AnnealedMethod::Representation, _) => {
            return Err(Error::InvalidArgument("the representation method covers H events only".into()));
        }
        (AnnealedMethod::Direct, _) => {
            let window = opts.window.unwrap_or_else(|| default_annealed_window(kappa, t, &thresholds, event));
            fan_out(n, opts.workers, |r| direct_replicate(kappa, t, &thresholds, event, window, seed, r, opts))?
        }
    };
    let horizon = event.level().unwrap_or(t);
    Ok(us
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let mut e = TailEstimate::from_counts(event.name().into(), kappa, horizon, u, n, tally(&flags, k), seed, None);
            e.regime_warning = event.regime_warning(kappa, t, u);
            e
        })
        .collect())
}

pub fn estimate_tail_annealed(
    kappa: f64,
    t: f64,
    u: f64,
    event: AnnealedEvent,
    n: usize,
    seed: u64,
    opts: &TailOptions,
) -> Result<TailEstimate> {
    Ok(estimate_tail_annealed_grid(kappa, t, &[u], event, n, seed, opts)?.remove(0))
}

fn default_annealed_window(kappa: f64, t: f64, thresholds: &[f64], event: AnnealedEvent) -> (f64, f64) {
    let largest = thresholds.iter().cloned().fold(0.0, f64::max);
    // to the left the potential climbs at rate κ/2, and within time T the walk
    // climbs about log T; keep the edge well beyond that height
    let climb = |horizon: f64| 10.0 * (1.0 + horizon).ln() / kappa;
    match event.level() {
        Some(v) => (-(50.0f64.max(v).max(climb(largest))), v + 20.0),
        None => {
            let scale = t.powf(kappa).max(largest).max(1.0);
            (-(50.0f64.max(2.0 * scale).max(climb(t))), 100.0f64.max(10.0 * scale))
        }
    }
}

fn snap(x: f64, dx: f64, up: bool) -> f64 {
    let k = x / dx;
    (if up { k.ceil() } else { k.floor() }) * dx
}

#[allow(clippy::too_many_arguments)]
fn direct_replicate(
    kappa: f64,
    t: f64,
    thresholds: &[f64],
    event: AnnealedEvent,
    window: (f64, f64),
    seed: u64,
    r: u64,
    opts: &TailOptions,
) -> Result<Vec<bool>> {
    let env = sample_potential_with(kappa, snap(window.0, opts.dx, false), snap(window.1, opts.dx, true), opts.dx, seed, r, opts.noise)?;
    let cfg = DiffusionConfig { dt: opts.dt, seed, replicate: r, max_steps: opts.max_steps, time_cap: f64::INFINITY };
    match event {
        AnnealedEvent::SpeedupH { v } | AnnealedEvent::SlowdownH { v } => {
            let cap = thresholds.iter().cloned().fold(0.0, f64::max);
            let h = diffusion::hit(&env, v, &cfg.capped(cap))?;
            Ok(thresholds
                .iter()
                .map(|&y| match event {
                    AnnealedEvent::SpeedupH { .. } => !h.censored && h.h < y,
                    _ => h.censored || h.h > y,
                })
                .collect())
        }
        _ => {
            let path_end = run_to_time(&env, t, &cfg)?;
            Ok(thresholds
                .iter()
                .map(|&level| match event {
                    AnnealedEvent::SpeedupX => path_end.0 > level,
                    AnnealedEvent::SpeedupSupX => path_end.1 >= level,
                    _ => path_end.0 < level,
                })
                .collect())
        }
    }
}

/// `(X_t, sup_{s≤t} X_s)`.
fn run_to_time(env: &PotentialPath, t: f64, cfg: &DiffusionConfig) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let med = Medium::new(env);
    let (mut end, mut sup) = (0.0f64, 0.0f64);
    diffusion::drive(&med, 0.0, cfg, false, &mut rng::stream(cfg.seed, cfg.replicate, Purpose::Driving), |s| {
        if s.t0 + s.dt >= t {
            end = s.x0 + (t - s.t0) / s.dt * (s.x1 - s.x0);
            sup = sup.max(end);
            return false;
        }
        sup = sup.max(s.x1);
        true
    })?;
    Ok((end, sup))
}

fn representation_replicate(
    kappa: f64,
    v: f64,
    thresholds: &[f64],
    speedup: bool,
    seed: u64,
    r: u64,
    opts: &TailOptions,
) -> Result<Vec<bool>> {
    let y_max = thresholds.iter().cloned().fold(0.0, f64::max);
    let mut drng = rng::stream(seed, r, Purpose::Driving);
    let (theta1, xi, stopped) = xi_theta1(kappa, v, opts.dt, y_max, &mut drng);
    // total time, +∞ standing for "beyond every threshold"
    let h = if stopped {
        f64::INFINITY
    } else {
        let mut brng = rng::stream(seed, r, Purpose::Bessel);
        let stepping = Stepping::Relative { h: opts.bessel_h, dt_min: 0.0 };
        let p = bessel_passage_rng(2.0 - 2.0 * kappa, (0.5 * xi).exp(), 1.0, stepping, (y_max - theta1) / 16.0, opts.max_steps, &mut brng)?;
        if p.censored {
            f64::INFINITY
        } else {
            theta1 + 16.0 * p.time
        }
    };
    Ok(thresholds.iter().map(|&y| if speedup { h < y } else { h > y }).collect())
}

/// Default quenched window: generous on the left, past the event level on the right.
fn default_quenched_window(kappa: f64, t: f64, param: f64, event: QuenchedEvent) -> (f64, f64) {
    let reach = match event {
        QuenchedEvent::Speedup => 4.0 * t.powf(kappa) * param.max(1.0),
        QuenchedEvent::SlowdownH | QuenchedEvent::SlowdownX => 4.0 * t.powf(kappa).max(t.powf(param)),
    };
    (-100.0, reach + 100.0)
}

/// `P_W(event)` in the environment drawn from `env_seed`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_tail_quenched(
    env_seed: u64,
    kappa: f64,
    t: f64,
    param: f64,
    event: QuenchedEvent,
    n: usize,
    seed: u64,
    opts: &TailOptions,
) -> Result<TailEstimate> {
    require(n > 0, "n must be positive")?;
    require(kappa > 0.0 && t > 0.0, "kappa and t must be positive")?;
    let (lo, hi) = opts.window.unwrap_or_else(|| default_quenched_window(kappa, t, param, event));
    let env = sample_potential_with(kappa, snap(lo, opts.dx, false), snap(hi, opts.dx, true), opts.dx, env_seed, 0, opts.noise)?;
    estimate_tail_in(&env, t, param, event, n, seed, opts)
}

/// As [`estimate_tail_quenched`] for an explicit environment.
pub fn estimate_tail_in(
    env: &PotentialPath,
    t: f64,
    param: f64,
    event: QuenchedEvent,
    n: usize,
    seed: u64,
    opts: &TailOptions,
) -> Result<TailEstimate> {
    require(n > 0, "n must be positive")?;
    let kappa = env.kappa;
    let level = match event {
        QuenchedEvent::Speedup => t.powf(kappa) * param,
        QuenchedEvent::SlowdownH | QuenchedEvent::SlowdownX => t.powf(param),
    };
    if event == QuenchedEvent::SlowdownH && level > env.x_max {
        return Err(Error::WindowExceeded(format!("level t^nu = {level} beyond the environment window ({})", env.x_max)));
    }
    let med = Medium::new(env);
    let flags = fan_out(n, opts.workers, |r| {
        let cfg = DiffusionConfig { dt: opts.dt, seed, replicate: r, max_steps: opts.max_steps, time_cap: f64::INFINITY };
        Ok(match event {
            QuenchedEvent::SlowdownH => diffusion::hit_in(&med, env, level, &cfg.capped(t))?.censored,
            QuenchedEvent::Speedup => run_to_time(env, t, &cfg)?.0 > level,
            QuenchedEvent::SlowdownX => run_to_time(env, t, &cfg)?.0 < level,
        })
    })?;
    let successes = flags.iter().filter(|&&f| f).count();
    let mut e = TailEstimate::from_counts(event.name().into(), kappa, t, param, n, successes, seed, Some(env.seed));
    if event != QuenchedEvent::Speedup && !(param > 0.0 && param < kappa.min(1.0)) {
        e.regime_warning = Some(format!("nu = {param} outside (0, min(1, kappa))"));
    }
    Ok(e)
}

/// Coordinates of an exponent fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// `log(−log p̂)` against `log u`.
    LogVsLog,
    /// `log(−log p̂)` against `log t`.
    LoglogVsLog,
    /// `log p̂` against `log u` (power-law decay).
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub mode: FitMode,
    /// Abscissae as given (`u` or `t`).
    pub x: Vec<f64>,
    /// Transformed ordinates.
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Input points dropped because `p̂ ∈ {0, 1}`.
    pub rejected: Vec<(f64, f64)>,
}

/// Least squares on the transformed coordinates; points with `p̂ ∉ (0, 1)`
/// are rejected (listed in the result), and fewer than three survivors is an error.
pub fn fit_exponent(points: &[(f64, f64)], mode: FitMode) -> Result<ExponentFit> {
    let (mut xs, mut ys, mut rejected) = (Vec::new(), Vec::new(), Vec::new());
    for &(a, p) in points {
        if !(p > 0.0 && p < 1.0) || a <= 0.0 {
            rejected.push((a, p));
            continue;
        }
        xs.push(a);
        ys.push(match mode {
            FitMode::LogVsLog | FitMode::LoglogVsLog => (-p.ln()).ln(),
            FitMode::PowerLaw => p.ln(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!("only {} usable points (need 3)", xs.len())));
    }
    let lx: Vec<f64> = xs.iter().map(|a| a.ln()).collect();
    let (slope, intercept, r2) = numerics::linear_fit(&lx, &ys);
    if !slope.is_finite() {
        return Err(Error::Numerical("non-finite slope".into()));
    }
    Ok(ExponentFit { mode, x: xs, y: ys, slope, intercept, r2, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedExponents {
    pub kappa: f64,
    /// `1/(1−κ)` for `κ < 1`.
    pub speedup_exponent: Option<f64>,
    /// `u·P(slowdown)` tends to a constant.
    pub annealed_slowdown_power: f64,
    pub nu: Option<f64>,
    /// `(1 − ν/κ) ∧ κ/(κ+1)`.
    pub quenched_slowdown_doublelog: Option<f64>,
}

/// The exponents the limit theorems predict. `ν`, when given, must lie in
/// `(0, 1∧κ]`.
pub fn predicted_exponents(kappa: f64, nu: Option<f64>) -> Result<PredictedExponents> {
    require(kappa > 0.0 && kappa.is_finite(), "kappa must be positive")?;
    let doublelog = match nu {
        Some(nu) => {
            require(nu > 0.0 && nu <= kappa.min(1.0), "nu must lie in (0, min(1, kappa)]")?;
            Some((1.0 - nu / kappa).min(kappa / (kappa + 1.0)))
        }
        None => None,
    };
    Ok(PredictedExponents {
        kappa,
        speedup_exponent: (kappa < 1.0).then(|| 1.0 / (1.0 - kappa)),
        annealed_slowdown_power: 1.0,
        nu,
        quenched_slowdown_doublelog: doublelog,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub kappa: f64,
    /// `π/(2κ sin πκ)·(κ^κ/Γ(κ))²`.
    pub c_kappa: f64,
    /// `∫₀^∞ h` by quadrature in `x`.
    pub c_h_halfline: f64,
    /// `2^{−κ}/κ`.
    pub c_h_halfline_analytic: f64,
    /// `∫_ℝ h` by quadrature in `x`.
    pub c_h_fullline: f64,
    /// `1/κ`.
    pub c_h_fullline_analytic: f64,
}

/// `h` at `z = e^r`, in log scale.
fn h_at_log(kappa: f64, r: f64) -> f64 {
    let log1pz = if r > 30.0 { r + (-r).exp().ln_1p() } else { r.exp().ln_1p() };
    (r - (1.0 + 2.0 * kappa) * log1pz).exp()
}

/// `∫ h dx` over `x ∈ [0, ±∞)` by marching `r = log f⁻¹(x)` and the integral
/// together with RK4 (`dr/dx = (1+e^r)^{−κ}`, `r = 0` at `x = 0`). The right
/// side runs in `s = log(1+x)` up to `x ≈ e^{40}`, the left side in `x = −s`
/// down to `x = −60`; both cut-offs leave tails far below the tolerance.
fn h_integral(kappa: f64, right: bool) -> f64 {
    let (s_end, steps) = if right { (40.0, 40_000) } else { (60.0, 30_000) };
    let ds = s_end / steps as f64;
    // d(r, I)/ds with the Jacobian dx/ds
    let rhs = |s: f64, r: f64| {
        let jac = if right { s.exp() } else { -1.0 };
        let drds = jac * (1.0 + r.exp()).powf(-kappa);
        (drds, jac.abs() * h_at_log(kappa, r))
    };
    let (mut r, mut acc) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let s = k as f64 * ds;
        let (r1, i1) = rhs(s, r);
        let (r2, i2) = rhs(s + 0.5 * ds, r + 0.5 * ds * r1);
        let (r3, i3) = rhs(s + 0.5 * ds, r + 0.5 * ds * r2);
        let (r4, i4) = rhs(s + ds, r + ds * r3);
        r += ds / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
        acc += ds / 6.0 * (i1 + 2.0 * i2 + 2.0 * i3 + i4);
    }
    acc
}

pub fn constants(kappa: f64) -> Result<Constants> {
    require(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)")?;
    let pi = std::f64::consts::PI;
    let c_kappa = pi / (2.0 * kappa * (pi * kappa).sin()) * (kappa.powf(kappa) / statrs::function::gamma::gamma(kappa)).powi(2);
    let half = h_integral(kappa, true);
    let neg = h_integral(kappa, false);
    Ok(Constants {
        kappa,
        c_kappa,
        c_h_halfline: half,
        c_h_halfline_analytic: 2f64.powf(-kappa) / kappa,
        c_h_fullline: half + neg,
        c_h_fullline_analytic: 1.0 / kappa,
    })
}
