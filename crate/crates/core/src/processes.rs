//! Auxiliary processes: `Ξ_κ` and `Z = e^Ξ − 1`, squared Bessel processes and
//! the dimension-0 bridge, Bessel first passages, the exact `Υ` law, the
//! stable functional `U_s`, and Kotani's stationary process `U_λ` with its
//! scale function.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require, Error, Result};
use crate::localtime::{self, Stop, WalkConfig};
use crate::numerics;
use crate::potential::PotentialPath;
use crate::rng::{self, Purpose, StreamRng};

/// Step size and stream selection for the SDE integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub replicate: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_max_steps() -> u64 {
    200_000_000
}

impl SdeConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self { dt, seed, replicate: 0, max_steps: default_max_steps() }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    pub fn stream(&self, purpose: Purpose) -> StreamRng {
        rng::stream(self.seed, self.replicate, purpose)
    }

    fn check(&self) -> Result<()> {
        require(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive")
    }
}

/// Scalar path on a uniform grid of step `dt` starting at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub scheme: &'static str,
    pub seed: u64,
}

impl ProcessPath {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Trapezoid integral of `f(value)` over the whole path.
    pub fn integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        let v: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        v.windows(2).map(|w| 0.5 * (w[0] + w[1]) * self.dt).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.time(i), v));
        }
        s
    }
}

fn steps_for(total: f64, dt: f64) -> usize {
    (total / dt - 1e-9).ceil().max(0.0) as usize
}

#[inline]
fn xi_step(kappa: f64, xi: f64, dt: f64, sqdt: f64, z: f64) -> f64 {
    let e = (-xi).exp();
    let next = xi + (1.0 - e).max(0.0).sqrt() * sqdt * z + (-0.5 * kappa + 0.5 * (1.0 + kappa) * e) * dt;
    next.max(0.0)
}

/// Full-truncation Euler path of `dΞ = √(1−e^{−Ξ})dβ + (−κ/2 + (1+κ)/2·e^{−Ξ})dt`, `Ξ(0)=0`.
pub fn integrate_xi(kappa: f64, t: f64, cfg: &SdeConfig) -> Result<ProcessPath> {
    require(kappa >= 0.0, "kappa must be non-negative")?;
    require(t > 0.0, "T must be positive")?;
    cfg.check()?;
    let n = steps_for(t, cfg.dt);
    let mut rng = cfg.stream(Purpose::Driving);
    let sqdt = cfg.dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut xi = 0.0;
    values.push(xi);
    for _ in 0..n {
        xi = xi_step(kappa, xi, cfg.dt, sqdt, rng::normal(&mut rng));
        values.push(xi);
    }
    Ok(ProcessPath { dt: cfg.dt, values, scheme: "euler-full-truncation", seed: cfg.seed })
}

/// Streaming `(4∫₀ᵛ Z, Ξ(v))` without storing the path; stops early once the
/// running `θ₁` exceeds `stop_above` (returning the partial value).
pub fn xi_theta1(kappa: f64, v: f64, dt: f64, stop_above: f64, rng: &mut StreamRng) -> (f64, f64, bool) {
    let n = steps_for(v, dt);
    let sqdt = dt.sqrt();
    let (mut xi, mut z, mut theta1) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let next = xi_step(kappa, xi, dt, sqdt, rng::normal(rng));
        let zn = next.exp_m1();
        theta1 += 2.0 * (z + zn) * dt;
        xi = next;
        z = zn;
        if theta1 > stop_above {
            return (theta1, xi, true);
        }
    }
    (theta1, xi, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSample {
    pub theta1: f64,
    pub theta2: f64,
    /// `θ₂` hit its time cap and is only a lower bound.
    pub censored: bool,
    /// `κ ≥ 1`: the Bessel dimension is non-positive.
    pub absorbed_regime: bool,
}

/// `(θ₁, θ₂) = (4∫₀ᵛ Z, 16·Υ_{2−2κ}(e^{Ξ(v)/2}⇝1))` from one `Ξ` path and an
/// independent Bessel passage (step rule `bessel`); `theta2_cap` bounds `θ₂`.
pub fn theta_from_xi(kappa: f64, v: f64, cfg: &SdeConfig, bessel: Stepping, theta2_cap: f64) -> Result<ThetaSample> {
    require(kappa > 0.0, "kappa must be positive")?;
    require(v > 0.0, "v must be positive")?;
    cfg.check()?;
    let mut rng = cfg.stream(Purpose::Driving);
    let (theta1, xi, _) = xi_theta1(kappa, v, cfg.dt, f64::INFINITY, &mut rng);
    let mut brng = cfg.stream(Purpose::Bessel);
    let start = (0.5 * xi).exp();
    let p = bessel_passage_rng(2.0 - 2.0 * kappa, start, 1.0, bessel, theta2_cap / 16.0, cfg.max_steps, &mut brng)?;
    Ok(ThetaSample { theta1, theta2: 16.0 * p.time, censored: p.censored, absorbed_regime: kappa >= 1.0 })
}

#[inline]
fn besq_step(x: f64, delta: f64, dt: f64, z: f64) -> f64 {
    (x + 2.0 * x.max(0.0).sqrt() * dt.sqrt() * z + delta * dt).max(0.0)
}

/// Full-truncation Euler for `dX = 2√X dβ + δ dt`, optionally bridged to 0 at
/// time `alpha` by the extra drift `−2X/(α−s)`; bridged paths stop at `α−dt`.
pub fn simulate_besq(delta: f64, x0: f64, t: f64, cfg: &SdeConfig, bridge_to_zero_at: Option<f64>) -> Result<ProcessPath> {
    let mut rng = cfg.stream(Purpose::Bessel);
    simulate_besq_rng(delta, x0, t, cfg.dt, bridge_to_zero_at, cfg.seed, &mut rng)
}

pub fn simulate_besq_rng(
    delta: f64,
    x0: f64,
    t: f64,
    dt: f64,
    bridge_to_zero_at: Option<f64>,
    seed: u64,
    rng: &mut StreamRng,
) -> Result<ProcessPath> {
    require(delta >= 0.0, "dimension must be non-negative")?;
    require(x0 >= 0.0, "start must be non-negative")?;
    require(dt > 0.0 && t >= 0.0, "need dt > 0 and T ≥ 0")?;
    let mut horizon = t;
    if let Some(alpha) = bridge_to_zero_at {
        require(delta == 0.0, "the bridge to zero is defined for dimension 0")?;
        require(alpha > 0.0, "bridge time must be positive")?;
        horizon = horizon.min(alpha - dt);
    }
    let n = steps_for(horizon.max(0.0), dt);
    let mut values = Vec::with_capacity(n + 1);
    let mut x = x0;
    values.push(x);
    for k in 0..n {
        let z = rng::normal(rng);
        x = match bridge_to_zero_at {
            None => besq_step(x, delta, dt, z),
            Some(alpha) => {
                let s = k as f64 * dt;
                (x + 2.0 * x.sqrt() * dt.sqrt() * z - 2.0 * x / (alpha - s) * dt).max(0.0)
            }
        };
        values.push(x);
    }
    let scheme = if bridge_to_zero_at.is_some() { "euler-full-truncation-bridge" } else { "euler-full-truncation" };
    Ok(ProcessPath { dt, values, scheme, seed })
}

/// Step rule for Bessel passages: fixed, or proportional to the current
/// squared level (bounded below), which keeps long excursions cheap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stepping {
    Fixed(f64),
    Relative { h: f64, dt_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub time: f64,
    pub censored: bool,
}

/// First passage of a Bessel process of dimension `dim` from `x_from` down to
/// `y_to`, simulated through its square; the crossing time is linearly
/// interpolated within the step.
pub fn bessel_first_passage(dim: f64, x_from: f64, y_to: f64, cfg: &SdeConfig) -> Result<f64> {
    let mut rng = cfg.stream(Purpose::Bessel);
    let p = bessel_passage_rng(dim, x_from, y_to, Stepping::Fixed(cfg.dt), f64::INFINITY, cfg.max_steps, &mut rng)?;
    Ok(p.time)
}

/// As [`bessel_first_passage`] with an explicit step rule and a time cap;
/// passages longer than `cap` are returned censored at `cap`.
pub fn bessel_passage_rng(
    dim: f64,
    x_from: f64,
    y_to: f64,
    stepping: Stepping,
    cap: f64,
    max_steps: u64,
    rng: &mut StreamRng,
) -> Result<Passage> {
    require(y_to >= 0.0, "target must be non-negative")?;
    if dim >= 2.0 && y_to < x_from {
        return invalid("dimension ≥ 2: downward passage may never happen");
    }
    require(x_from >= y_to, "only downward passages are supported")?;
    if x_from == y_to {
        return Ok(Passage { time: 0.0, censored: false });
    }
    let target = y_to * y_to;
    let mut x = x_from * x_from;
    let mut time = 0.0;
    for _ in 0..max_steps {
        let dt = match stepping {
            Stepping::Fixed(dt) => dt,
            Stepping::Relative { h, dt_min } => (h * x.max(target)).max(dt_min),
        };
        let next = x + 2.0 * x.max(0.0).sqrt() * dt.sqrt() * rng::normal(rng) + dim * dt;
        if next <= target {
            let time = time + dt * (x - target) / (x - next);
            return Ok(if time > cap { Passage { time: cap, censored: true } } else { Passage { time, censored: false } });
        }
        time += dt;
        if time >= cap {
            return Ok(Passage { time: cap, censored: true });
        }
        x = next;
    }
    Err(Error::Budget { what: "Bessel passage".into(), steps: max_steps })
}

/// Exact draw of `Υ_{2−2κ}(1⇝0)` as `1/(2G)`, `G ~ Gamma(κ, 1)`.
pub fn sample_upsilon_exact(kappa: f64, rng: &mut StreamRng) -> Result<f64> {
    require(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)")?;
    let g: f64 = Gamma::new(kappa, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
    Ok(0.5 / g)
}

/// Options for the stable functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableConfig {
    pub dt: f64,
    /// Local-time bin width at 0.
    pub bin: f64,
    /// Stop once the functional exceeds this value (reported censored).
    pub u_cap: f64,
    pub max_steps: u64,
}

impl Default for StableConfig {
    fn default() -> Self {
        Self { dt: 1e-4, bin: 0.02, u_cap: f64::INFINITY, max_steps: 500_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSample {
    pub value: f64,
    pub censored: bool,
}

/// `U_s = ∫₀^{τ_s} γ^{1/κ−2} 1{γ>0} du` for a Brownian `γ` stopped at the
/// inverse local time `τ_s`. Time spent below the local-time band contributes
/// to neither `U_s` nor the local time, so those stretches are skipped.
pub fn stable_functional(kappa: f64, s: f64, cfg: &StableConfig, rng: &mut StreamRng) -> Result<StableSample> {
    require(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)")?;
    require(s >= 0.0, "s must be non-negative")?;
    if s == 0.0 {
        return Ok(StableSample { value: 0.0, censored: false });
    }
    let p = 1.0 / kappa - 2.0;
    let wc = WalkConfig {
        dt: cfg.dt,
        bin: cfg.bin,
        max_steps: cfg.max_steps,
        window: Some((localtime::below_band(cfg.bin, cfg.dt), f64::INFINITY)),
    };
    let mut u = 0.0;
    let end = localtime::walk(Stop::InvLocalTime(s), &wc, rng, |g| {
        if g > 0.0 {
            u += g.powf(p) * cfg.dt;
        }
        u <= cfg.u_cap
    })?;
    Ok(StableSample { value: u, censored: end.interrupted })
}

/// Integration scheme for Kotani's process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KotaniScheme {
    /// Itô–Euler for `dU = U dW + (1 + (1−κ)/2·U − 2λU²)dt` driven by the
    /// environment's driftless increments, truncated at a positive floor.
    #[default]
    ItoEuler,
    /// Exact solution on each linear cell of `W_κ` of the Riccati equation
    /// `U' = 1 + sU − 2λU²` (`s` the cell slope): the Stratonovich reading of
    /// the same equation, exact for the piecewise-linear environment.
    CellwiseRiccati,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KotaniConfig {
    pub scheme: KotaniScheme,
    /// Burn-in length before `x_from`; `None` uses `20/λ`.
    pub burn_in: Option<f64>,
}

impl Default for KotaniConfig {
    fn default() -> Self {
        Self { scheme: KotaniScheme::ItoEuler, burn_in: None }
    }
}

pub const KOTANI_FLOOR: f64 = 1e-12;

/// Positive root of `2λU² − bU − 1 = 0`.
fn riccati_root(lambda: f64, b: f64) -> f64 {
    (b + (b * b + 8.0 * lambda).sqrt()) / (4.0 * lambda)
}

/// One cell of the exact Riccati flow; returns `(U(end), ∫U)`.
fn riccati_cell(lambda: f64, s: f64, u0: f64, h: f64) -> (f64, f64) {
    let disc = (s * s + 8.0 * lambda).sqrt();
    let rp = (s + disc) / (4.0 * lambda);
    let rm = (s - disc) / (4.0 * lambda);
    let q0 = (u0 - rp) / (u0 - rm);
    let q1 = q0 * (-2.0 * lambda * (rp - rm) * h).exp();
    let u1 = (rp - q1 * rm) / (1.0 - q1);
    let integral = rp * h + ((1.0 - q1) / (1.0 - q0)).ln() / (2.0 * lambda);
    (u1, integral)
}

/// Kotani's stationary process on `[x_from, x_to]` (grid-aligned, step = env dx),
/// started at the deterministic fixed point a burn-in length to the left.
pub fn kotani_u(lambda: f64, kappa: f64, env: &PotentialPath, x_from: f64, x_to: f64, cfg: &KotaniConfig) -> Result<ProcessPath> {
    Ok(kotani_run(lambda, kappa, env, x_from, x_to, cfg)?.0)
}

fn kotani_run(lambda: f64, kappa: f64, env: &PotentialPath, x_from: f64, x_to: f64, cfg: &KotaniConfig) -> Result<(ProcessPath, f64)> {
    require(lambda > 0.0, "lambda must be positive")?;
    require(x_from < x_to, "need x_from < x_to")?;
    let burn = cfg.burn_in.unwrap_or(20.0 / lambda);
    let start =
        env.index(x_from - burn).map_err(|_| Error::WindowExceeded(format!("burn-in needs the environment from {}", x_from - burn)))?;
    let (i_from, i_to) = (env.index(x_from)?, env.index(x_to)?);
    let dx = env.dx;
    let mut u = match cfg.scheme {
        KotaniScheme::ItoEuler => riccati_root(lambda, 0.5 * (1.0 - kappa)),
        KotaniScheme::CellwiseRiccati => riccati_root(lambda, -0.5 * kappa),
    };
    let mut values = Vec::with_capacity(i_to - i_from + 1);
    let mut integral = 0.0;
    for i in start..i_to {
        if i == i_from {
            values.push(u);
        }
        let (next, part) = match cfg.scheme {
            KotaniScheme::ItoEuler => {
                let dw = env.driftless_increment(i);
                let next = (u + u * dw + (1.0 + 0.5 * (1.0 - kappa) * u - 2.0 * lambda * u * u) * dx).max(KOTANI_FLOOR);
                (next, 0.5 * (u + next) * dx)
            }
            KotaniScheme::CellwiseRiccati => riccati_cell(lambda, (env.values[i + 1] - env.values[i]) / dx, u, dx),
        };
        if i >= i_from {
            integral += part;
        }
        u = next;
    }
    values.push(u);
    let scheme = match cfg.scheme {
        KotaniScheme::ItoEuler => "ito-euler-floor",
        KotaniScheme::CellwiseRiccati => "cellwise-riccati",
    };
    Ok((ProcessPath { dt: dx, values, scheme, seed: env.seed }, integral))
}

/// `exp(−2λ∫₀ᵛ U_λ)`, the quenched Laplace transform of `H(v)`.
pub fn kotani_laplace(lambda: f64, kappa: f64, env: &PotentialPath, v: f64, cfg: &KotaniConfig) -> Result<f64> {
    let (_, integral) = kotani_run(lambda, kappa, env, 0.0, v, cfg)?;
    Ok((-2.0 * lambda * integral).exp())
}

fn kotani_integrand(kappa: f64, lambda: f64, s: f64) -> f64 {
    (2.0 / s + 4.0 * lambda * s).exp() / s.powf(1.0 - kappa)
}

/// `g(x) = ∫₁ˣ e^{2/s+4λs}/s^{1−κ} ds` by adaptive quadrature.
pub fn kotani_scale_g(kappa: f64, lambda: f64, x: f64) -> Result<f64> {
    require(x > 0.0, "x must be positive")?;
    require(lambda > 0.0, "lambda must be positive")?;
    Ok(signed_integral(&|s| kotani_integrand(kappa, lambda, s), 1.0, x))
}

fn signed_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    // integrate in log-space so that wide ranges are resolved evenly
    let h = |u: f64| {
        let s = u.exp();
        f(s) * s
    };
    let rough = numerics::integrate(&h, lo.ln(), hi.ln(), f64::INFINITY).abs();
    sign * numerics::integrate(&h, lo.ln(), hi.ln(), 1e-13 * rough.max(1e-300))
}

/// Tabulated `g` with a monotone inverse.
#[derive(Debug, Clone)]
pub struct KotaniScale {
    pub kappa: f64,
    pub lambda: f64,
    nodes: Vec<f64>,
    g: Vec<f64>,
}

impl KotaniScale {
    /// Tabulate `g` on a geometric grid of `y` covering `[y_lo, y_hi]`.
    pub fn new(kappa: f64, lambda: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        require(lambda > 0.0 && y_lo > 0.0 && y_lo < 1.0 && y_hi > 1.0, "need λ > 0 and y_lo < 1 < y_hi")?;
        let per_decade = 200.0;
        let n = ((y_hi / y_lo).log10() * per_decade).ceil() as usize + 1;
        let mut nodes: Vec<f64> = (0..n).map(|i| y_lo * (y_hi / y_lo).powf(i as f64 / (n - 1) as f64)).collect();
        nodes.push(1.0);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let one = nodes.iter().position(|&y| y == 1.0).unwrap();
        let f = |s: f64| kotani_integrand(kappa, lambda, s);
        let mut g = vec![0.0; nodes.len()];
        for i in one + 1..nodes.len() {
            g[i] = g[i - 1] + signed_integral(&f, nodes[i - 1], nodes[i]);
        }
        for i in (0..one).rev() {
            g[i] = g[i + 1] - signed_integral(&f, nodes[i], nodes[i + 1]);
        }
        Ok(Self { kappa, lambda, nodes, g })
    }

    pub fn g(&self, y: f64) -> f64 {
        let i = self.nodes.partition_point(|&n| n <= y).saturating_sub(1).min(self.nodes.len() - 2);
        self.g[i] + signed_integral(&|s| kotani_integrand(self.kappa, self.lambda, s), self.nodes[i], y)
    }

    /// `g⁻¹(x)` by Newton's method safeguarded with bisection (`g′` is the
    /// integrand); `None` outside the tabulated range.
    pub fn inverse(&self, x: f64) -> Option<f64> {
        let n = self.nodes.len();
        if !(self.g[0]..=self.g[n - 1]).contains(&x) {
            return None;
        }
        let i = self.g.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2);
        let (mut lo, mut hi) = (self.nodes[i], self.nodes[i + 1]);
        let base = self.g[i];
        let f = |s: f64| kotani_integrand(self.kappa, self.lambda, s);
        let span = self.g[i + 1] - base;
        let mut y = if span > 0.0 { lo + (hi - lo) * ((x - base) / span).clamp(0.0, 1.0) } else { 0.5 * (lo + hi) };
        for _ in 0..100 {
            let r = base + signed_integral(&f, self.nodes[i], y) - x;
            if r < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let newton = y - r / f(y);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - y).abs() <= 1e-12 * y || hi - lo <= 1e-12 * y {
                return Some(next);
            }
            y = next;
        }
        Some(0.5 * (lo + hi))
    }
}

/// Options for the occupation integral `D_ν(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquConfig {
    /// Level step of the local-time field.
    pub level_step: f64,
    pub n: usize,
    pub seed: u64,
}

/// Monte Carlo of `D_ν(r) = ∫₀^{τ_r} F(γ_s) ds` with
/// `F(x) = y^ν exp(−4/y − 8λy)`, `y = g⁻¹(x)`. By the occupation formula the
/// integral equals `∫ F(x) L^x_{τ_r} dx`, and the field `x ↦ L^x_{τ_r}` is
/// simulated on each half-line as a dimension-0 squared Bessel process from
/// `r`; `g⁻¹` along the level grid is marched as `dy/dx = 1/g′(y)`. Returns
/// `(mean, standard error)`.
pub fn lemma_equ_integral(nu: f64, kappa: f64, lambda: f64, r: f64, cfg: &EquConfig) -> Result<(f64, f64)> {
    require(lambda > 0.0 && kappa > 0.0 && kappa < 1.0, "need λ > 0 and 0 < κ < 1")?;
    require(r >= 0.0, "r must be non-negative")?;
    require(cfg.n > 0 && cfg.level_step > 0.0, "need n > 0 and a positive level step")?;
    if r == 0.0 {
        return Ok((0.0, 0.0));
    }
    // the weight is below e^{−320} beyond 40/λ, while g itself stays finite there
    // y = g⁻¹(x) solves dy/dx = 1/g′(y) from y(0) = 1; march it level by level
    let slope = |y: f64| 1.0 / kotani_integrand(kappa, lambda, y);
    let weight = |y: f64| y.powf(nu) * (-4.0 / y - 8.0 * lambda * y).exp();
    let dl = cfg.level_step;
    // (weight, y) at levels 0, ±dl, ±2dl, …
    let mut table_pos: Vec<(f64, f64)> = vec![(weight(1.0), 1.0)];
    let mut table_neg: Vec<(f64, f64)> = vec![(weight(1.0), 1.0)];
    let mut samples = Vec::with_capacity(cfg.n);
    for rep in 0..cfg.n as u64 {
        let mut rng = rng::stream(cfg.seed, rep, Purpose::Bessel);
        let mut total = 0.0;
        for (side, table) in [(1.0, &mut table_pos), (-1.0, &mut table_neg)] {
            let mut z = r;
            let mut k = 0usize;
            while z > 0.0 {
                while table.len() <= k + 1 {
                    let (_, y) = *table.last().unwrap();
                    let h = side * dl;
                    let k1 = slope(y);
                    let k2 = slope(y + 0.5 * h * k1);
                    let k3 = slope(y + 0.5 * h * k2);
                    let k4 = slope(y + h * k3);
                    let y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    table.push((weight(y), y));
                }
                let next = besq_step(z, 0.0, dl, rng::normal(&mut rng));
                total += 0.5 * (table[k].0 * z + table[k + 1].0 * next) * dl;
                z = next;
                k += 1;
            }
        }
        samples.push(total);
    }
    Ok(numerics::mean_se(&samples))
}

/// `∫₀^∞ y^{s−1} e^{−a/y − by} dy` by quadrature; the exact mean of
/// `D_ν(r)/r` for `s = ν + κ`, `a = 2`, `b = 4λ`.
pub fn equ_mean_per_unit(nu: f64, kappa: f64, lambda: f64) -> f64 {
    let (s, a, b) = (nu + kappa, 2.0, 4.0 * lambda);
    let f = |u: f64| {
        let y = u.exp();
        y.powf(s) * (-a / y - b * y).exp()
    };
    numerics::integrate(&f, -10.0, (80.0 / b).ln(), 1e-13)
}
