//! The diffusion `X_t = A_κ⁻¹(B(T_κ⁻¹(t)))` in a sampled environment.
//!
//! The driving Brownian motion `B` is tracked in cell-local coordinates: in
//! grid cell `i` the state is `u = (B − A_κ(x_i))·e^{−W_κ(x_i)}`, which stays
//! well-conditioned however deep the potential goes. The B-clock step is
//! `ds = dt·e^{2W_κ(X)}`, so every step advances the X-clock by about `dt`,
//! and `T_κ` is accumulated by the trapezoid rule along each step.

use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::potential::{scale_table, PotentialPath, ValleyDecomposition};
use crate::rng::{self, Purpose, StreamRng};

/// Step size, budget and stream selection for diffusion runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Target X-clock step.
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub replicate: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Stop (censored) once the X-clock passes this time.
    #[serde(default = "default_cap")]
    pub time_cap: f64,
}

fn default_max_steps() -> u64 {
    1_000_000_000
}

fn default_cap() -> f64 {
    f64::INFINITY
}

impl DiffusionConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self { dt, seed, replicate: 0, max_steps: default_max_steps(), time_cap: f64::INFINITY }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    pub fn capped(self, time_cap: f64) -> Self {
        Self { time_cap, ..self }
    }

    fn check(&self) -> Result<()> {
        require(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive")?;
        require(!self.time_cap.is_nan(), "time cap must not be NaN")
    }

    fn rng(&self) -> StreamRng {
        rng::stream(self.seed, self.replicate, Purpose::Driving)
    }
}

/// Per-cell constants of an environment, shared by every run in it.
#[derive(Debug, Clone)]
pub struct Medium {
    dx: f64,
    origin: usize,
    w: Vec<f64>,
    slope: Vec<f64>,
    /// `∫_cell e^{W_κ − W_κ(x_i)}`.
    span: Vec<f64>,
    /// `e^{W_κ(x_{i+1}) − W_κ(x_i)}`.
    up: Vec<f64>,
    x_min: f64,
    x_max: f64,
}

impl Medium {
    pub fn new(env: &PotentialPath) -> Self {
        let n = env.len();
        let dx = env.dx;
        let mut slope = Vec::with_capacity(n - 1);
        let mut span = Vec::with_capacity(n - 1);
        let mut up = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let dw = env.values[i + 1] - env.values[i];
            let s = dw / dx;
            slope.push(s);
            span.push(if dw.abs() < 1e-12 { dx } else { dw.exp_m1() / s });
            up.push(dw.exp());
        }
        Self { dx, origin: env.origin, w: env.values.clone(), slope, span, up, x_min: env.x_min, x_max: env.x_max }
    }

    fn cells(&self) -> usize {
        self.slope.len()
    }

    #[inline]
    fn offset(&self, i: usize, u: f64) -> f64 {
        let su = self.slope[i] * u;
        if su.abs() < 1e-12 {
            u
        } else {
            su.ln_1p() / self.slope[i]
        }
    }

    /// Cell and local coordinate of the point `x`.
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        require(x >= self.x_min && x <= self.x_max, "start outside the environment window")?;
        let pos = x / self.dx + self.origin as f64;
        let i = (pos.floor() as usize).min(self.cells() - 1);
        let h = (pos - i as f64) * self.dx;
        let s = self.slope[i];
        let u = if (s * h).abs() < 1e-12 { h } else { (s * h).exp_m1() / s };
        Ok((i, u))
    }
}

/// One step of the simulated diffusion.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub dt: f64,
}

/// Largest displacement of one committed step, in units of `√dt`.
const MAX_MOVE: f64 = 8.0;
/// Bisection stops once a piece is this many halvings below the natural
/// step at the current position; a piece that still moves too far is an error.
const MAX_REFINE: i32 = 60;
/// Absolute bound on the bisection depth of one driving increment.
const MAX_DEPTH: u32 = 2000;

impl Medium {
    /// Cell and local coordinate after adding `db` (in `A_κ` units) to the
    /// driving motion, or `None` when the move leaves the window.
    #[inline]
    fn advance(&self, mut i: usize, u: f64, db: f64, reflect_at_zero: bool) -> Option<(usize, f64)> {
        let last = self.cells() - 1;
        let mut u = u + db * (-self.w[i]).exp();
        loop {
            if u > self.span[i] {
                if i == last {
                    return None;
                }
                u = (u - self.span[i]) / self.up[i];
                i += 1;
            } else if u < 0.0 {
                if reflect_at_zero && i == self.origin {
                    u = -u;
                    continue;
                }
                if i == 0 {
                    return None;
                }
                u = u * self.up[i - 1] + self.span[i - 1];
                i -= 1;
            } else {
                return Some((i, u));
            }
        }
    }
}

/// Run the diffusion from `x_start`; `visit` returns `false` to stop.
/// With `reflect_at_zero` the driving motion is reflected at `A_κ(0) = 0`,
/// which excises the excursions of X below 0 and glues the clock.
///
/// Each step draws the driving increment over `ds = dt·e^{2W_κ(x)}`, so that
/// the X-clock advances by about `dt`. A step that would move X by more than
/// `8√dt` or out of the window is split at a Brownian-bridge midpoint and the
/// halves are taken in turn; this leaves the law of the driving path intact
/// and only refines the clock quadrature where the potential is steep.
pub(crate) fn drive(
    med: &Medium,
    x_start: f64,
    cfg: &DiffusionConfig,
    reflect_at_zero: bool,
    rng: &mut StreamRng,
    mut visit: impl FnMut(&Step) -> bool,
) -> Result<u64> {
    cfg.check()?;
    let (mut i, mut u) = med.locate(x_start)?;
    let sqdt = cfg.dt.sqrt();
    let limit = MAX_MOVE * sqdt;
    let mut h = med.offset(i, u);
    let mut x = (i as f64 - med.origin as f64) * med.dx + h;
    let mut w = med.w[i] + med.slope[i] * h;
    let mut t = 0.0;
    let mut steps = 0u64;
    // pending pieces of the current driving increment: (db, ds, depth), last one next
    let mut pending: Vec<(f64, f64, u32)> = Vec::new();
    while steps < cfg.max_steps {
        let (db, ds, depth) = match pending.pop() {
            Some(piece) => piece,
            None => {
                let scale = w.exp();
                (sqdt * scale * rng::normal(rng), cfg.dt * scale * scale, 0)
            }
        };
        let moved = med.advance(i, u, db, reflect_at_zero);
        let (i1, u1, x1) = match moved {
            Some((i1, u1)) => {
                let h1 = med.offset(i1, u1);
                (i1, u1, (i1 as f64 - med.origin as f64) * med.dx + h1)
            }
            None => (i, u, f64::NAN),
        };
        if x1.is_nan() || (x1 - x).abs() > limit {
            // measured against the local natural step: pending pieces were sized
            // where the increment started, which may lie far above the current potential
            let local = cfg.dt * (2.0 * w).exp();
            if depth >= MAX_DEPTH || ds < local * 2f64.powi(-MAX_REFINE) {
                return Err(match moved {
                    None if db > 0.0 => Error::WindowExceeded(format!("right edge {} passed", med.x_max)),
                    None => Error::WindowExceeded(format!("left edge {} passed", med.x_min)),
                    Some(_) => Error::Numerical("driving increment could not be refined".into()),
                });
            }
            let mid = 0.5 * db + 0.5 * ds.sqrt() * rng::normal(rng);
            pending.push((db - mid, 0.5 * ds, depth + 1));
            pending.push((mid, 0.5 * ds, depth + 1));
            continue;
        }
        i = i1;
        u = u1;
        h = med.offset(i, u);
        let w1 = med.w[i] + med.slope[i] * h;
        let dt = 0.5 * ds * ((-2.0 * w).exp() + (-2.0 * w1).exp());
        steps += 1;
        let s = Step { x0: x, x1, t0: t, dt };
        if !visit(&s) {
            return Ok(steps);
        }
        x = x1;
        w = w1;
        t += dt;
    }
    Err(Error::Budget { what: "diffusion run".into(), steps: cfg.max_steps })
}

/// Fraction of the step at which the linear interpolant reaches `level`, if it does.
#[inline]
fn crossing(s: &Step, level: f64) -> Option<f64> {
    let (a, b) = (s.x0 - level, s.x1 - level);
    if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
        Some(a / (a - b))
    } else {
        None
    }
}

/// Time spent at `x ≥ 0` over the first fraction `f` of the step.
#[inline]
fn positive_part(s: &Step, f: f64) -> f64 {
    let end = s.x0 + f * (s.x1 - s.x0);
    let frac = match (s.x0 >= 0.0, end >= 0.0) {
        (true, true) => f,
        (false, false) => 0.0,
        (true, false) => s.x0 / (s.x0 - s.x1),
        (false, true) => f - (-s.x0) / (s.x1 - s.x0),
    };
    frac * s.dt
}

/// A diffusion path on its native, non-uniform X-clock grid (one point per
/// simulation step, the last point interpolated at the horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPath {
    /// Target step used by the simulation.
    pub dt: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
    pub env_seed: u64,
    pub kappa: f64,
}

impl DiffusionPath {
    /// Linear interpolation of the path at time `t` (clamped to the horizon).
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.positions[0];
        }
        if k == self.times.len() {
            return *self.positions.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        self.positions[k - 1] + f * (self.positions[k] - self.positions[k - 1])
    }

    /// Positions on the uniform grid `0, step, 2·step, …` up to the horizon.
    pub fn resampled(&self, step: f64) -> Vec<(f64, f64)> {
        let end = *self.times.last().unwrap();
        let n = (end / step + 1e-9).floor() as usize;
        (0..=n).map(|k| (k as f64 * step, self.at(k as f64 * step))).collect()
    }

    /// CSV `t,value` on the uniform grid of step `dt`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (t, x) in self.resampled(self.dt) {
            s.push_str(&format!("{t},{x}\n"));
        }
        s
    }
}

/// Simulate `X` on `[0, t]`.
pub fn simulate_path(env: &PotentialPath, t: f64, cfg: &DiffusionConfig) -> Result<DiffusionPath> {
    require(t >= 0.0 && t.is_finite(), "T must be finite and non-negative")?;
    let med = Medium::new(env);
    let mut times = vec![0.0];
    let mut positions = vec![0.0];
    if t > 0.0 {
        drive(&med, 0.0, cfg, false, &mut cfg.rng(), |s| {
            if s.t0 + s.dt >= t {
                let f = (t - s.t0) / s.dt;
                times.push(t);
                positions.push(s.x0 + f * (s.x1 - s.x0));
                return false;
            }
            times.push(s.t0 + s.dt);
            positions.push(s.x1);
            true
        })?;
    }
    Ok(DiffusionPath { dt: cfg.dt, times, positions, seed: cfg.seed, replicate: cfg.replicate, env_seed: env.seed, kappa: env.kappa })
}

/// Outcome of a run up to `H(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hitting {
    /// `H(v)`, or the time cap if `censored`.
    pub h: f64,
    /// Time in `[0, ∞)` before `H(v)`.
    pub theta1: f64,
    /// Time in `(−∞, 0)` before `H(v)`.
    pub theta2: f64,
    pub censored: bool,
    pub steps: u64,
}

fn check_level(env: &PotentialPath, v: f64) -> Result<()> {
    require(v.is_finite(), "level must be finite")?;
    if v > env.x_max || v < env.x_min {
        return Err(Error::WindowExceeded(format!("level {v} outside [{}, {}]", env.x_min, env.x_max)));
    }
    Ok(())
}

/// `H(v)` with the occupation split, or a censored record at `cfg.time_cap`.
pub fn hit(env: &PotentialPath, v: f64, cfg: &DiffusionConfig) -> Result<Hitting> {
    hit_in(&Medium::new(env), env, v, cfg)
}

pub fn hit_in(med: &Medium, env: &PotentialPath, v: f64, cfg: &DiffusionConfig) -> Result<Hitting> {
    check_level(env, v)?;
    if v == 0.0 {
        return Ok(Hitting { h: 0.0, theta1: 0.0, theta2: 0.0, censored: false, steps: 0 });
    }
    let mut out = Hitting { h: 0.0, theta1: 0.0, theta2: 0.0, censored: false, steps: 0 };
    out.steps = drive(med, 0.0, cfg, false, &mut cfg.rng(), |s| {
        if let Some(f) = crossing(s, v) {
            let pos = positive_part(s, f);
            out.theta1 += pos;
            out.theta2 += f * s.dt - pos;
            out.h = s.t0 + f * s.dt;
            return false;
        }
        let pos = positive_part(s, 1.0);
        out.theta1 += pos;
        out.theta2 += s.dt - pos;
        if s.t0 + s.dt >= cfg.time_cap {
            out.h = cfg.time_cap;
            out.censored = true;
            return false;
        }
        true
    })?;
    Ok(out)
}

/// `H(v) = T_κ(σ(A_κ(v)))` without storing the path.
pub fn first_hitting(env: &PotentialPath, v: f64, cfg: &DiffusionConfig) -> Result<f64> {
    let h = hit(env, v, cfg)?;
    if h.censored {
        return Err(Error::Budget { what: format!("H({v}) beyond time cap {}", cfg.time_cap), steps: h.steps });
    }
    Ok(h.h)
}

/// `θ₁(v)`, the time spent in `[0, ∞)` before `H(v)`, from the driving motion
/// reflected at `A_κ(0)`: gluing out the negative excursions leaves the
/// positive-side clock untouched, so only the environment on `[0, v]` is used.
pub fn positive_occupation(env: &PotentialPath, v: f64, cfg: &DiffusionConfig) -> Result<Hitting> {
    positive_occupation_in(&Medium::new(env), env, v, cfg)
}

pub fn positive_occupation_in(med: &Medium, env: &PotentialPath, v: f64, cfg: &DiffusionConfig) -> Result<Hitting> {
    check_level(env, v)?;
    require(v >= 0.0, "level must be non-negative")?;
    let mut out = Hitting { h: 0.0, theta1: 0.0, theta2: 0.0, censored: false, steps: 0 };
    if v == 0.0 {
        return Ok(out);
    }
    out.steps = drive(med, 0.0, cfg, true, &mut cfg.rng(), |s| {
        if let Some(f) = crossing(s, v) {
            out.theta1 += f * s.dt;
            return false;
        }
        out.theta1 += s.dt;
        if out.theta1 >= cfg.time_cap {
            out.censored = true;
            return false;
        }
        true
    })?;
    out.h = out.theta1;
    Ok(out)
}

/// Trapezoid occupation of `{X ≥ 0}` and `{X < 0}` up to the first passage at `v`.
pub fn occupation_split(path: &DiffusionPath, v: f64) -> Result<(f64, f64)> {
    let (mut t1, mut t2) = (0.0, 0.0);
    if v == 0.0 {
        return Ok((0.0, 0.0));
    }
    for k in 0..path.positions.len().saturating_sub(1) {
        let s = Step { x0: path.positions[k], x1: path.positions[k + 1], t0: path.times[k], dt: path.times[k + 1] - path.times[k] };
        if let Some(f) = crossing(&s, v) {
            let pos = positive_part(&s, f);
            return Ok((t1 + pos, t2 + f * s.dt - pos));
        }
        let pos = positive_part(&s, 1.0);
        t1 += pos;
        t2 += s.dt - pos;
    }
    Err(Error::InvalidArgument(format!("path does not reach {v}")))
}

/// Exit of `(a, c)` started from `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub time: f64,
    pub at_right: bool,
    pub censored: bool,
}

/// `H(a) ∧ H(c)` from `x0 ∈ [a, c]`.
pub fn exit_time(env: &PotentialPath, x0: f64, a: f64, c: f64, cfg: &DiffusionConfig) -> Result<Exit> {
    exit_time_in(&Medium::new(env), env, x0, a, c, cfg)
}

pub fn exit_time_in(med: &Medium, env: &PotentialPath, x0: f64, a: f64, c: f64, cfg: &DiffusionConfig) -> Result<Exit> {
    check_level(env, a)?;
    check_level(env, c)?;
    require(a <= x0 && x0 <= c, "start must lie in [a, c]")?;
    if x0 == a || x0 == c {
        return Ok(Exit { time: 0.0, at_right: x0 == c, censored: false });
    }
    let mut out = Exit { time: 0.0, at_right: false, censored: false };
    drive(med, x0, cfg, false, &mut cfg.rng(), |s| {
        for (level, right) in [(a, false), (c, true)] {
            if let Some(f) = crossing(s, level) {
                out.time = s.t0 + f * s.dt;
                out.at_right = right;
                return false;
            }
        }
        if s.t0 + s.dt >= cfg.time_cap {
            out.time = cfg.time_cap;
            out.censored = true;
            return false;
        }
        true
    })?;
    Ok(out)
}

/// Exact `P^{x0}[H(a) < H(c)]` from the scale function.
pub fn exit_left_probability(env: &PotentialPath, x0: f64, a: f64, c: f64) -> Result<f64> {
    check_level(env, a)?;
    check_level(env, c)?;
    require(a < c && a <= x0 && x0 <= c, "need a ≤ x0 ≤ c and a < c")?;
    let s = scale_table(env);
    Ok((s.eval(c) - s.eval(x0)) / (s.eval(c) - s.eval(a)))
}

/// The five-term decomposition of `H(v)` and the backtrack counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingBreakdown {
    pub h_total: f64,
    pub h_init: f64,
    pub h_dir: f64,
    pub h_back: f64,
    pub h_left: f64,
    pub h_right: f64,
    /// `ξ(i)`: backtracks `K_{i+1} → K_i`, per valley index `i`.
    pub xi: Vec<u64>,
    /// `ℬ = Σ_{1≤i≤i₁−1} ξ(i)`.
    pub b_total: u64,
    /// Embedded walk `Y_k` as indices into the break points, with times `s_k`.
    pub walk: Vec<(usize, f64)>,
    pub steps: u64,
}

impl HittingBreakdown {
    pub fn sum(&self) -> f64 {
        self.h_init + self.h_dir + self.h_back + self.h_left + self.h_right
    }
}

/// Run to `H(v)` (with `v` the last break point of `valleys`) and split the
/// time over the steps of the embedded walk on `{K_j}`.
///
/// Every step of the walk is classified once: the initial segment and the
/// first crossing of valley `i₀` form `H_init`; first crossings of
/// `i₀ < i < i₁` form `H_dir`; the first crossing of `i₁` is `H_right`;
/// backtracks of valleys `i ≥ i₀` and the re-crossings that undo them form
/// `H_back`; all steps in valleys left of `i₀` form `H_left`. The terms
/// therefore add up to `H(v)` exactly.
pub fn decompose_hitting(env: &PotentialPath, valleys: &ValleyDecomposition, cfg: &DiffusionConfig) -> Result<HittingBreakdown> {
    let k = &valleys.k;
    require(k.len() >= 2, "need at least one valley")?;
    let (i0, i1) = (valleys.i0, valleys.i1);
    let target = k.len() - 1;
    require(i1 + 1 == target && i0 <= i1, "inconsistent valley indices")?;
    check_level(env, valleys.v)?;
    let med = Medium::new(env);
    // walk position: None until the first break point is reached
    let mut y: Option<usize> = None;
    let mut walk: Vec<(usize, f64)> = Vec::new();
    if k[i0 + 1] == 0.0 {
        y = Some(i0 + 1);
        walk.push((i0 + 1, 0.0));
    }
    let mut h_total = 0.0;
    let mut steps = 0;
    if y != Some(target) {
        steps = drive(&med, 0.0, cfg, false, &mut cfg.rng(), |s| {
            let mut from = 0.0f64;
            loop {
                let (lo, hi) = match y {
                    None => (Some(i0), i0 + 1),
                    Some(j) => (j.checked_sub(1), j + 1),
                };
                let sub = Step { x0: s.x0 + from * (s.x1 - s.x0), ..*s };
                let mut hit: Option<(usize, f64)> = None;
                for cand in lo.into_iter().chain(std::iter::once(hi)) {
                    if let Some(g) = crossing(&sub, k[cand]) {
                        let f = from + g * (1.0 - from);
                        if hit.is_none_or(|(_, best)| f < best) {
                            hit = Some((cand, f));
                        }
                    }
                }
                match hit {
                    Some((cand, f)) if f >= from => {
                        let time = s.t0 + f * s.dt;
                        walk.push((cand, time));
                        y = Some(cand);
                        if cand == target {
                            h_total = time;
                            return false;
                        }
                        from = f;
                        if from >= 1.0 {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            true
        })?;
    }
    let mut out = HittingBreakdown {
        h_total,
        h_init: 0.0,
        h_dir: 0.0,
        h_back: 0.0,
        h_left: 0.0,
        h_right: 0.0,
        xi: vec![0; target],
        b_total: 0,
        walk: walk.clone(),
        steps,
    };
    let mut crossed = vec![false; target];
    let mut prev: Option<(usize, f64)> = None;
    for &(j, time) in &walk {
        match prev {
            None => {
                out.h_init += time;
                if j == i0 + 1 {
                    crossed[i0] = true;
                }
            }
            Some((p, t0)) => {
                let d = time - t0;
                if j == p + 1 {
                    let pair = p;
                    if pair >= i0 && !crossed[pair] {
                        crossed[pair] = true;
                        if pair == i0 {
                            out.h_init += d;
                        } else if pair == i1 {
                            out.h_right += d;
                        } else {
                            out.h_dir += d;
                        }
                    } else if pair < i0 {
                        out.h_left += d;
                    } else {
                        out.h_back += d;
                    }
                } else {
                    let pair = j;
                    out.xi[pair] += 1;
                    if pair < i0 {
                        out.h_left += d;
                    } else {
                        out.h_back += d;
                    }
                }
            }
        }
        prev = Some((j, time));
    }
    out.b_total = (1..i1).map(|i| out.xi[i]).sum();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics;
    use crate::potential::{decompose_valleys_with, sample_potential, ValleyConfig};

    #[test]
    fn local_coordinates_round_trip() {
        let env = sample_potential(0.5, -5.0, 5.0, 0.01, 3).unwrap();
        let med = Medium::new(&env);
        for &x in &[-4.99, -1.234, 0.0, 0.005, 3.3333] {
            let (i, u) = med.locate(x).unwrap();
            let back = (i as f64 - med.origin as f64) * med.dx + med.offset(i, u);
            assert!((back - x).abs() < 1e-12, "{x} -> {back}");
        }
    }

    #[test]
    fn determinism_and_start() {
        let env = sample_potential(0.5, -20.0, 20.0, 0.01, 5).unwrap();
        let cfg = DiffusionConfig::new(1e-3, 9);
        let a = simulate_path(&env, 1.0, &cfg).unwrap();
        let b = simulate_path(&env, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.positions[0], 0.0);
        assert_eq!(*a.times.last().unwrap(), 1.0);
        assert_eq!(a.resampled(0.01).len(), 101);
        assert!(a.to_csv().starts_with("t,value\n0,0\n"));
        let c = simulate_path(&env, 1.0, &cfg.replicate(1)).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn window_exceeded_reports_side() {
        let env = PotentialPath::pure_drift(0.0, -0.5, 0.5, 0.01).unwrap();
        match simulate_path(&env, 100.0, &DiffusionConfig::new(1e-3, 1)) {
            Err(Error::WindowExceeded(msg)) => assert!(msg.contains("edge")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_environment_is_brownian() {
        let env = PotentialPath::pure_drift(0.0, -12.0, 12.0, 0.01).unwrap();
        let n = 10_000;
        let ends: Vec<f64> =
            (0..n).map(|r| simulate_path(&env, 1.0, &DiffusionConfig::new(1e-3, 2).replicate(r)).unwrap().at(1.0)).collect();
        let (m, _) = numerics::mean_se(&ends);
        let var = ends.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // SE of the sample variance of a Gaussian is σ²√(2/(n−1))
        let se = (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn hitting_is_monotone_and_zero_at_zero() {
        let env = sample_potential(1.0, -30.0, 30.0, 0.01, 8).unwrap();
        let cfg = DiffusionConfig::new(1e-3, 4);
        assert_eq!(first_hitting(&env, 0.0, &cfg).unwrap(), 0.0);
        let h1 = first_hitting(&env, 1.0, &cfg).unwrap();
        let h2 = first_hitting(&env, 2.0, &cfg).unwrap();
        assert!(h1 <= h2);
        assert!(matches!(first_hitting(&env, 40.0, &cfg), Err(Error::WindowExceeded(_))));
    }

    #[test]
    fn occupation_split_adds_up() {
        let env = sample_potential(1.0, -30.0, 30.0, 0.01, 12).unwrap();
        for r in 0..10 {
            let cfg = DiffusionConfig::new(1e-3, 6).replicate(r);
            let h = hit(&env, 1.5, &cfg).unwrap();
            assert!((h.theta1 + h.theta2 - h.h).abs() < 1e-9 * h.h.max(1.0));
            let path = simulate_path(&env, h.h + 0.01, &cfg).unwrap();
            let (t1, t2) = occupation_split(&path, 1.5).unwrap();
            assert!((t1 + t2 - h.h).abs() <= 1e-9 * h.h.max(1.0), "{} vs {}", t1 + t2, h.h);
            assert!((t1 - h.theta1).abs() <= 1e-9 * h.h.max(1.0));
        }
        // a path that stays on the right never accrues θ₂
        let path = DiffusionPath {
            dt: 0.1,
            times: vec![0.0, 0.1, 0.2],
            positions: vec![0.0, 0.5, 1.0],
            seed: 0,
            replicate: 0,
            env_seed: 0,
            kappa: 1.0,
        };
        assert_eq!(occupation_split(&path, 1.0).unwrap().1, 0.0);
        assert!(occupation_split(&path, 2.0).is_err());
    }

    #[test]
    fn reflected_run_matches_positive_occupation() {
        // θ₁ from the full run and from the reflected run agree in law
        let n = 2000;
        let (mut full, mut refl) = (Vec::new(), Vec::new());
        for r in 0..n {
            let env = crate::potential::sample_potential_with(0.5, -60.0, 3.0, 0.02, 40, r, Default::default()).unwrap();
            let cfg = DiffusionConfig::new(2e-3, 41).replicate(r);
            full.push(hit(&env, 1.0, &cfg.capped(1e4)).unwrap().theta1);
            refl.push(positive_occupation(&env, 1.0, &cfg).unwrap().theta1);
        }
        let d = numerics::ks_two_sample(&full, &refl);
        assert!(d < 0.06, "KS {d}");
    }

    #[test]
    fn exit_probabilities_follow_scale_function() {
        let env = sample_potential(0.5, -10.0, 10.0, 0.01, 21).unwrap();
        let (a, x0, c) = (-1.0, 0.0, 1.5);
        let exact = exit_left_probability(&env, x0, a, c).unwrap();
        let n = 4000;
        let left = (0..n).filter(|&r| !exit_time(&env, x0, a, c, &DiffusionConfig::new(1e-4, 22).replicate(r)).unwrap().at_right).count()
            as f64
            / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((left - exact).abs() < 3.0 * se + 0.005, "{left} vs {exact}");
        let e = exit_time(&env, a, a, c, &DiffusionConfig::new(1e-3, 1)).unwrap();
        assert_eq!(e.time, 0.0);
    }

    #[test]
    fn decomposition_identity_and_pure_drift() {
        let env = PotentialPath::pure_drift(2.0, -10.0, 30.0, 0.01).unwrap();
        let valleys = decompose_valleys_with(&env, 4.0, 3.0, ValleyConfig { right_window: Some(20.0), near_record: true }).unwrap();
        for r in 0..20 {
            let b = decompose_hitting(&env, &valleys, &DiffusionConfig::new(1e-3, 30).replicate(r)).unwrap();
            assert!((b.sum() - b.h_total).abs() < 1e-9 * b.h_total.max(1.0));
            let h = first_hitting(&env, 3.0, &DiffusionConfig::new(1e-3, 30).replicate(r)).unwrap();
            assert!((h - b.h_total).abs() < 1e-12 * h.max(1.0));
            if b.b_total == 0 && b.xi.iter().all(|&c| c == 0) {
                assert_eq!(b.h_back, 0.0);
                assert_eq!(b.h_left, 0.0);
            }
        }
    }
}
