//! The random environment `W_κ(x) = W(x) − κx/2`: sampling, the scale
//! function `A_κ`, valley decomposition, depths, environment events and the
//! excursions of the reflected potential.

use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::rng::{self, Purpose, StreamRng};

/// Whether environment increments carry Gaussian noise. `Zero` leaves only
/// the deterministic drift and is used for closed-form calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvNoise {
    #[default]
    Gaussian,
    Zero,
}

/// Piecewise-linear sample of `W_κ` on a uniform grid containing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPath {
    pub kappa: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub seed: u64,
    /// Grid index of x = 0.
    pub origin: usize,
}

impl PotentialPath {
    /// Build from explicit grid values; `values[origin]` must be 0.
    pub fn from_values(kappa: f64, x_min: f64, dx: f64, values: Vec<f64>, seed: u64) -> Result<Self> {
        require(dx > 0.0, "dx must be positive")?;
        require(values.len() >= 2, "need at least two grid points")?;
        let origin = origin_index(x_min, dx)?;
        require(origin < values.len(), "grid must contain 0")?;
        require(values[origin] == 0.0, "potential must vanish at 0")?;
        require(values.iter().all(|v| v.is_finite()), "values must be finite")?;
        let x_max = x_min + (values.len() - 1) as f64 * dx;
        Ok(Self { kappa, x_min, x_max, dx, values, seed, origin })
    }

    /// Pure drift environment `W_κ(x) = −κx/2`.
    pub fn pure_drift(kappa: f64, x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        sample_potential_with(kappa, x_min, x_max, dx, 0, 0, EnvNoise::Zero)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.origin as f64) * self.dx
    }

    /// Nearest grid index to `x`, or an error if `x` is off the grid.
    pub fn index(&self, x: f64) -> Result<usize> {
        let k = (x / self.dx).round() + self.origin as f64;
        if k < 0.0 || k > (self.len() - 1) as f64 {
            return Err(Error::Grid(format!("x={x} outside [{}, {}]", self.x_min, self.x_max)));
        }
        Ok(k as usize)
    }

    /// Linear interpolation of `W_κ` at `x` (clamped to the grid).
    pub fn value_at(&self, x: f64) -> f64 {
        let pos = (x / self.dx + self.origin as f64).clamp(0.0, (self.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.len() - 2);
        let f = pos - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// Driftless increments `W(x_{i+1}) − W(x_i)`.
    pub fn driftless_increment(&self, i: usize) -> f64 {
        self.values[i + 1] - self.values[i] + 0.5 * self.kappa * self.dx
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# kappa={},dx={},seed={}\nx,W\n", self.kappa, self.dx, self.seed);
        for (i, w) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.x(i), w));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| Error::Io("empty potential csv".into()))?;
        let field = |key: &str| -> Result<String> {
            meta.trim_start_matches('#')
                .split(',')
                .map(str::trim)
                .find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(str::to_string))
                .ok_or_else(|| Error::Io(format!("missing {key} in header")))
        };
        let parse = |s: String| s.parse::<f64>().map_err(|e| Error::Io(e.to_string()));
        let kappa = parse(field("kappa")?)?;
        let dx = parse(field("dx")?)?;
        let seed = field("seed")?.parse::<u64>().map_err(|e| Error::Io(e.to_string()))?;
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for line in lines.skip(1).filter(|l| !l.trim().is_empty()) {
            let mut it = line.split(',');
            let x = parse(it.next().unwrap_or("").trim().to_string())?;
            let w = parse(it.next().unwrap_or("").trim().to_string())?;
            xs.push(x);
            ws.push(w);
        }
        require(!xs.is_empty(), "no data rows")?;
        Self::from_values(kappa, xs[0], dx, ws, seed)
    }
}

fn origin_index(x_min: f64, dx: f64) -> Result<usize> {
    require(x_min <= 0.0, "x_min must be ≤ 0")?;
    let k = (-x_min / dx).round();
    if ((k * dx) + x_min).abs() > 1e-9 * dx.max(1.0) {
        return Err(Error::Grid(format!("x_min={x_min} is not a multiple of dx={dx}")));
    }
    Ok(k as usize)
}

/// Two-sided Brownian path from 0 with drift −κ/2 per unit x.
pub fn sample_potential(kappa: f64, x_min: f64, x_max: f64, dx: f64, seed: u64) -> Result<PotentialPath> {
    sample_potential_with(kappa, x_min, x_max, dx, seed, 0, EnvNoise::Gaussian)
}

/// As [`sample_potential`], drawing from the environment stream of `replicate`.
pub fn sample_potential_with(
    kappa: f64,
    x_min: f64,
    x_max: f64,
    dx: f64,
    seed: u64,
    replicate: u64,
    noise: EnvNoise,
) -> Result<PotentialPath> {
    require(dx > 0.0 && dx.is_finite(), "dx must be positive")?;
    require(x_min <= 0.0 && 0.0 <= x_max, "bounds must bracket 0")?;
    require(kappa.is_finite(), "kappa must be finite")?;
    let origin = origin_index(x_min, dx)?;
    let n = ((x_max - x_min) / dx + 1e-9).floor() as usize + 1;
    let mut values = vec![0.0; n];
    let mut rng = rng::stream(seed, replicate, Purpose::Environment);
    let sd = dx.sqrt();
    let drift = 0.5 * kappa * dx;
    let draw = |rng: &mut StreamRng| match noise {
        EnvNoise::Gaussian => sd * rng::normal(rng),
        EnvNoise::Zero => 0.0,
    };
    for i in origin + 1..n {
        values[i] = values[i - 1] + draw(&mut rng) - drift;
    }
    for i in (0..origin).rev() {
        values[i] = values[i + 1] + draw(&mut rng) + drift;
    }
    Ok(PotentialPath { kappa, x_min: -(origin as f64) * dx, x_max: (n - 1 - origin) as f64 * dx, dx, values, seed, origin })
}

/// Cumulative scale function `A_κ(x) = ∫₀ˣ e^{W_κ}` on the grid.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    pub a: Vec<f64>,
    pub origin: usize,
    pub dx: f64,
    w: Vec<f64>,
}

/// Exact integral of `e^{w}` over a cell where `w` is linear from `wl` to `wr`.
#[inline]
pub fn cell_integral(wl: f64, wr: f64, dx: f64) -> f64 {
    // dx·e^{mid}·sinh(h)/h with h the half-rise: no cancellation when wl ≈ wr
    let h = 0.5 * (wr - wl);
    let shape = if h == 0.0 { 1.0 } else { h.sinh() / h };
    dx * (0.5 * (wl + wr)).exp() * shape
}

pub fn scale_table(path: &PotentialPath) -> ScaleTable {
    let n = path.len();
    let mut a = vec![0.0; n];
    for i in path.origin + 1..n {
        a[i] = a[i - 1] + cell_integral(path.values[i - 1], path.values[i], path.dx);
    }
    for i in (0..path.origin).rev() {
        a[i] = a[i + 1] - cell_integral(path.values[i], path.values[i + 1], path.dx);
    }
    ScaleTable { a, origin: path.origin, dx: path.dx, w: path.values.clone() }
}

impl ScaleTable {
    /// `A_κ(x)` for any x on the grid span (exact within the cell).
    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x / self.dx + self.origin as f64).clamp(0.0, (self.a.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.a.len() - 2);
        let h = (pos - i as f64) * self.dx;
        let (wl, wr) = (self.w[i], self.w[i + 1]);
        let s = (wr - wl) / self.dx;
        let part = if (s * h).abs() < 1e-8 { h * (wl + 0.5 * s * h).exp() } else { wl.exp() * ((s * h).exp() - 1.0) / s };
        self.a[i] + part
    }

    /// Monotone inverse `A_κ⁻¹(y)`; `None` outside the tabulated range.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        let n = self.a.len();
        if !(self.a[0]..=self.a[n - 1]).contains(&y) {
            return None;
        }
        let i = self.a.partition_point(|&v| v <= y).saturating_sub(1).min(n - 2);
        let (wl, wr) = (self.w[i], self.w[i + 1]);
        let s = (wr - wl) / self.dx;
        let r = (y - self.a[i]) * (-wl).exp();
        let h = if (s * r).abs() < 1e-10 { r } else { (1.0 + s * r).ln() / s };
        Some((i as f64 - self.origin as f64) * self.dx + h.clamp(0.0, self.dx))
    }
}

/// Options for the valley decomposition.
#[derive(Debug, Clone, Copy)]
pub struct ValleyConfig {
    /// Length of the window beyond `v` over which `sup_{y>x} W_κ` is taken;
    /// `None` uses `10·(3/κ)·log t`.
    pub right_window: Option<f64>,
    /// Whether the near-record condition is imposed (disable only for tests).
    pub near_record: bool,
}

impl Default for ValleyConfig {
    fn default() -> Self {
        Self { right_window: None, near_record: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyDecomposition {
    pub t: f64,
    pub v: f64,
    /// Break points `K_0..K_{i₁}` followed by `v`.
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    /// Depth of each valley `[K_i, K_{i+1}]`.
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    pub i0: usize,
    pub i1: usize,
    pub threshold: f64,
    pub certified: bool,
    #[serde(skip)]
    pub k_index: Vec<usize>,
}

/// Largest rise `max_{i≤j} (w_j − w_i)` over a slice (0 for monotone decrease).
pub fn max_rise(w: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut best = 0.0f64;
    for &x in w {
        lo = lo.min(x);
        best = best.max(x - lo);
    }
    best
}

/// Largest fall `max_{i≤j} (w_i − w_j)`.
pub fn max_fall(w: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    let mut best = 0.0f64;
    for &x in w {
        hi = hi.max(x);
        best = best.max(hi - x);
    }
    best
}

pub fn decompose_valleys(path: &PotentialPath, t: f64, v: f64) -> Result<ValleyDecomposition> {
    decompose_valleys_with(path, t, v, ValleyConfig::default())
}

pub fn decompose_valleys_with(path: &PotentialPath, t: f64, v: f64, cfg: ValleyConfig) -> Result<ValleyDecomposition> {
    require(t >= 2.0, "horizon t must be at least 2 so that log⌊t⌋ > 0")?;
    require(v > 0.0, "v must be positive")?;
    require(path.kappa > 0.0, "kappa must be positive")?;
    let ft = t.floor();
    let threshold = 3.0 / path.kappa * ft.ln();
    let window = cfg.right_window.unwrap_or(10.0 * threshold.max(3.0 / path.kappa * t.ln()));
    if path.x_min > -ft + 1e-9 {
        return Err(Error::WindowTooSmall(format!("path starts at {} but K_0 = {}", path.x_min, -ft)));
    }
    if path.x_max < v + window - 1e-9 {
        return Err(Error::WindowTooSmall(format!("path ends at {} but the near-record window needs {}", path.x_max, v + window)));
    }
    let w = &path.values;
    let n = w.len();
    // suffix maximum over strictly larger indices, with its location
    let mut smax = vec![f64::NEG_INFINITY; n];
    let mut sarg = vec![n; n];
    for j in (0..n - 1).rev() {
        if w[j + 1] >= smax[j + 1] {
            smax[j] = w[j + 1];
            sarg[j] = j + 1;
        } else {
            smax[j] = smax[j + 1];
            sarg[j] = sarg[j + 1];
        }
    }
    let v_idx = path.index(v)?;
    let mut ks = vec![path.index(-ft)?];
    let mut certified = true;
    loop {
        let cur = *ks.last().unwrap();
        if cur >= v_idx {
            break;
        }
        let mut lo = w[cur];
        let mut next = None;
        for j in cur + 1..n {
            lo = lo.min(w[j]);
            if w[cur] - lo > threshold && (!cfg.near_record || w[j] >= smax[j] - 1.0) {
                next = Some(j);
                break;
            }
        }
        let j = next.ok_or_else(|| Error::WindowTooSmall("no further break point inside the window".into()))?;
        if cfg.near_record && sarg[j] == n - 1 {
            certified = false;
        }
        ks.push(j);
    }
    // ks ends with the first break point at or beyond v, replaced by v
    let i1 = ks.len() - 2;
    ks[i1 + 1] = v_idx;
    let i0 = ks.iter().rposition(|&k| k < path.origin).unwrap_or(0).min(i1);
    let d = ks.windows(2).map(|p| max_rise(&w[p[0]..=p[1]])).collect();
    let k = ks.iter().enumerate().map(|(i, &idx)| if i == i1 + 1 { v } else { path.x(idx) }).collect();
    Ok(ValleyDecomposition { t, v, k, d, i0, i1, threshold, certified, k_index: ks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalDepths {
    pub d_plus: f64,
    pub d_minus: f64,
    pub d: f64,
    pub m: f64,
}

/// Rise/fall depths and oscillation of `W_κ` on `[a, c]` in one sweep.
pub fn interval_depths(path: &PotentialPath, a: f64, c: f64) -> Result<IntervalDepths> {
    require(a <= c, "need a ≤ c")?;
    let (ia, ic) = (path.index(a)?, path.index(c)?);
    let w = &path.values[ia..=ic];
    let d_plus = max_rise(w);
    let d_minus = max_fall(w);
    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(IntervalDepths { d_plus, d_minus, d: d_plus.min(d_minus), m: hi - lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub t: f64,
    pub v: f64,
    pub a: bool,
    pub g_t: bool,
    pub g_v: bool,
    /// `B(t,m)` for `k = 1..m−1`.
    pub b: Vec<bool>,
    pub k: bool,
    pub l: bool,
    pub omega: bool,
}

/// Largest |W(s) − W(r)| over grid pairs at distance < 1 inside `[lo, hi]`.
fn local_modulus(w: &[f64], width: usize) -> f64 {
    use std::collections::VecDeque;
    let (mut mx, mut mn) = (VecDeque::<usize>::new(), VecDeque::<usize>::new());
    let mut best = 0.0f64;
    for j in 0..w.len() {
        while mx.back().is_some_and(|&i| w[i] <= w[j]) {
            mx.pop_back();
        }
        while mn.back().is_some_and(|&i| w[i] >= w[j]) {
            mn.pop_back();
        }
        mx.push_back(j);
        mn.push_back(j);
        while mx.front().is_some_and(|&i| i + width < j) {
            mx.pop_front();
        }
        while mn.front().is_some_and(|&i| i + width < j) {
            mn.pop_front();
        }
        best = best.max(w[*mx.front().unwrap()] - w[*mn.front().unwrap()]);
    }
    best
}

/// Evaluate the environment events A, G, B, K, L literally on the grid.
pub fn check_events(path: &PotentialPath, t: f64, v: f64, m: usize, epsilon: f64) -> Result<EventReport> {
    require(m >= 2, "m must be at least 2")?;
    require(t > std::f64::consts::E && v > std::f64::consts::E, "t and v must exceed e")?;
    require(v <= t, "v must not exceed t")?;
    if path.x_min > -t + 1e-9 || path.x_max < t - 1e-9 {
        return Err(Error::Grid(format!("grid [{}, {}] does not cover [−t, t]", path.x_min, path.x_max)));
    }
    let kappa = path.kappa;
    let window = (path.x_max - v).max(path.dx);
    let valleys = decompose_valleys_with(path, t, v, ValleyConfig { right_window: Some(window), near_record: true })?;
    let ln = f64::ln;
    let a = valleys.k.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max) <= ln(t).powi(2);
    let rise_on = |lo: f64, hi: f64| -> Result<f64> { Ok(max_rise(&path.values[path.index(lo)?..=path.index(hi)?])) };
    let g = |u: f64| -> Result<bool> { Ok(rise_on(-u, u)? <= (ln(u) + 3.0 * ln(ln(u))) / kappa) };
    let (g_t, g_v) = (g(t)?, g(v)?);
    let b = (1..m)
        .map(|k| {
            let q = k as f64 / m as f64;
            let level = q * ln(v) / kappa + 4.0 * ln(ln(v));
            let count =
                (1..valleys.d.len()).filter(|&i| valleys.k[i] < v && valleys.k[i + 1] > -v).filter(|&i| valleys.d[i] >= level).count();
            count as f64 <= v.powf(1.0 - q)
        })
        .collect::<Vec<_>>();
    let (lo, hi) = (path.index(-t)?, path.index(t)?);
    let width = ((1.0 - 1e-9) / path.dx).floor() as usize;
    let k = local_modulus(&path.values[lo..=hi], width) <= ln(t).sqrt() * ln(ln(t));
    let l = rise_on(0.0, v)? > (1.0 - epsilon) / kappa * ln(v);
    let omega = a && g_t && g_v && b.iter().all(|&x| x) && k && l;
    Ok(EventReport { t, v, a, g_t, g_v, b, k, l, omega })
}

/// Reflected process `U(x) = W_κ(x) − min_{y≤x} W_κ(y)` along the grid.
pub fn reflected(path: &PotentialPath) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    path.values
        .iter()
        .map(|&w| {
            lo = lo.min(w);
            w - lo
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub length: f64,
    pub max: f64,
}

/// Completed excursions of the reflected potential away from 0.
pub fn excursion_statistics(path: &PotentialPath) -> Result<Vec<Excursion>> {
    require(path.kappa > 0.0, "kappa must be positive for a recurrent reflected process")?;
    let u = reflected(path);
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut top = 0.0f64;
    for (j, &x) in u.iter().enumerate() {
        match (start, x > 0.0) {
            (None, true) => {
                start = Some(j - 1);
                top = x;
            }
            (Some(_), true) => top = top.max(x),
            (Some(s), false) => {
                out.push(Excursion { length: (j - s) as f64 * path.dx, max: top });
                start = None;
            }
            (None, false) => {}
        }
    }
    Ok(out)
}

/// Closed-form survival function `P(m₀ > y)` of the busy-period maximum.
pub fn excursion_max_survival(kappa: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    let z = kappa * y;
    let e = (-z).exp();
    let denom = (-z).exp_m1().powi(2);
    if z < 1e-4 {
        return 1.0 - z / 3.0;
    }
    2.0 * e * (z - (1.0 - e)) / denom
}

/// The busy period straddling a fixed time of the stationary reflected
/// potential: start from the stationary law `Exp(κ)` and run two independent
/// copies (future and time-reversed past) down to 0 on a grid of step `dx`.
pub fn sample_straddling_excursion(kappa: f64, dx: f64, rng: &mut StreamRng) -> Excursion {
    use rand_distr::{Distribution, Exp};
    let u0: f64 = Exp::new(kappa).unwrap().sample(rng);
    let (sd, drift) = (dx.sqrt(), 0.5 * kappa * dx);
    let mut length = 0.0;
    let mut top = u0;
    for _ in 0..2 {
        let mut u = u0;
        loop {
            let next = u + sd * rng::normal(rng) - drift;
            if next <= 0.0 {
                length += dx * u / (u - next);
                break;
            }
            length += dx;
            top = top.max(next);
            u = next;
        }
    }
    Excursion { length, max: top }
}

/// Length-weighted empirical survival of the excursion maximum: the fraction
/// of time covered by excursions whose maximum exceeds `y`.
pub fn weighted_max_survival(excursions: &[Excursion], y: f64) -> f64 {
    let total: f64 = excursions.iter().map(|e| e.length).sum();
    excursions.iter().filter(|e| e.max > y).map(|e| e.length).sum::<f64>() / total
}
