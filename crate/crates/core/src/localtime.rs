//! Brownian local-time fields by occupation binning, inverse local time,
//! Ray–Knight fields, and closed-form transforms used as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::processes::{self, SdeConfig};
use crate::rng::{self, Purpose, StreamRng};

/// Stopping rule for a Brownian path started at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    FixedTime(f64),
    /// First time the path reaches the level.
    Passage(f64),
    /// First time the binned local time at 0 reaches `r`.
    InvLocalTime(f64),
}

/// Simulation options for a Brownian walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub dt: f64,
    /// Spatial bin width of the occupation estimator.
    pub bin: f64,
    pub max_steps: u64,
    /// Only time inside `(lo, hi)` is simulated: when the path leaves, it is
    /// restarted at the boundary it crossed, which by the strong Markov
    /// property drops exactly the stretch spent outside. The clock is then no
    /// longer the elapsed time, so windows are refused for fixed-time stops.
    pub window: Option<(f64, f64)>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { dt: 1e-4, bin: 0.02, max_steps: 1_000_000_000, window: None }
    }
}

/// A window edge safely below the local-time bin at 0.
pub fn below_band(bin: f64, dt: f64) -> f64 {
    -0.5 * bin - 4.0 * dt.sqrt()
}

/// A window edge safely above a bin centred at `level`.
pub fn above_band(level: f64, bin: f64, dt: f64) -> f64 {
    level + 0.5 * bin + 4.0 * dt.sqrt()
}

#[inline]
fn in_zero_bin(x: f64, bin: f64) -> bool {
    (-0.5 * bin..0.5 * bin).contains(&x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkEnd {
    /// Number of counted samples (each carries weight `dt`).
    pub steps: u64,
    /// Local time at 0 accumulated at the stop.
    pub local_time_zero: f64,
    /// The visitor asked to stop before the rule was met.
    pub interrupted: bool,
    /// Position at the stop.
    pub last: f64,
}

/// Step a Brownian path from 0 until `stop`; `visit` sees every counted
/// sample and may interrupt by returning `false`.
pub fn walk(stop: Stop, cfg: &WalkConfig, rng: &mut StreamRng, mut visit: impl FnMut(f64) -> bool) -> Result<WalkEnd> {
    require(cfg.dt > 0.0 && cfg.bin > 0.0, "dt and bin must be positive")?;
    if cfg.window.is_some() && matches!(stop, Stop::FixedTime(_)) {
        return Err(Error::InvalidArgument("windowed walks cannot stop at a fixed time".into()));
    }
    let (lo, hi) = cfg.window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let sqdt = cfg.dt.sqrt();
    let per_sample = cfg.dt / cfg.bin;
    let fixed_steps = match stop {
        Stop::FixedTime(t) => (t / cfg.dt).round() as u64,
        _ => u64::MAX,
    };
    let (mut x, mut steps, mut l0) = (0.0f64, 0u64, 0.0f64);
    loop {
        let done = match stop {
            Stop::FixedTime(_) => steps >= fixed_steps,
            Stop::Passage(a) => (a >= 0.0 && x >= a) || (a < 0.0 && x <= a),
            Stop::InvLocalTime(r) => l0 >= r,
        };
        if done {
            return Ok(WalkEnd { steps, local_time_zero: l0, interrupted: false, last: x });
        }
        if steps >= cfg.max_steps {
            return Err(Error::Budget { what: format!("{stop:?} not reached"), steps });
        }
        if in_zero_bin(x, cfg.bin) {
            l0 += per_sample;
        }
        steps += 1;
        if !visit(x) {
            return Ok(WalkEnd { steps, local_time_zero: l0, interrupted: true, last: x });
        }
        x = (x + sqdt * rng::normal(rng)).clamp(lo, hi);
    }
}

/// Stored Brownian path on a uniform clock.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl BrownianPath {
    /// Simulate until `stop` is realized (with the given bin for local time).
    pub fn simulate(stop: Stop, cfg: &WalkConfig, seed: u64, replicate: u64) -> Result<Self> {
        require(cfg.window.is_none(), "stored paths are not windowed")?;
        let mut rng = rng::stream(seed, replicate, Purpose::Driving);
        let mut values = Vec::new();
        let end = walk(stop, cfg, &mut rng, |x| {
            values.push(x);
            true
        })?;
        values.push(end.last);
        Ok(Self { dt: cfg.dt, values, seed })
    }

    /// Number of counted samples before `stop` is realized on this path.
    pub fn stop_index(&self, stop: Stop, bin: f64) -> Result<usize> {
        let mut l0 = 0.0;
        for (k, &x) in self.values.iter().enumerate() {
            let done = match stop {
                Stop::FixedTime(t) => k as f64 >= (t / self.dt).round(),
                Stop::Passage(a) => (a >= 0.0 && x >= a) || (a < 0.0 && x <= a),
                Stop::InvLocalTime(r) => l0 >= r,
            };
            if done {
                return Ok(k);
            }
            if in_zero_bin(x, bin) {
                l0 += self.dt / bin;
            }
        }
        Err(Error::Budget { what: format!("{stop:?} not reached on the stored path"), steps: self.values.len() as u64 })
    }
}

/// Local time on a grid of bins `[c − bin/2, c + bin/2)` centred at multiples of `bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    pub levels: Vec<f64>,
    pub l: Vec<f64>,
    pub bin: f64,
    pub seed: u64,
    /// Elapsed time at the stop (`None` for synthetic fields).
    pub elapsed: Option<f64>,
}

impl LocalTimeField {
    /// Field value at the bin containing `level` (0 outside the support).
    pub fn at(&self, level: f64) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        let step = if self.levels.len() > 1 { self.levels[1] - self.levels[0] } else { self.bin };
        let k = ((level - self.levels[0]) / step).round();
        if k < 0.0 || k as usize >= self.levels.len() {
            0.0
        } else {
            self.l[k as usize]
        }
    }

    /// `∫ L dx` by the bin rule.
    pub fn total(&self) -> f64 {
        let step = if self.levels.len() > 1 { self.levels[1] - self.levels[0] } else { self.bin };
        self.l.iter().sum::<f64>() * step
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,L\n");
        for (x, l) in self.levels.iter().zip(&self.l) {
            s.push_str(&format!("{x},{l}\n"));
        }
        s
    }
}

/// Binned occupation time divided by the bin width, up to `stop`.
pub fn local_time_field(path: &BrownianPath, stop: Stop, bin: f64) -> Result<LocalTimeField> {
    require(bin > 0.0, "bin must be positive")?;
    let n = path.stop_index(stop, bin)?;
    let samples = &path.values[..n];
    let idx = |x: f64| (x / bin + 0.5).floor() as i64;
    let lo = samples.iter().map(|&x| idx(x)).min().unwrap_or(0);
    let hi = samples.iter().map(|&x| idx(x)).max().unwrap_or(0);
    let mut l = vec![0.0; (hi - lo + 1) as usize];
    for &x in samples {
        l[(idx(x) - lo) as usize] += path.dt / bin;
    }
    let levels = (lo..=hi).map(|k| k as f64 * bin).collect();
    Ok(LocalTimeField { levels, l, bin, seed: path.seed, elapsed: Some(n as f64 * path.dt) })
}

/// First time the binned local time at 0 reaches `r`.
pub fn inverse_local_time(path: &BrownianPath, r: f64, bin: f64) -> Result<f64> {
    require(r >= 0.0, "r must be non-negative")?;
    Ok(path.stop_index(Stop::InvLocalTime(r), bin)? as f64 * path.dt)
}

/// Streaming version of [`inverse_local_time`]: `τ_r`, or `None` once the
/// clock passes `cap`.
pub fn inverse_local_time_capped(r: f64, cap: f64, cfg: &WalkConfig, rng: &mut StreamRng) -> Result<Option<f64>> {
    let limit = (cap / cfg.dt).ceil() as u64;
    let mut n = 0u64;
    let end = walk(Stop::InvLocalTime(r), cfg, rng, |_| {
        n += 1;
        n <= limit
    })?;
    Ok(if end.interrupted { None } else { Some(end.steps as f64 * cfg.dt) })
}

/// Local time at the bins centred at `levels`, streamed with the given
/// stop and window.
pub fn probe_field(stop: Stop, levels: &[f64], cfg: &WalkConfig, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; levels.len()];
    let half = 0.5 * cfg.bin;
    walk(stop, cfg, rng, |x| {
        for (c, &lv) in counts.iter_mut().zip(levels) {
            if (lv - half..lv + half).contains(&x) {
                *c += 1;
            }
        }
        true
    })?;
    Ok(counts.iter().map(|&c| c as f64 * cfg.dt / cfg.bin).collect())
}

/// Which Ray–Knight field to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayKnight {
    /// `L^{a−t}_{σ(a)}`: dimension 2 from 0 for `t ≤ a`, then dimension 0.
    First(f64),
    /// `L^t_{τ(u)}`, `t ≥ 0`: dimension 0 from `u`.
    Second(f64),
}

/// Synthetic local-time field generated as the prescribed squared Bessel
/// process in the level variable (step `cfg.dt`), up to absorption or `max_extent`.
pub fn rayknight_field(kind: RayKnight, cfg: &SdeConfig, max_extent: f64) -> Result<LocalTimeField> {
    let mut rng = cfg.stream(Purpose::Bessel);
    let dl = cfg.dt;
    let mut values = Vec::new();
    let levels;
    match kind {
        RayKnight::First(a) => {
            require(a > 0.0, "a must be positive")?;
            let up = processes::simulate_besq_rng(2.0, 0.0, a, dl, None, cfg.seed, &mut rng)?;
            values.extend_from_slice(&up.values);
            let mut z = *values.last().unwrap();
            let n_max = ((max_extent - a) / dl).ceil().max(0.0) as usize;
            for _ in 0..n_max {
                if z <= 0.0 {
                    break;
                }
                z = (z + 2.0 * z.sqrt() * dl.sqrt() * rng::normal(&mut rng)).max(0.0);
                values.push(z);
            }
            levels = (0..values.len()).map(|k| a - k as f64 * dl).collect();
        }
        RayKnight::Second(u) => {
            require(u > 0.0, "u must be positive")?;
            let mut z = u;
            values.push(z);
            let n_max = (max_extent / dl).ceil() as usize;
            for _ in 0..n_max {
                if z <= 0.0 {
                    break;
                }
                z = (z + 2.0 * z.sqrt() * dl.sqrt() * rng::normal(&mut rng)).max(0.0);
                values.push(z);
            }
            levels = (0..values.len()).map(|k| k as f64 * dl).collect();
        }
    }
    Ok(LocalTimeField { levels, l: values, bin: dl, seed: cfg.seed, elapsed: None })
}

/// Closed-form Laplace transform of `A = ∫_η^∞ L^x_{τ₁} x^{−2} dx`, valid
/// (by analytic continuation) for `λ > −1/8`.
pub fn pitman_yor_laplace(eta: f64, lambda: f64) -> Result<f64> {
    require(eta > 0.0, "eta must be positive")?;
    require(lambda > -0.125, "lambda must exceed −1/8")?;
    let s = (1.0 + 8.0 * lambda).sqrt();
    Ok(((1.0 - s) / (2.0 * (1.0 + s) * eta)).exp())
}

/// One Monte Carlo draw of `A = ∫_η^X Z_x x^{−2} dx` with `Z` the second
/// Ray–Knight field from 1, truncated at level `x_max` (`E` of the omitted
/// part is `1/x_max`).
pub fn pitman_yor_sample(eta: f64, dl: f64, x_max: f64, rng: &mut StreamRng) -> f64 {
    let (mut z, mut x, mut a) = (1.0f64, 0.0f64, 0.0f64);
    while z > 0.0 && x < x_max {
        let next = (z + 2.0 * z.sqrt() * dl.sqrt() * rng::normal(rng)).max(0.0);
        let xn = x + dl;
        if xn > eta {
            let lo = x.max(eta);
            let zl = z + (next - z) * (lo - x) / dl;
            a += 0.5 * (zl / (lo * lo) + next / (xn * xn)) * (xn - lo);
        }
        z = next;
        x = xn;
    }
    a
}

/// `4√((1+δ)v)/δ · exp(−δ²/(8(1+δ)v))`.
pub fn besq_deviation_bound(delta: f64, v: f64) -> Result<f64> {
    require(delta > 0.0 && v > 0.0, "delta and v must be positive")?;
    Ok(4.0 * ((1.0 + delta) * v).sqrt() / delta * (-delta * delta / (8.0 * (1.0 + delta) * v)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics;

    #[test]
    fn occupation_identity_and_inverse_local_time() {
        let cfg = WalkConfig { dt: 1e-4, ..Default::default() };
        for rep in 0..5 {
            let path = BrownianPath::simulate(Stop::InvLocalTime(0.5), &cfg, 3, rep).unwrap();
            let f = local_time_field(&path, Stop::InvLocalTime(0.5), cfg.bin).unwrap();
            assert!((f.total() / f.elapsed.unwrap() - 1.0).abs() < 0.02);
            assert!((f.at(0.0) / 0.5 - 1.0).abs() < 0.05, "{}", f.at(0.0));
            assert!(f.l.iter().all(|&l| l >= 0.0));
            let t1 = inverse_local_time(&path, 0.2, cfg.bin).unwrap();
            let t2 = inverse_local_time(&path, 0.5, cfg.bin).unwrap();
            assert!(t1 <= t2);
            assert_eq!(inverse_local_time(&path, 0.0, cfg.bin).unwrap(), 0.0);
        }
        let path = BrownianPath::simulate(Stop::FixedTime(1.0), &cfg, 4, 0).unwrap();
        let f = local_time_field(&path, Stop::FixedTime(1.0), cfg.bin).unwrap();
        assert!((f.total() - 1.0).abs() < 0.02);
        assert!(local_time_field(&path, Stop::Passage(100.0), cfg.bin).is_err());
    }

    #[test]
    fn walk_matches_stored_path() {
        let cfg = WalkConfig { dt: 1e-3, ..Default::default() };
        let path = BrownianPath::simulate(Stop::Passage(0.5), &cfg, 9, 2).unwrap();
        let mut rng = rng::stream(9, 2, Purpose::Driving);
        let mut seen = Vec::new();
        walk(Stop::Passage(0.5), &cfg, &mut rng, |x| {
            seen.push(x);
            true
        })
        .unwrap();
        assert_eq!(&path.values[..seen.len()], &seen[..]);
        assert!(*path.values.last().unwrap() >= 0.5);
    }

    #[test]
    fn inverse_local_time_laplace() {
        let n = 2000;
        let cfg = WalkConfig { dt: 1e-4, ..Default::default() };
        let xs: Vec<f64> = (0..n)
            .map(|rep| {
                let mut rng = rng::stream(31, rep, Purpose::Driving);
                match inverse_local_time_capped(1.0, 40.0, &cfg, &mut rng).unwrap() {
                    Some(t) => (-0.5 * t).exp(),
                    None => 0.0,
                }
            })
            .collect();
        let (m, se) = numerics::mean_se(&xs);
        assert!((m - (-1f64).exp()).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn first_ray_knight_mean_profile() {
        let n = 2000;
        let cfg = WalkConfig { dt: 1e-4, window: Some((below_band(0.02, 1e-4) - 0.0, f64::INFINITY)), ..Default::default() };
        let levels = [0.75, 0.5, 0.25, 0.0];
        let mut rows = vec![Vec::new(); levels.len()];
        for rep in 0..n {
            let mut rng = rng::stream(41, rep, Purpose::Driving);
            let l = probe_field(Stop::Passage(1.0), &levels, &cfg, &mut rng).unwrap();
            for (r, v) in rows.iter_mut().zip(l) {
                r.push(v);
            }
        }
        for (lv, r) in levels.iter().zip(&rows) {
            let (m, se) = numerics::mean_se(r);
            assert!((m - 2.0 * (1.0 - lv)).abs() < 3.0 * se, "level {lv}: {m} ± {se}");
        }
    }

    #[test]
    fn synthetic_fields() {
        let f = rayknight_field(RayKnight::Second(1.0), &SdeConfig::new(1e-3, 2), 50.0).unwrap();
        assert_eq!(f.at(0.0), 1.0);
        let n = 4000;
        let at0: Vec<f64> =
            (0..n).map(|r| rayknight_field(RayKnight::First(1.0), &SdeConfig::new(1e-3, 3).replicate(r), 3.0).unwrap().at(0.0)).collect();
        let (m, se) = numerics::mean_se(&at0);
        assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
        assert!(rayknight_field(RayKnight::First(0.0), &SdeConfig::new(1e-3, 3), 1.0).is_err());
    }

    #[test]
    fn pitman_yor_closed_form() {
        assert_eq!(pitman_yor_laplace(0.7, 0.0).unwrap(), 1.0);
        assert!((pitman_yor_laplace(0.5, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(pitman_yor_laplace(0.5, -0.125).is_err());
        assert!(pitman_yor_laplace(0.5, -0.1).unwrap() > 1.0);
        for i in 0..20 {
            let l = -0.12 + 0.2 * i as f64;
            assert!(pitman_yor_laplace(0.5, l + 0.1).unwrap() < pitman_yor_laplace(0.5, l).unwrap());
            if l > 0.0 {
                assert!(pitman_yor_laplace(0.6, l).unwrap() > pitman_yor_laplace(0.5, l).unwrap());
            }
        }
    }

    #[test]
    fn deviation_bound_values() {
        assert!((besq_deviation_bound(1.0, 1.0).unwrap() - 4.0 * 2f64.sqrt() * (-1.0f64 / 16.0).exp()).abs() < 1e-12);
        assert!((besq_deviation_bound(1.0, 1.0).unwrap() - 5.3141).abs() < 1e-4);
        assert!(besq_deviation_bound(1.0, 1e-6).unwrap() < 1e-10);
        let bound = besq_deviation_bound(2.0, 0.05).unwrap();
        let n = 10_000;
        let hits = (0..n)
            .filter(|&r| {
                let p = processes::simulate_besq(0.0, 1.0, 0.05, &SdeConfig::new(1e-4, 12).replicate(r), None).unwrap();
                p.values.iter().any(|&x| (x - 1.0).abs() > 2.0)
            })
            .count();
        assert!((hits as f64 / n as f64) <= bound);
    }
}
