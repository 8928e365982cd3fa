//! The Sturm–Liouville problem `z'' = −λVz`, `z(0)=1`, `z'(0)=0` on `[0, 1]`:
//! its principal value `λ(V)`, the two-sided bracket
//! `sup(1−t)V̄(t) ≤ 1/λ(V) ≤ 4·sup(1−t)V̄(t)`, and the certified exit-time
//! moment bound built from it.

use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::potential::{interval_depths, scale_table, PotentialPath};

/// A non-negative weight on `[0, 1]`, constant on each of `values.len()` equal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialWeight {
    pub values: Vec<f64>,
}

impl PotentialWeight {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        require(!values.is_empty(), "weight needs at least one cell")?;
        require(values.iter().all(|v| v.is_finite() && *v >= 0.0), "weight must be finite and non-negative")?;
        Ok(Self { values })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![c])
    }

    /// Cell-midpoint sampling of `f` with `cells` cells.
    pub fn from_fn(f: impl Fn(f64) -> f64, cells: usize) -> Result<Self> {
        let h = 1.0 / cells as f64;
        Self::new((0..cells).map(|k| f((k as f64 + 0.5) * h)).collect())
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }

    /// `V̄(t) = ∫₀ᵗ V` at the cell boundaries.
    pub fn cumulative(&self) -> Vec<f64> {
        let h = 1.0 / self.cells() as f64;
        let mut out = Vec::with_capacity(self.cells() + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * h;
            out.push(acc);
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Minimum number of RK4 steps on `[0, 1]`.
pub const RK4_STEPS: usize = 10_000;

/// Whether the solution of `z'' = −λVz`, `z(0)=1`, `z'(0)=0` stays positive on `[0, 1]`.
fn stays_positive(weight: &PotentialWeight, lambda: f64) -> bool {
    let cells = weight.cells();
    let per_cell = RK4_STEPS.div_ceil(cells);
    let h = 1.0 / (cells * per_cell) as f64;
    let (mut z, mut p) = (1.0f64, 0.0f64);
    for &v in &weight.values {
        let k = -lambda * v;
        for _ in 0..per_cell {
            // z' = p, p' = k z with k constant inside the cell
            let (z1, p1) = (p, k * z);
            let (z2, p2) = (p + 0.5 * h * p1, k * (z + 0.5 * h * z1));
            let (z3, p3) = (p + 0.5 * h * p2, k * (z + 0.5 * h * z2));
            let (z4, p4) = (p + h * p3, k * (z + h * z3));
            z += h / 6.0 * (z1 + 2.0 * z2 + 2.0 * z3 + z4);
            p += h / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
            if z <= 0.0 {
                return false;
            }
        }
    }
    true
}

/// `sup_{0<t<1} (1−t)V̄(t)`, exact for a cell-constant weight.
pub fn bobkov_sup(weight: &PotentialWeight) -> f64 {
    let h = 1.0 / weight.cells() as f64;
    let cum = weight.cumulative();
    let mut best = 0.0f64;
    for (k, &c) in weight.values.iter().enumerate() {
        let t0 = k as f64 * h;
        let f = |t: f64| (1.0 - t) * (cum[k] + c * (t - t0));
        best = best.max(f(t0)).max(f(t0 + h));
        if c > 0.0 {
            let t = (c * (1.0 + t0) - cum[k]) / (2.0 * c);
            if t > t0 && t < t0 + h {
                best = best.max(f(t));
            }
        }
    }
    best
}

/// `λ(V)` by shooting and bisection to relative width `1e-10`; the weight
/// `V ≡ 0` gives `f64::INFINITY`.
pub fn principal_lambda(weight: &PotentialWeight) -> Result<f64> {
    if weight.is_zero() {
        return Ok(f64::INFINITY);
    }
    let s = bobkov_sup(weight);
    // the bracket itself, widened by a safety factor of 2 on each side
    let (mut lo, mut hi) = (0.125 / s, 2.0 / s);
    for _ in 0..60 {
        if stays_positive(weight, lo) {
            break;
        }
        lo *= 0.5;
    }
    for _ in 0..60 {
        if !stays_positive(weight, hi) {
            break;
        }
        hi *= 2.0;
    }
    if !stays_positive(weight, lo) || stays_positive(weight, hi) {
        return Err(Error::Numerical("could not bracket the principal value".into()));
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if stays_positive(weight, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The bracket `S ≤ 1/λ(V) ≤ 4S` evaluated for one weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BobkovBracket {
    pub s: f64,
    pub inv_lambda: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

pub fn bobkov_bracket(weight: &PotentialWeight) -> Result<BobkovBracket> {
    require(!weight.is_zero(), "the bracket needs a non-zero weight")?;
    let s = bobkov_sup(weight);
    let inv = 1.0 / principal_lambda(weight)?;
    let tol = 1e-7;
    Ok(BobkovBracket { s, inv_lambda: inv, lower_ok: s <= inv * (1.0 + tol), upper_ok: inv <= 4.0 * s * (1.0 + tol) })
}

/// Certified exponential moment of the exit time of `[a, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitBound {
    pub a: f64,
    pub c: f64,
    #[serde(rename = "D_plus")]
    pub d_plus: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// `λ* = 1/(64·(1∨(c−a))·e^{D₊})`, a certified lower bound on `λ(Ṽ)`.
    pub lambda_star: f64,
    /// `2e^M ≥ sup_x E_W^x[exp(λ*·H(a)∧H(c))]`.
    pub bound: f64,
    /// `λ(Ṽ)` computed by shooting on the extended interval.
    pub lambda_numeric: f64,
}

impl ExitBound {
    /// Markov tail `P(H(a)∧H(c) > s) ≤ 2e^M·e^{−λ*s}`.
    pub fn tail(&self, s: f64) -> f64 {
        (self.bound * (-self.lambda_star * s).exp()).min(1.0)
    }
}

/// Weight `Ṽ` of the exit problem: `exp(−2W_κ(A⁻¹(·)))` read on the scale line
/// from `A_κ(a)` across `[a, c']`, with `c' − a = 2(c − a)` and `W_κ` held at
/// `W_κ(c)` on `[c, c']`; rescaled to `[0, 1]` (the factor `L²` comes from the
/// change of variable).
pub fn exit_weight(env: &PotentialPath, a: f64, c: f64, cells: usize) -> Result<PotentialWeight> {
    require(a < c, "need a < c")?;
    let table = scale_table(env);
    let (aa, ac) = (table.eval(a), table.eval(c));
    let wc = env.value_at(c);
    let c_ext = a + 2.0 * (c - a);
    let ac_ext = ac + (c_ext - c) * wc.exp();
    let len = ac_ext - aa;
    PotentialWeight::from_fn(
        |r| {
            let y = aa + len * r;
            let w = if y <= ac { env.value_at(table.inverse(y).unwrap_or(c)) } else { wc };
            len * len * (-2.0 * w).exp()
        },
        cells,
    )
}

pub fn exit_laplace_bound(env: &PotentialPath, a: f64, c: f64) -> Result<ExitBound> {
    require(a <= c, "need a ≤ c")?;
    for x in [a, c] {
        if x < env.x_min || x > env.x_max {
            return Err(Error::WindowExceeded(format!("{x} outside [{}, {}]", env.x_min, env.x_max)));
        }
    }
    let depths = interval_depths(env, a, c)?;
    let lambda_star = 1.0 / (64.0 * (c - a).max(1.0) * depths.d_plus.exp());
    let lambda_numeric = if a == c { f64::INFINITY } else { principal_lambda(&exit_weight(env, a, c, RK4_STEPS)?)? };
    Ok(ExitBound { a, c, d_plus: depths.d_plus, m: depths.m, lambda_star, bound: 2.0 * depths.m.exp(), lambda_numeric })
}
