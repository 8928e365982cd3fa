//! Self-checks runnable from the command line: pathwise identities, the
//! closed-form constants, the spectral bracket, and worker-count
//! reproducibility. Each check reports pass/fail with a one-line detail.

use serde::Serialize;

use crate::diffusion::{decompose_hitting, hit, DiffusionConfig};
use crate::error::{Error, Result};
use crate::potential::{decompose_valleys, sample_potential};
use crate::rng::{self, Purpose};
use crate::spectral::{bobkov_bracket, principal_lambda, PotentialWeight};
use crate::tails::{self, AnnealedEvent, AnnealedMethod, QuenchedEvent, TailOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Constants,
    Spectral,
    Reproducibility,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identities" => Self::Identities,
            "constants" => Self::Constants,
            "spectral" => Self::Spectral,
            "reproducibility" => Self::Reproducibility,
            "all" => Self::All,
            other => return Err(Error::Config(format!("unknown suite '{other}' (identities, constants, spectral, reproducibility, all)"))),
        })
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Identities => vec![identities(20, 0.5, 200.0, 3.0, 2e-2, seed)?],
        Suite::Constants => constants_checks()?,
        Suite::Spectral => spectral_checks(100, seed)?,
        Suite::Reproducibility => vec![reproducibility(seed)?],
        Suite::All => {
            let mut out = Vec::new();
            for s in [Suite::Identities, Suite::Constants, Suite::Spectral, Suite::Reproducibility] {
                out.extend(run_suite(s, seed)?);
            }
            out
        }
    })
}

/// Largest violations of `θ₁+θ₂ = H(v)` and of the five-term decomposition
/// over `paths` independent environments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub paths: usize,
    pub max_theta_gap: f64,
    pub max_decomposition_gap: f64,
    /// `|H(v)| from the plain run minus the decomposed run`, same noise.
    pub max_rerun_gap: f64,
    pub mean_b_total: f64,
    pub max_h: f64,
    pub total_steps: u64,
}

pub fn identity_report(paths: usize, kappa: f64, t: f64, v: f64, dt: f64, seed: u64) -> Result<IdentityReport> {
    let right = 10.0 * 3.0 / kappa * t.floor().ln();
    let mut rep = IdentityReport {
        paths,
        max_theta_gap: 0.0,
        max_decomposition_gap: 0.0,
        max_rerun_gap: 0.0,
        mean_b_total: 0.0,
        max_h: 0.0,
        total_steps: 0,
    };
    for p in 0..paths as u64 {
        let env = sample_potential(kappa, -t.floor(), (v + right).ceil(), 1e-2, seed.wrapping_add(p))?;
        let valleys = decompose_valleys(&env, t, v)?;
        let cfg = DiffusionConfig::new(dt, seed).replicate(p);
        let h = hit(&env, v, &cfg)?;
        let b = decompose_hitting(&env, &valleys, &cfg)?;
        rep.max_theta_gap = rep.max_theta_gap.max((h.theta1 + h.theta2 - h.h).abs());
        rep.max_decomposition_gap = rep.max_decomposition_gap.max((b.sum() - b.h_total).abs());
        rep.max_rerun_gap = rep.max_rerun_gap.max((b.h_total - h.h).abs());
        rep.mean_b_total += b.b_total as f64 / paths as f64;
        rep.max_h = rep.max_h.max(h.h);
        rep.total_steps += h.steps + b.steps;
    }
    Ok(rep)
}

fn identities(paths: usize, kappa: f64, t: f64, v: f64, dt: f64, seed: u64) -> Result<Check> {
    let r = identity_report(paths, kappa, t, v, dt, seed)?;
    let pass = r.max_theta_gap <= dt && r.max_decomposition_gap <= dt && r.max_rerun_gap <= dt;
    Ok(Check::new(
        "identities",
        pass,
        format!(
            "{paths} paths: max |θ₁+θ₂−H| = {:.2e}, max |ΣH_· − H| = {:.2e}, rerun gap {:.2e} (tolerance {dt})",
            r.max_theta_gap, r.max_decomposition_gap, r.max_rerun_gap
        ),
    ))
}

fn constants_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let c = tails::constants(0.5)?;
    out.push(Check::new("c_kappa(0.5)", (c.c_kappa - 0.5).abs() < 1e-12, format!("{:.15}", c.c_kappa)));
    for k in [0.3, 0.5, 0.7] {
        let c = tails::constants(k)?;
        let gap = (c.c_h_fullline - c.c_h_fullline_analytic).abs().max((c.c_h_halfline - c.c_h_halfline_analytic).abs());
        out.push(Check::new(
            &format!("c_h({k})"),
            gap < 1e-6,
            format!("full {:.9} half {:.9}, max gap {gap:.2e}", c.c_h_fullline, c.c_h_halfline),
        ));
    }
    Ok(out)
}

fn spectral_checks(weights: usize, seed: u64) -> Result<Vec<Check>> {
    let l = principal_lambda(&PotentialWeight::constant(1.0)?)?;
    let target = std::f64::consts::PI.powi(2) / 4.0;
    let mut out = vec![Check::new("lambda(V=1)", (l - target).abs() < 1e-6, format!("{l:.10} vs {target:.10}"))];
    let mut failures = 0;
    for r in 0..weights as u64 {
        let mut rng = rng::stream(seed, r, Purpose::Weights);
        let cells = 50;
        let w = PotentialWeight::new((0..cells).map(|_| (2.0 * rng::normal(&mut rng)).exp()).collect())?;
        let b = bobkov_bracket(&w)?;
        if !(b.lower_ok && b.upper_ok) {
            failures += 1;
        }
    }
    out.push(Check::new("bobkov bracket", failures == 0, format!("{failures} of {weights} random weights outside S ≤ 1/λ ≤ 4S")));
    Ok(out)
}

fn reproducibility(seed: u64) -> Result<Check> {
    let base = TailOptions { dt: 2e-2, dx: 0.05, ..Default::default() };
    let mut same = true;
    for w in [4, 16] {
        let run = |workers| -> Result<_> {
            let opts = TailOptions { workers: Some(workers), ..base };
            let rep = TailOptions { method: AnnealedMethod::Representation, ..opts };
            Ok((
                tails::estimate_tail_annealed_grid(0.5, 4.0, &[0.5, 1.0], AnnealedEvent::SpeedupX, 64, seed, &opts)?,
                tails::estimate_tail_annealed_grid(0.5, 0.0, &[2.0, 3.0], AnnealedEvent::SlowdownH { v: 5.0 }, 64, seed, &rep)?,
                tails::estimate_tail_quenched(seed, 0.5, 4.0, 0.25, QuenchedEvent::SlowdownX, 64, seed, &opts)?,
            ))
        };
        same &= run(1)? == run(w)?;
    }
    Ok(Check::new("reproducibility", same, "annealed and quenched estimates at 1, 4 and 16 workers".into()))
}
