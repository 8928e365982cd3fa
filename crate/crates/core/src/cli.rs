//! Command-line front end. Every subcommand accepts `--config <json>` with
//! the keys `{kappa, dt, dx, t, v, u, nu, n, seed, env_seed, window}`;
//! flags given on the command line override the file. Results go to stdout
//! as JSON, and tabular results can also be written with `--out <csv>`.
//!
//! Exit codes: 0 success, 1 runtime failure (or a failed `verify`), 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffusion::{decompose_hitting, hit, simulate_path, DiffusionConfig};
use crate::error::Error;
use crate::potential::{decompose_valleys, sample_potential, PotentialPath};
use crate::tails::{self, AnnealedEvent, AnnealedMethod, FitMode, QuenchedEvent, TailEstimate, TailOptions, TAIL_CSV_HEADER};
use crate::verify::{run_suite, Suite};

#[derive(Debug, Parser)]
#[command(name = "brox", version, about = "Diffusion in a drifted Brownian potential")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the potential W_κ on a window.
    SampleEnv(Params),
    /// Break points and depths of the valleys for horizon t and level v.
    Valleys(Params),
    /// Simulate X on [0, t] in one environment.
    Simulate(Params),
    /// Run to H(v); with --decompose, split H(v) over the valleys.
    Hitting {
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        decompose: bool,
    },
    /// Annealed deviation probabilities on a grid of u.
    TailAnnealed {
        #[command(flatten)]
        params: Params,
        #[arg(long, value_enum)]
        event: AnnealedKind,
        #[arg(long, value_enum, default_value = "direct")]
        method: Method,
        #[command(flatten)]
        numerics: TailArgs,
    },
    /// Quenched deviation probability in the environment of --env-seed.
    TailQuenched {
        #[command(flatten)]
        params: Params,
        #[arg(long, value_enum)]
        event: QuenchedKind,
        #[command(flatten)]
        numerics: TailArgs,
    },
    /// Fit an exponent to (abscissa, p) pairs read from a CSV file.
    Fit {
        /// CSV with a header; uses columns `u` (or `t`, or `x`) and `p_hat` (or `p`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        params: Params,
    },
    /// c_κ and the integrals of h.
    Constants(Params),
    /// Run a self-check suite: identities, constants, spectral, reproducibility or all.
    Verify {
        suite: String,
        #[command(flatten)]
        params: Params,
    },
}

/// Options shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
struct Params {
    /// JSON file with default values for the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write tabular output to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    /// One value or a comma-separated grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    u: Vec<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    env_seed: Option<u64>,
    /// Environment window as `x_min,x_max`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    window: Vec<f64>,
}

#[derive(Debug, Clone, Default, Args)]
struct TailArgs {
    #[arg(long)]
    workers: Option<usize>,
    /// Relative step of the Bessel passages (representation method).
    #[arg(long)]
    bessel_h: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnnealedKind {
    #[value(alias = "speedup_x")]
    SpeedupX,
    #[value(alias = "speedup_sup_x")]
    SpeedupSupX,
    #[value(alias = "slowdown_x")]
    SlowdownX,
    #[value(alias = "speedup_h")]
    SpeedupH,
    #[value(alias = "slowdown_h")]
    SlowdownH,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuenchedKind {
    Speedup,
    #[value(alias = "slowdown_h")]
    SlowdownH,
    #[value(alias = "slowdown_x")]
    SlowdownX,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Direct,
    Representation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    #[value(alias = "log_vs_log")]
    LogVsLog,
    #[value(alias = "loglog_vs_log")]
    LoglogVsLog,
    #[value(alias = "power_law")]
    PowerLaw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

/// The JSON configuration file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    kappa: Option<f64>,
    dt: Option<f64>,
    dx: Option<f64>,
    t: Option<f64>,
    v: Option<f64>,
    u: Option<OneOrMany>,
    nu: Option<f64>,
    n: Option<usize>,
    seed: Option<u64>,
    env_seed: Option<u64>,
    window: Option<[f64; 2]>,
}

/// Command-line flags merged over the configuration file.
#[derive(Debug, Clone)]
struct Resolved {
    kappa: Option<f64>,
    dt: Option<f64>,
    dx: Option<f64>,
    t: Option<f64>,
    v: Option<f64>,
    u: Vec<f64>,
    nu: Option<f64>,
    n: Option<usize>,
    seed: u64,
    env_seed: Option<u64>,
    window: Option<(f64, f64)>,
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
    /// stdout was closed by the reader (e.g. `| head`); not an error.
    Closed,
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            Self::Closed
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

impl Params {
    fn resolve(&self) -> CliResult<Resolved> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let u = if !self.u.is_empty() {
            self.u.clone()
        } else {
            match file.u {
                Some(OneOrMany::One(x)) => vec![x],
                Some(OneOrMany::Many(xs)) => xs,
                None => Vec::new(),
            }
        };
        let window = match (self.window.as_slice(), file.window) {
            ([a, b], _) => Some((*a, *b)),
            ([], w) => w.map(|[a, b]| (a, b)),
            _ => return usage("--window takes x_min,x_max"),
        };
        if let Some((a, b)) = window {
            if a.is_nan() || b.is_nan() || a >= b {
                return usage("window needs x_min < x_max");
            }
        }
        Ok(Resolved {
            kappa: self.kappa.or(file.kappa),
            dt: self.dt.or(file.dt),
            dx: self.dx.or(file.dx),
            t: self.t.or(file.t),
            v: self.v.or(file.v),
            u,
            nu: self.nu.or(file.nu),
            n: self.n.or(file.n),
            seed: self.seed.or(file.seed).unwrap_or(1),
            env_seed: self.env_seed.or(file.env_seed),
            window,
            out: self.out.clone(),
        })
    }
}

fn need<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required parameter '{name}'")))
}

impl Resolved {
    fn env_seed(&self) -> u64 {
        self.env_seed.unwrap_or(self.seed)
    }

    fn environment(&self, default_window: (f64, f64)) -> CliResult<PotentialPath> {
        let kappa = need(self.kappa, "kappa")?;
        let dx = self.dx.unwrap_or(0.01);
        let (lo, hi) = self.window.unwrap_or(default_window);
        let snap = |x: f64, up: bool| if up { (x / dx).ceil() * dx } else { (x / dx).floor() * dx };
        Ok(sample_potential(kappa, snap(lo.min(0.0), false), snap(hi, true), dx, self.env_seed())?)
    }

    fn tail_options(&self, numerics: &TailArgs, method: AnnealedMethod) -> TailOptions {
        let base = TailOptions::default();
        TailOptions {
            dt: self.dt.unwrap_or(base.dt),
            dx: self.dx.unwrap_or(base.dx),
            window: self.window,
            method,
            bessel_h: numerics.bessel_h.unwrap_or(base.bessel_h),
            workers: numerics.workers,
            ..base
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{text}").map_err(CliError::from)
}

fn estimates_csv(estimates: &[TailEstimate]) -> String {
    let mut s = format!("{TAIL_CSV_HEADER}\n");
    for e in estimates {
        s.push_str(&e.csv_row());
        s.push('\n');
    }
    s
}

/// Read `(abscissa, p)` pairs from a CSV with a header row.
fn read_points(path: &Path, mode: Mode) -> CliResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| CliError::Usage("empty input".into()))?.split(',').map(str::trim).collect();
    let col = |names: &[&str]| names.iter().find_map(|n| header.iter().position(|h| h == n));
    let abscissa = match mode {
        Mode::LoglogVsLog => col(&["t", "x"]),
        Mode::LogVsLog | Mode::PowerLaw => col(&["u", "x"]),
    }
    .ok_or_else(|| CliError::Usage("input needs a 'u', 't' or 'x' column".into()))?;
    let p = col(&["p_hat", "p"]).ok_or_else(|| CliError::Usage("input needs a 'p_hat' or 'p' column".into()))?;
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get =
                |k: usize| fields.get(k).and_then(|f| f.parse::<f64>().ok()).ok_or_else(|| CliError::Usage(format!("bad row '{line}'")));
            Ok((get(abscissa)?, get(p)?))
        })
        .collect()
}

fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<bool> {
    match cli.command {
        Command::SampleEnv(p) => {
            let r = p.resolve()?;
            let env = r.environment((-50.0, 50.0))?;
            let mut summary =
                serde_json::json!({"kappa": env.kappa, "x_min": env.x_min, "x_max": env.x_max, "dx": env.dx, "seed": env.seed});
            match &r.out {
                // the values go to the CSV; stdout keeps the summary
                Some(path) => write_file(path, &env.to_csv())?,
                None => summary["values"] = serde_json::json!(env.values),
            }
            emit(out, &summary)?;
        }
        Command::Valleys(p) => {
            let r = p.resolve()?;
            let (t, v, kappa) = (need(r.t, "t")?, need(r.v, "v")?, need(r.kappa, "kappa")?);
            let right = 10.0 * 3.0 / kappa * t.floor().ln().max(t.ln());
            let env = r.environment((-t.floor(), v + right))?;
            emit(out, &decompose_valleys(&env, t, v)?)?;
        }
        Command::Simulate(p) => {
            let r = p.resolve()?;
            let t = need(r.t, "t")?;
            let env = r.environment((-100.0, 100.0))?;
            let path = simulate_path(&env, t, &DiffusionConfig::new(r.dt.unwrap_or(1e-3), r.seed))?;
            if let Some(file) = &r.out {
                write_file(file, &path.to_csv())?;
            }
            emit(
                out,
                &serde_json::json!({"t": t, "x_t": path.at(t), "steps": path.times.len() - 1, "seed": r.seed, "env_seed": env.seed}),
            )?;
        }
        Command::Hitting { params, decompose } => {
            let r = params.resolve()?;
            let (v, kappa) = (need(r.v, "v")?, need(r.kappa, "kappa")?);
            let cfg = DiffusionConfig::new(r.dt.unwrap_or(1e-2), r.seed);
            if decompose {
                let t = need(r.t, "t")?;
                let right = 10.0 * 3.0 / kappa * t.floor().ln();
                let env = r.environment((-t.floor(), v + right))?;
                let valleys = decompose_valleys(&env, t, v)?;
                emit(out, &decompose_hitting(&env, &valleys, &cfg)?)?;
            } else {
                let env = r.environment((-100.0f64.max(4.0 * v), v + 50.0))?;
                emit(out, &hit(&env, v, &cfg)?)?;
            }
        }
        Command::TailAnnealed { params, event, method, numerics } => {
            let r = params.resolve()?;
            let kappa = need(r.kappa, "kappa")?;
            let n = need(r.n, "n")?;
            if r.u.is_empty() {
                return usage("missing required parameter 'u'");
            }
            let event = match event {
                AnnealedKind::SpeedupX => AnnealedEvent::SpeedupX,
                AnnealedKind::SpeedupSupX => AnnealedEvent::SpeedupSupX,
                AnnealedKind::SlowdownX => AnnealedEvent::SlowdownX,
                AnnealedKind::SpeedupH => AnnealedEvent::SpeedupH { v: need(r.v, "v")? },
                AnnealedKind::SlowdownH => AnnealedEvent::SlowdownH { v: need(r.v, "v")? },
            };
            let t = if event.name().ends_with("_H") { r.t.unwrap_or(0.0) } else { need(r.t, "t")? };
            let method = match method {
                Method::Direct => AnnealedMethod::Direct,
                Method::Representation => AnnealedMethod::Representation,
            };
            let estimates = tails::estimate_tail_annealed_grid(kappa, t, &r.u, event, n, r.seed, &r.tail_options(&numerics, method))?;
            for e in &estimates {
                if let Some(w) = &e.regime_warning {
                    let _ = writeln!(err, "warning: {w}");
                }
            }
            if let Some(path) = &r.out {
                write_file(path, &estimates_csv(&estimates))?;
            }
            emit(out, &estimates)?;
        }
        Command::TailQuenched { params, event, numerics } => {
            let r = params.resolve()?;
            let (kappa, t, n) = (need(r.kappa, "kappa")?, need(r.t, "t")?, need(r.n, "n")?);
            let (event, param) = match event {
                QuenchedKind::Speedup => (QuenchedEvent::Speedup, need(r.u.first().copied(), "u")?),
                QuenchedKind::SlowdownH => (QuenchedEvent::SlowdownH, need(r.nu, "nu")?),
                QuenchedKind::SlowdownX => (QuenchedEvent::SlowdownX, need(r.nu, "nu")?),
            };
            let opts = r.tail_options(&numerics, AnnealedMethod::Direct);
            let e = tails::estimate_tail_quenched(r.env_seed(), kappa, t, param, event, n, r.seed, &opts)?;
            if let Some(w) = &e.regime_warning {
                let _ = writeln!(err, "warning: {w}");
            }
            if let Some(path) = &r.out {
                write_file(path, &estimates_csv(std::slice::from_ref(&e)))?;
            }
            emit(out, &e)?;
        }
        Command::Fit { input, mode, params } => {
            params.resolve()?;
            let points = read_points(&input, mode)?;
            let mode = match mode {
                Mode::LogVsLog => FitMode::LogVsLog,
                Mode::LoglogVsLog => FitMode::LoglogVsLog,
                Mode::PowerLaw => FitMode::PowerLaw,
            };
            let fit = tails::fit_exponent(&points, mode)?;
            for (a, p) in &fit.rejected {
                let _ = writeln!(err, "warning: rejected point ({a}, {p}): p must lie in (0, 1)");
            }
            emit(out, &fit)?;
        }
        Command::Constants(p) => {
            let r = p.resolve()?;
            emit(out, &tails::constants(need(r.kappa, "kappa")?)?)?;
        }
        Command::Verify { suite, params } => {
            let r = params.resolve()?;
            let suite: Suite = suite.parse()?;
            let checks = run_suite(suite, r.seed)?;
            for c in &checks {
                writeln!(out, "{}", c.line()).map_err(CliError::from)?;
            }
            return Ok(checks.iter().all(|c| c.pass));
        }
    }
    Ok(true)
}

/// Parse `argv` (program name first), run, and return the exit code,
/// writing results to `out` and diagnostics to `err`.
pub fn cli_main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match run(cli, out, err) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Closed) => 0,
    }
}

pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
