//! Command-line front end. `run` parses arguments, dispatches and maps
//! library errors onto exit codes: 2 for bad input, 3 for numerical
//! failures, 4 for trajectories too short for the requested analysis.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    area_rate, area_rate_entry, observable_rate_with, two_stage_entropy, winding_rate, Discretization,
    LinearObservable, RateOptions,
};
use crate::hypotest::{
    convergence_bands, detailed_balance_test, write_bands_csv, write_traces_csv, BandStatistic, BootstrapOptions,
    TestMethod, TestOptions, TestStatistic,
};
use crate::linalg::{from_rows, to_rows, Matrix, Vector};
use crate::model::OuModel;
use crate::simulate::{read_csv_path, simulate, write_csv_path, SimConfig, Trajectory};
use crate::twodim::{
    covariance_explicit, ellipse_geometry, ellipse_points, entropy_production, linspace, steady_ellipse_matrix,
    sweep, to_model, StandardParams2D,
};

/// Environment variable giving the default worker-thread count.
pub const THREADS_ENV: &str = "OUAREA_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ouarea", version, about = "Simulate OU processes and measure their departure from detailed balance")]
struct Cli {
    /// Worker threads (default: $OUAREA_THREADS, else all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trajectory from a run config and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate a production rate from a trajectory CSV.
    Estimate {
        #[arg(value_enum)]
        kind: EstimateKind,
        #[command(flatten)]
        common: EstimateArgs,
    },
    /// Test the null hypothesis of detailed balance on a trajectory CSV.
    Test {
        #[arg(long)]
        traj: PathBuf,
        /// block_bootstrap or plugin_z.
        #[arg(long, default_value = "block_bootstrap")]
        method: TestMethod,
        /// entropy or alpha_norm.
        #[arg(long, default_value = "entropy")]
        statistic: TestStatistic,
        #[arg(long, default_value_t = 500)]
        n_boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        split: f64,
        /// Run config whose model supplies the plugin_z variance.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form geometry of the canonical 2-D process.
    Geometry(GeometryArgs),
    /// Write every CSV needed to re-plot one figure.
    Figures {
        which: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Figure parameters; the built-in defaults match configs/figures.json.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimateKind {
    Area,
    Observable,
    Entropy,
    Winding,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    traj: PathBuf,
    /// Bootstrap replicates; 0 skips the standard error for `area`.
    #[arg(long, default_value_t = 500)]
    n_boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    block_len: Option<usize>,
    /// Coordinate plane for `area`, 1-based, e.g. `1,2`.
    #[arg(long, default_value = "1,2")]
    plane: String,
    /// Two-stage split for `entropy`.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    /// JSON `{"M": [[...]], "v": [...]}` for `observable`.
    #[arg(long)]
    observable: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ito")]
    discretization: DiscretizationArg,
    /// Run config; with `observable` its model gives a plugin standard error.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DiscretizationArg {
    Ito,
    Midpoint,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda_bar: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, conflicts_with = "omega_sweep", allow_negative_numbers = true)]
    omega: Option<f64>,
    /// `LO:HI:N`, N evenly spaced values of omega.
    #[arg(long, allow_hyphen_values = true)]
    omega_sweep: Option<String>,
    /// Points per ellipse.
    #[arg(long, default_value_t = 400)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Model and simulation settings. Exactly one of `model` (matrix form) and
/// `standard` (canonical 2-D parameters) must be given.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<MatrixModel>,
    #[serde(default)]
    pub standard: Option<StandardParams2D>,
    pub sim: SimConfig,
}

/// Unvalidated `{"A": ..., "G": ...}`; validation happens in [`RunConfig::build_model`]
/// so an unstable drift surfaces as a numerical error, not a parse error.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixModel {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        match (&cfg.model, &cfg.standard) {
            (Some(_), Some(_)) => Err(Error::Parse("config: give either \"model\" or \"standard\", not both".into())),
            (None, None) => Err(Error::Parse("config: one of \"model\" or \"standard\" is required".into())),
            _ => Ok(cfg),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build_model(&self) -> Result<OuModel> {
        match (&self.model, &self.standard) {
            (Some(m), None) => OuModel::new(from_rows(&m.a)?, from_rows(&m.g)?),
            (None, Some(p)) => to_model(p),
            _ => unreachable!("checked when parsed"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FigureConfig {
    pub standard: StandardParams2D,
    pub dt: f64,
    pub fig1: Fig1Config,
    pub fig2: Fig2Config,
    pub fig3: Fig3Config,
    pub fig4: Fig4Config,
}

/// Velocity field on a square grid and one trajectory with its swept area.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    pub duration: f64,
    pub grid: usize,
    pub extent: f64,
}

/// Convergence bands of `α̂₁₂` over a log-spaced grid of horizons.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2Config {
    pub n_traj: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_grid: usize,
}

/// Stationary density contours for several `ω` at fixed `λ̄, μ`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Config {
    pub omegas: Vec<f64>,
    /// Values `c` of `½xᵀΣ*⁻¹x` traced as contours.
    pub levels: Vec<f64>,
    pub points: usize,
}

/// Inner, outer and stationary ellipses with their contact points.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub omegas: Vec<f64>,
    pub points: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            standard: StandardParams2D { lambda_bar: 1.0, mu: 0.5, omega: 1.0 },
            dt: 1e-3,
            fig1: Fig1Config::default(),
            fig2: Fig2Config::default(),
            fig3: Fig3Config::default(),
            fig4: Fig4Config::default(),
        }
    }
}

impl Default for Fig1Config {
    fn default() -> Self {
        Fig1Config { duration: 20.0, grid: 21, extent: 3.0 }
    }
}

impl Default for Fig2Config {
    fn default() -> Self {
        Fig2Config { n_traj: 60, t_min: 1.0, t_max: 1000.0, n_grid: 31 }
    }
}

impl Default for Fig3Config {
    fn default() -> Self {
        Fig3Config { omegas: vec![0.0, 0.5, 1.0, 2.0, 4.0], levels: vec![0.25, 0.5, 1.0, 2.0], points: 400 }
    }
}

impl Default for Fig4Config {
    fn default() -> Self {
        Fig4Config { omegas: vec![0.0, 0.5, 1.0, 2.0], points: 400 }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TooShort(_) => 4,
        Error::UnstableDrift { .. }
        | Error::SingularNoise { .. }
        | Error::NumericalFailure(_)
        | Error::UnstableStep(_)
        | Error::SingularEstimate(_)
        | Error::ZeroObservable
        | Error::OriginHit(_)
        | Error::ZeroRadius(_)
        | Error::EmptySample => 3,
        Error::DimensionMismatch(_)
        | Error::InvalidParams(_)
        | Error::InvalidInit(_)
        | Error::InvalidBlock { .. }
        | Error::InvalidArgument(_)
        | Error::Parse(_)
        | Error::Io(_) => 2,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={s:?} is not a thread count"))),
        _ => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match thread_count(cli.threads)? {
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| execute(cli.command)),
        None => execute(cli.command),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Estimate { kind, common } => cmd_estimate(kind, &common),
        Command::Test { traj, method, statistic, n_boot, seed, block_len, split, config, out } => {
            let model_hint = config.map(|c| RunConfig::load(&c)?.build_model()).transpose()?;
            let opts = TestOptions {
                method,
                statistic,
                bootstrap: BootstrapOptions { n_boot, block_len, seed },
                split,
                model_hint,
            };
            let tr = read_csv_path(&traj)?;
            emit_json(&detailed_balance_test(&tr, &opts)?, out.as_deref())
        }
        Command::Geometry(args) => cmd_geometry(&args),
        Command::Figures { which, seed, out_dir, config } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("figure config: {e}")))?
                }
                None => FigureConfig::default(),
            };
            cmd_figures(&which, seed, &out_dir, &cfg)
        }
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = cfg.build_model()?;
    let mut sim = cfg.sim.clone();
    if let Some(s) = seed {
        sim.seed = s;
    }
    let tr = simulate(&model, &sim)?;
    write_csv_path(&tr, out)
}

#[derive(Serialize)]
struct AreaReport {
    alpha: Vec<Vec<f64>>,
    plane: [usize; 2],
    value: f64,
    std_error: Option<f64>,
    #[serde(rename = "T")]
    t: f64,
    n_steps: usize,
    flags: Vec<String>,
}

fn parse_plane(s: &str, d: usize) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("plane {s:?}: expected two distinct indices in 1..={d}, like 1,2"));
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    match parts[..] {
        [i, j] if i >= 1 && j >= 1 && i <= d && j <= d && i != j => Ok((i - 1, j - 1)),
        _ => Err(bad()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservableJson {
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    #[serde(default)]
    v: Option<Vec<f64>>,
}

fn load_observable(path: &Path, d: usize) -> Result<LinearObservable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let j: ObservableJson = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("observable: {e}")))?;
    let m = from_rows(&j.m)?;
    let v = Vector::from_vec(j.v.unwrap_or_else(|| vec![0.0; d]));
    LinearObservable::new(m, v)
}

fn cmd_estimate(kind: EstimateKind, a: &EstimateArgs) -> Result<()> {
    let tr = read_csv_path(&a.traj)?;
    let boot = BootstrapOptions { n_boot: a.n_boot, block_len: a.block_len, seed: a.seed };
    let out = a.out.as_deref();
    match kind {
        EstimateKind::Area => {
            let (i, j) = parse_plane(&a.plane, tr.dim())?;
            let alpha = area_rate(&tr)?;
            let (std_error, flags) = if a.n_boot == 0 {
                (None, vec![])
            } else {
                let e = area_rate_entry(&tr, i, j, &boot)?;
                (Some(e.std_error), e.flags)
            };
            let report = AreaReport {
                alpha: to_rows(&alpha),
                plane: [i + 1, j + 1],
                value: alpha[(i, j)],
                std_error,
                t: tr.duration(),
                n_steps: tr.n_steps(),
                flags,
            };
            emit_json(&report, out)
        }
        EstimateKind::Observable => {
            let path = a
                .observable
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("estimate observable needs --observable".into()))?;
            let obs = load_observable(path, tr.dim())?;
            let model = a.config.as_deref().map(|c| RunConfig::load(c)?.build_model()).transpose()?;
            let opts = RateOptions {
                discretization: match a.discretization {
                    DiscretizationArg::Ito => Discretization::Ito,
                    DiscretizationArg::Midpoint => Discretization::Midpoint,
                },
                bootstrap: boot,
                model: model.as_ref(),
            };
            emit_json(&observable_rate_with(&tr, &obs, &opts)?, out)
        }
        EstimateKind::Entropy => emit_json(&two_stage_entropy(&tr, a.split, &boot)?, out),
        EstimateKind::Winding => emit_json(&winding_rate(&tr, &boot)?, out),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    Ok(std::io::BufWriter::new(File::create(path)?))
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("--omega-sweep {s:?}: expected LO:HI:N"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(bad());
    }
    Ok(linspace(lo, hi, n))
}

#[derive(Serialize)]
struct GeometrySummary {
    lambda_bar: f64,
    mu: f64,
    omega: Option<f64>,
    degenerate: bool,
    files: Vec<String>,
}

fn write_sweep(path: &Path, lambda_bar: f64, mu: f64, omegas: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "omega,tilt_rad,s_max,s_min,det,q")?;
    for r in sweep(lambda_bar, mu, omegas)? {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.omega, r.tilt_rad, r.s_max, r.s_min, r.det, r.q)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `omega,x,y,curve` for the inner, outer and stationary ellipses.
fn write_ellipse_rows<W: Write>(w: &mut W, p: &StandardParams2D, points: usize) -> Result<()> {
    let g = ellipse_geometry(p)?;
    let steady = steady_ellipse_matrix(&covariance_explicit(p)?)?;
    for (name, m) in [("inner", &g.inner), ("outer", &g.outer), ("steady", &steady)] {
        for [x, y] in ellipse_points(m, points) {
            writeln!(w, "{:.16e},{x:.16e},{y:.16e},{name}", p.omega)?;
        }
    }
    Ok(())
}

/// Rows `omega,point,x,y` for the two contact points of the stationary ellipse.
fn write_contact_rows<W: Write>(w: &mut W, p: &StandardParams2D) -> Result<()> {
    let g = ellipse_geometry(p)?;
    let steady = steady_ellipse_matrix(&covariance_explicit(p)?)?;
    for (name, dir) in [("inner", &g.tangency_dir), ("outer", &g.outer_tangency_dir)] {
        let z = dir / steady.dot(&(dir * dir.transpose())).sqrt();
        writeln!(w, "{:.16e},{name},{:.16e},{:.16e}", p.omega, z[0], z[1])?;
    }
    Ok(())
}

fn cmd_geometry(a: &GeometryArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    if a.points < 3 {
        return Err(Error::InvalidArgument("--points must be at least 3".into()));
    }
    let degenerate = a.mu == 0.0;
    let mut files = vec![];
    match (&a.omega_sweep, a.omega) {
        (Some(spec), _) => {
            let omegas = parse_sweep(spec)?;
            StandardParams2D::new(a.lambda_bar, a.mu, omegas[0])?;
            write_sweep(&a.out.join("sweep.csv"), a.lambda_bar, a.mu, &omegas)?;
            files.push("sweep.csv".to_string());
        }
        (None, omega) => {
            let p = StandardParams2D::new(a.lambda_bar, a.mu, omega.unwrap_or(0.0))?;
            let s = covariance_explicit(&p)?;
            let g = ellipse_geometry(&p)?;
            let mut w = create(&a.out.join("summary.csv"))?;
            writeln!(w, "lambda_bar,mu,omega,tilt_rad,s_max,s_min,det,q,sigma11,sigma12,sigma22,degenerate")?;
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                p.lambda_bar,
                p.mu,
                p.omega,
                g.tilt,
                g.s_plus,
                g.s_minus,
                s.determinant(),
                entropy_production(&p)?,
                s[(0, 0)],
                s[(0, 1)],
                s[(1, 1)],
                g.degenerate
            )?;
            w.flush()?;
            let mut w = create(&a.out.join("ellipses.csv"))?;
            writeln!(w, "omega,x,y,curve")?;
            write_ellipse_rows(&mut w, &p, a.points)?;
            w.flush()?;
            let mut w = create(&a.out.join("contacts.csv"))?;
            writeln!(w, "omega,point,x,y")?;
            write_contact_rows(&mut w, &p)?;
            w.flush()?;
            files.extend(["summary.csv", "ellipses.csv", "contacts.csv"].map(String::from));
        }
    }
    if degenerate {
        eprintln!("warning: mu = 0, the stationary ellipse is a circle and the tilt column is not meaningful");
    }
    emit_json(&GeometrySummary { lambda_bar: a.lambda_bar, mu: a.mu, omega: a.omega, degenerate, files }, None)
}

fn cmd_figures(which: &str, seed: u64, dir: &Path, cfg: &FigureConfig) -> Result<()> {
    cfg.standard.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {} must be positive", cfg.dt)));
    }
    let files = match which {
        "fig1" => fig1(seed, dir, cfg)?,
        "fig2" => fig2(seed, dir, cfg)?,
        "fig3" => fig3(dir, cfg)?,
        "fig4" => fig4(dir, cfg)?,
        other => return Err(Error::InvalidArgument(format!("unknown figure {other:?}; expected fig1, fig2, fig3 or fig4"))),
    };
    let params = serde_json::json!({ "figure": which, "seed": seed, "config": cfg, "files": files });
    emit_json(&params, Some(&dir.join(format!("{which}_params.json"))))?;
    emit_json(&serde_json::json!({ "figure": which, "out_dir": dir, "files": files }), None)
}

fn fig1(seed: u64, dir: &Path, cfg: &FigureConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let c = &cfg.fig1;
    if c.grid < 2 || !(c.extent > 0.0) {
        return Err(Error::InvalidArgument("fig1 needs grid >= 2 and extent > 0".into()));
    }
    let model = to_model(&cfg.standard)?;
    let state = model.steady_state()?;
    let norm = 1.0 / (std::f64::consts::TAU * state.sigma.determinant().sqrt());
    let mut w = create(&dir.join("fig1_velocity.csv"))?;
    writeln!(w, "x,y,vx,vy,density")?;
    let axis = linspace(-c.extent, c.extent, c.grid);
    for &y in &axis {
        for &x in &axis {
            let z = Vector::from_vec(vec![x, y]);
            let v = &state.velocity_map * &z;
            let dens = norm * (-0.5 * z.dot(&(&state.sigma_inv * &z))).exp();
            writeln!(w, "{x:.16e},{y:.16e},{:.16e},{:.16e},{dens:.16e}", v[0], v[1])?;
        }
    }
    w.flush()?;
    let n = (c.duration / cfg.dt).round() as usize;
    let tr = simulate(&model, &SimConfig::new(cfg.dt, n.max(1), seed))?;
    write_area_trace(&dir.join("fig1_trajectory.csv"), &tr)?;
    Ok(vec!["fig1_velocity.csv".into(), "fig1_trajectory.csv".into()])
}

/// `t,x1,x2,area`: the path and the signed area it has swept so far.
fn write_area_trace(path: &Path, tr: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,x1,x2,area")?;
    let mut area = 0.0;
    for k in 0..=tr.n_steps() {
        if k > 0 {
            let (x, y) = (tr.state(k - 1), tr.state(k));
            area += (-0.5 * x[1]) * (y[0] - x[0]) + (0.5 * x[0]) * (y[1] - x[1]);
        }
        let s = tr.state(k);
        writeln!(w, "{:.16e},{:.16e},{:.16e},{area:.16e}", tr.time(k), s[0], s[1])?;
    }
    w.flush()?;
    Ok(())
}

fn fig2(seed: u64, dir: &Path, cfg: &FigureConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let c = &cfg.fig2;
    if !(c.t_min > 0.0 && c.t_max >= c.t_min) || c.n_grid == 0 {
        return Err(Error::InvalidArgument("fig2 needs 0 < t_min <= t_max and n_grid >= 1".into()));
    }
    let grid: Vec<f64> = linspace(c.t_min.log10(), c.t_max.log10(), c.n_grid).into_iter().map(|e| 10f64.powf(e)).collect();
    let model = to_model(&cfg.standard)?;
    let table = convergence_bands(&model, c.n_traj, &grid, &SimConfig::new(cfg.dt, 1, seed), BandStatistic::Entry(0, 1))?;
    let mut w = create(&dir.join("fig2_bands.csv"))?;
    write_bands_csv(&table, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("fig2_traces.csv"))?;
    write_traces_csv(&table, &mut w)?;
    w.flush()?;
    Ok(vec!["fig2_bands.csv".into(), "fig2_traces.csv".into()])
}

fn fig3(dir: &Path, cfg: &FigureConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let c = &cfg.fig3;
    if c.levels.iter().any(|l| !(*l > 0.0)) || c.points < 3 {
        return Err(Error::InvalidArgument("fig3 needs positive levels and at least 3 points".into()));
    }
    let (l, mu) = (cfg.standard.lambda_bar, cfg.standard.mu);
    let mut w = create(&dir.join("fig3_contours.csv"))?;
    writeln!(w, "omega,level,x,y")?;
    for &omega in &c.omegas {
        let p = StandardParams2D::new(l, mu, omega)?;
        let steady: Matrix = steady_ellipse_matrix(&covariance_explicit(&p)?)?;
        for &level in &c.levels {
            for [x, y] in ellipse_points(&(&steady / level), c.points) {
                writeln!(w, "{omega:.16e},{level:.16e},{x:.16e},{y:.16e}")?;
            }
        }
    }
    w.flush()?;
    write_sweep(&dir.join("fig3_sweep.csv"), l, mu, &c.omegas)?;
    Ok(vec!["fig3_contours.csv".into(), "fig3_sweep.csv".into()])
}

fn fig4(dir: &Path, cfg: &FigureConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let c = &cfg.fig4;
    if c.points < 3 {
        return Err(Error::InvalidArgument("fig4 needs at least 3 points".into()));
    }
    let (l, mu) = (cfg.standard.lambda_bar, cfg.standard.mu);
    let params: Vec<StandardParams2D> = c.omegas.iter().map(|&w| StandardParams2D::new(l, mu, w)).collect::<Result<_>>()?;
    let mut w = create(&dir.join("fig4_ellipses.csv"))?;
    writeln!(w, "omega,x,y,curve")?;
    for p in &params {
        write_ellipse_rows(&mut w, p, c.points)?;
    }
    w.flush()?;
    let mut w = create(&dir.join("fig4_tangency.csv"))?;
    writeln!(w, "omega,point,x,y")?;
    for p in &params {
        write_contact_rows(&mut w, p)?;
    }
    w.flush()?;
    Ok(vec!["fig4_ellipses.csv".into(), "fig4_tangency.csv".into()])
}
