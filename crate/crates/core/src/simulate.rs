//! Trajectory generation: exact Gaussian transitions and Euler–Maruyama.
//!
//! Randomness comes from ChaCha8 seeded with the run seed; replica `k` of an
//! ensemble uses stream `k` of that generator, so `simulate` is replica 0 and
//! results do not depend on how replicas are scheduled across threads.
//! Normal draws use the Ziggurat sampler from `rand_distr`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, from_rows, max_abs, psd_factor, solve_discrete_lyapunov, spectral_norm, sym_eigenvalues, sym_part, Matrix};
use crate::model::OuModel;

/// A uniformly sampled path: `n + 1` states of dimension `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub seed: u64,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, seed: u64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!("{} values for dimension {dim}", data.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("dt = {dt} must be positive and finite")));
        }
        if data.len() / dim < 2 {
            return Err(Error::TooShort("a trajectory needs at least two samples".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("non-finite state in trajectory".into()));
        }
        Ok(Trajectory { dt, t0, seed, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of increments `n`.
    pub fn n_steps(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    /// Total time `T = n·dt`.
    pub fn duration(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.data
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Sub-path over increments `start..end` (states `start..=end`).
    pub fn segment(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end > self.n_steps() {
            return Err(Error::TooShort(format!("segment {start}..{end} of {} steps", self.n_steps())));
        }
        Trajectory::new(
            self.dt,
            self.time(start),
            self.seed,
            self.dim,
            self.data[start * self.dim..(end + 1) * self.dim].to_vec(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Exact,
    Euler,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Init {
    #[default]
    Stationary,
    Point { x0: Vec<f64> },
    Gaussian { cov: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub scheme: Scheme,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: usize, seed: u64) -> Self {
        SimConfig { scheme: Scheme::Exact, dt, n_steps, init: Init::Stationary, seed }
    }

    pub fn euler(mut self) -> Self {
        self.scheme = Scheme::Euler;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

/// `Φ = exp(−A·dt)` and the one-step noise covariance `Q = Σ* − ΦΣ*Φᵀ`.
pub fn exact_step_kernel(model: &OuModel, dt: f64) -> Result<(Matrix, Matrix)> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be nonnegative and finite")));
    }
    let sigma = model.steady_state()?.sigma;
    exact_kernel_with(model, &sigma, dt)
}

fn exact_kernel_with(model: &OuModel, sigma: &Matrix, dt: f64) -> Result<(Matrix, Matrix)> {
    let phi = expm(&(model.a() * -dt))?;
    let q = sym_part(&(sigma - &phi * sigma * phi.transpose()));
    let lo = sym_eigenvalues(&q)[0];
    if lo < -1e-12 * max_abs(sigma) {
        return Err(Error::NumericalFailure(format!("one-step covariance has eigenvalue {lo:e}")));
    }
    Ok((phi, q))
}

/// Stationary covariance of the Euler chain `X' = (I − A dt)X + G√dt ξ`.
pub fn euler_stationary_covariance(model: &OuModel, dt: f64) -> Result<Matrix> {
    let d = model.dim();
    let f = Matrix::identity(d, d) - model.a() * dt;
    Ok(sym_part(&solve_discrete_lyapunov(&f, &(model.d() * dt))?))
}

/// Precomputed one-step map `X' = F X + L ξ` plus the initial-state law.
struct Stepper {
    dim: usize,
    f: Vec<f64>,
    l: Vec<f64>,
    init_mean: Vec<f64>,
    init_factor: Option<Vec<f64>>,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

impl Stepper {
    fn new(model: &OuModel, cfg: &SimConfig) -> Result<Self> {
        let d = model.dim();
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", cfg.dt)));
        }
        if cfg.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        let needs_sigma = cfg.scheme == Scheme::Exact || cfg.init == Init::Stationary;
        let sigma = if needs_sigma { Some(model.steady_state()?.sigma) } else { None };
        let (f, l) = match cfg.scheme {
            Scheme::Exact => {
                let (phi, q) = exact_kernel_with(model, sigma.as_ref().unwrap(), cfg.dt)?;
                (phi, psd_factor(&q))
            }
            Scheme::Euler => {
                let stiff = cfg.dt * spectral_norm(model.a());
                if stiff >= 0.5 {
                    return Err(Error::UnstableStep(stiff));
                }
                (Matrix::identity(d, d) - model.a() * cfg.dt, model.g() * cfg.dt.sqrt())
            }
        };
        let (init_mean, init_factor) = match &cfg.init {
            Init::Stationary => (vec![0.0; d], Some(row_major(&psd_factor(sigma.as_ref().unwrap())))),
            Init::Point { x0 } => {
                if x0.len() != d || x0.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInit(format!("x0 must be {d} finite values")));
                }
                (x0.clone(), None)
            }
            Init::Gaussian { cov } => {
                let c = from_rows(cov).map_err(|e| Error::InvalidInit(e.to_string()))?;
                if c.nrows() != d || c.ncols() != d {
                    return Err(Error::InvalidInit(format!("initial covariance must be {d}x{d}")));
                }
                if max_abs(&(&c - c.transpose())) > 1e-12 * max_abs(&c) {
                    return Err(Error::InvalidInit("initial covariance is not symmetric".into()));
                }
                if sym_eigenvalues(&c)[0] < -1e-12 * max_abs(&c) {
                    return Err(Error::InvalidInit("initial covariance is not positive semidefinite".into()));
                }
                (vec![0.0; d], Some(row_major(&psd_factor(&c))))
            }
        };
        Ok(Stepper { dim: d, f: row_major(&f), l: row_major(&l), init_mean, init_factor })
    }

    fn run(&self, cfg: &SimConfig, replica: u64) -> Result<Trajectory> {
        let d = self.dim;
        let n = cfg.n_steps;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(replica);
        let mut data = vec![0.0; (n + 1) * d];
        let mut xi = vec![0.0; d];
        let fill = |rng: &mut ChaCha8Rng, xi: &mut [f64]| {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        };
        data[..d].copy_from_slice(&self.init_mean);
        if let Some(fac) = &self.init_factor {
            fill(&mut rng, &mut xi);
            for i in 0..d {
                data[i] += (0..d).map(|j| fac[i * d + j] * xi[j]).sum::<f64>();
            }
        }
        for k in 0..n {
            fill(&mut rng, &mut xi);
            let (head, tail) = data.split_at_mut((k + 1) * d);
            let x = &head[k * d..];
            let y = &mut tail[..d];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += self.f[i * d + j] * x[j] + self.l[i * d + j] * xi[j];
                }
                y[i] = acc;
            }
        }
        Trajectory::new(cfg.dt, 0.0, cfg.seed, d, data)
    }
}

/// One trajectory; identical to replica 0 of [`ensemble`].
pub fn simulate(model: &OuModel, cfg: &SimConfig) -> Result<Trajectory> {
    Stepper::new(model, cfg)?.run(cfg, 0)
}

/// Replica `replica` of the ensemble defined by `cfg`.
pub fn simulate_replica(model: &OuModel, cfg: &SimConfig, replica: u64) -> Result<Trajectory> {
    Stepper::new(model, cfg)?.run(cfg, replica)
}

/// `n_traj` independent trajectories, replica `k` drawn from stream `k`.
pub fn ensemble(model: &OuModel, cfg: &SimConfig, n_traj: usize) -> Result<Vec<Trajectory>> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    let stepper = Stepper::new(model, cfg)?;
    (0..n_traj as u64).into_par_iter().map(|k| stepper.run(cfg, k)).collect()
}

/// Write `t,x1,...,xd` rows with 17 significant digits.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let d = traj.dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("x{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for k in 0..=traj.n_steps() {
        write!(w, "{:.16e}", traj.time(k))?;
        for x in traj.state(k) {
            write!(w, ",{x:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trajectory CSV. The step is `t₁ − t₀`; every other step must
/// agree to `1e-9` relative (plus the rounding of the printed times).
pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1..].iter().enumerate().any(|(i, c)| *c != format!("x{}", i + 1)) {
        return Err(Error::Parse(format!("bad header {header:?}; expected t,x1,...,xd")));
    }
    let d = cols.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            let s = s.ok_or_else(|| Error::Parse(format!("row {}: too few fields", lineno + 2)))?;
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))
        };
        times.push(parse(fields.next())?);
        for _ in 0..d {
            data.push(parse(fields.next())?);
        }
        if fields.next().is_some() {
            return Err(Error::Parse(format!("row {}: too many fields", lineno + 2)));
        }
    }
    if times.len() < 2 {
        return Err(Error::TooShort("trajectory CSV needs at least two rows".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Parse(format!("time step {dt} is not positive")));
    }
    for (k, w) in times.windows(2).enumerate() {
        let tol = 1e-9 * dt + 4.0 * f64::EPSILON * w[1].abs().max(w[0].abs());
        if ((w[1] - w[0]) - dt).abs() > tol {
            return Err(Error::Parse(format!("non-uniform time step at row {}", k + 3)));
        }
    }
    Trajectory::new(dt, times[0], 0, d, data)
}

pub fn write_csv_path(traj: &Trajectory, path: &std::path::Path) -> Result<()> {
    write_csv(traj, std::fs::File::create(path)?)
}

pub fn read_csv_path(path: &std::path::Path) -> Result<Trajectory> {
    read_csv(std::fs::File::open(path)?)
}
