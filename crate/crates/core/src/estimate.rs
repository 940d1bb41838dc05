//! Estimators computed from trajectory data.
//!
//! A linear observable `b(x) = Mx + v` accumulates `Σ_k b(X_k)·ΔX_k`
//! (left endpoint) or `Σ_k b(X̄_k)·ΔX_k` with `X̄_k` the step midpoint.
//! With this convention the long-run rate is `⟨M_a, α*ᵀ⟩ = −⟨M_a, α*⟩`,
//! and the area rate `α̂_ij` is the observable with `M = ½R^(j,i)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypotest::{bootstrap_sums, BootstrapOptions};
use crate::linalg::{
    frobenius_inner, skew_part, solve_continuous_lyapunov, sym_eigenvalues, sym_part, sym_sqrt, Matrix,
    Vector,
};
use crate::model::{OuModel, SteadyState};
use crate::simulate::Trajectory;

/// The field `b(x) = Mx + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearObservable {
    pub m: Matrix,
    pub v: Vector,
}

impl LinearObservable {
    pub fn new(m: Matrix, v: Vector) -> Result<Self> {
        if m.nrows() != m.ncols() || v.len() != m.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "M is {}x{}, v has length {}",
                m.nrows(),
                m.ncols(),
                v.len()
            )));
        }
        if m.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("observable has non-finite entries".into()));
        }
        Ok(LinearObservable { m, v })
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        let d = m.nrows();
        Self::new(m, Vector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Discretization {
    /// Left endpoint.
    #[default]
    Ito,
    /// Step midpoint; symmetric `M` then telescopes exactly.
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub value: f64,
    pub std_error: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub n_steps: usize,
    pub method: String,
    pub flags: Vec<String>,
}

/// How `observable_rate` attaches a standard error.
#[derive(Clone, Debug)]
pub struct RateOptions<'a> {
    pub discretization: Discretization,
    pub bootstrap: BootstrapOptions,
    /// When set, the standard error is the plugin value under this model
    /// (long-run variance plus the finite-T boundary term).
    pub model: Option<&'a OuModel>,
}

impl Default for RateOptions<'_> {
    fn default() -> Self {
        RateOptions { discretization: Discretization::Ito, bootstrap: BootstrapOptions::default(), model: None }
    }
}

fn require_steps(traj: &Trajectory) -> Result<()> {
    if traj.n_steps() == 0 {
        return Err(Error::TooShort("trajectory has no increments".into()));
    }
    Ok(())
}

/// Per-step contributions of the area sum in plane `(i, j)`.
fn area_terms(traj: &Trajectory, i: usize, j: usize) -> Vec<f64> {
    (0..traj.n_steps())
        .map(|k| {
            let x = traj.state(k);
            let y = traj.state(k + 1);
            let mut s = 0.0;
            s += (-0.5 * x[j]) * (y[i] - x[i]);
            s += (0.5 * x[i]) * (y[j] - x[j]);
            s
        })
        .collect()
}

fn sum(terms: &[f64]) -> f64 {
    terms.iter().fold(0.0, |acc, t| acc + t)
}

/// Empirical area production rate matrix, exactly skew.
pub fn area_rate(traj: &Trajectory) -> Result<Matrix> {
    require_steps(traj)?;
    let d = traj.dim();
    let t = traj.duration();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let a = sum(&area_terms(traj, i, j)) / t;
            out[(i, j)] = a;
            out[(j, i)] = -a;
        }
    }
    Ok(out)
}

/// Area rate in plane `(i, j)` with a block-bootstrap standard error.
pub fn area_rate_entry(traj: &Trajectory, i: usize, j: usize, boot: &BootstrapOptions) -> Result<RateEstimate> {
    require_steps(traj)?;
    if i >= traj.dim() || j >= traj.dim() || i == j {
        return Err(Error::InvalidArgument(format!("plane ({i}, {j}) for dimension {}", traj.dim())));
    }
    let (lo, hi, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
    let terms: Vec<f64> = area_terms(traj, lo, hi).into_iter().map(|x| sign * x).collect();
    rate_from_terms(traj, &terms, boot, "area")
}

/// Per-step contributions `b(X)·ΔX` of a linear observable.
pub fn observable_terms(traj: &Trajectory, obs: &LinearObservable, disc: Discretization) -> Result<Vec<f64>> {
    require_steps(traj)?;
    let d = traj.dim();
    if obs.dim() != d {
        return Err(Error::DimensionMismatch(format!("observable has dimension {}, trajectory {d}", obs.dim())));
    }
    let mut point = vec![0.0; d];
    Ok((0..traj.n_steps())
        .map(|k| {
            let x = traj.state(k);
            let y = traj.state(k + 1);
            match disc {
                Discretization::Ito => point.copy_from_slice(x),
                Discretization::Midpoint => {
                    for a in 0..d {
                        point[a] = 0.5 * (x[a] + y[a]);
                    }
                }
            }
            let mut s = 0.0;
            for a in 0..d {
                let mut b = 0.0;
                for c in 0..d {
                    b += obs.m[(a, c)] * point[c];
                }
                b += obs.v[a];
                s += b * (y[a] - x[a]);
            }
            s
        })
        .collect())
}

fn rate_from_terms(traj: &Trajectory, terms: &[f64], boot: &BootstrapOptions, method: &str) -> Result<RateEstimate> {
    let t = traj.duration();
    let value = sum(terms) / t;
    let block_len = match boot.block_len {
        Some(b) => b,
        None => auto_block_len(traj),
    };
    let sums = bootstrap_sums(terms, boot.n_boot, block_len, boot.seed)?;
    let std_error = std_dev(&sums) / t;
    Ok(RateEstimate {
        value,
        std_error,
        t,
        n_steps: traj.n_steps(),
        method: format!("{method}/block_bootstrap"),
        flags: vec![format!("block_len={block_len}"), format!("n_boot={}", boot.n_boot)],
    })
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `β̂ = (1/T) Σ_k b(X_k)·ΔX_k` with default options (left endpoint, bootstrap SE).
pub fn observable_rate(traj: &Trajectory, obs: &LinearObservable) -> Result<RateEstimate> {
    observable_rate_with(traj, obs, &RateOptions::default())
}

pub fn observable_rate_with(traj: &Trajectory, obs: &LinearObservable, opts: &RateOptions) -> Result<RateEstimate> {
    let terms = observable_terms(traj, obs, opts.discretization)?;
    let tag = match opts.discretization {
        Discretization::Ito => "observable_ito",
        Discretization::Midpoint => "observable_midpoint",
    };
    match opts.model {
        None => rate_from_terms(traj, &terms, &opts.bootstrap, tag),
        Some(model) => {
            let state = model.steady_state()?;
            let t = traj.duration();
            let var = long_run_variance(obs, model, &state)? + 2.0 * boundary_variance(obs, model, &state)? / t;
            Ok(RateEstimate {
                value: sum(&terms) / t,
                std_error: (var / t).sqrt(),
                t,
                n_steps: traj.n_steps(),
                method: format!("{tag}/plugin"),
                flags: vec![],
            })
        }
    }
}

fn check_dims(obs: &LinearObservable, state: &SteadyState) -> Result<()> {
    if obs.dim() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observable has dimension {}, model {}",
            obs.dim(),
            state.dim()
        )));
    }
    Ok(())
}

/// Long-run rate `⟨M_a, α*ᵀ⟩`; independent of `v` and of the symmetric part of `M`.
pub fn expected_rate(obs: &LinearObservable, state: &SteadyState) -> Result<f64> {
    check_dims(obs, state)?;
    Ok(frobenius_inner(&skew_part(&obs.m), &state.alpha.transpose()))
}

/// `‖D^{1/2} M Σ*^{1/2}‖²_F + vᵀDv`. This is `lim T·Var(β̂)` when increments
/// are sampled independently from the steady state; see [`long_run_variance`]
/// for a single contiguous trajectory.
pub fn asymptotic_variance(obs: &LinearObservable, model: &OuModel, state: &SteadyState) -> Result<f64> {
    check_dims(obs, state)?;
    let dv = (sym_sqrt(model.d()) * &obs.m * sym_sqrt(&state.sigma)).norm_squared();
    Ok(dv + obs.v.dot(&(model.d() * &obs.v)))
}

/// `lim T·Var(β̂)` along one contiguous stationary trajectory:
/// `‖D^{1/2}(M_a + 2H)Σ*^{1/2}‖²_F` where `AᵀH + HA = −sym(M_aᵀA)`.
/// The symmetric part of `M` and `v` only add bounded boundary terms.
pub fn long_run_variance(obs: &LinearObservable, model: &OuModel, state: &SteadyState) -> Result<f64> {
    check_dims(obs, state)?;
    let ma = skew_part(&obs.m);
    let h = poisson_quadratic(&ma, model)?;
    Ok((sym_sqrt(model.d()) * (&ma + h * 2.0) * sym_sqrt(&state.sigma)).norm_squared())
}

fn poisson_quadratic(ma: &Matrix, model: &OuModel) -> Result<Matrix> {
    let k = -sym_part(&(ma.transpose() * model.a()));
    Ok(sym_part(&solve_continuous_lyapunov(&model.a().transpose(), &k)?))
}

/// Stationary variance of the boundary function `b(x) = xᵀ(½M_s − H)x + vᵀx`.
/// For the midpoint estimator `T·β̂` is a martingale plus `b(X_T) − b(X_0)`,
/// so at finite `T` the variance is about `long_run/T + 2·boundary/T²`.
pub fn boundary_variance(obs: &LinearObservable, model: &OuModel, state: &SteadyState) -> Result<f64> {
    check_dims(obs, state)?;
    let h = poisson_quadratic(&skew_part(&obs.m), model)?;
    let bs = sym_part(&obs.m) * 0.5 - h;
    let bsig = &bs * &state.sigma;
    Ok(2.0 * (&bsig * &bsig).trace() + obs.v.dot(&(&state.sigma * &obs.v)))
}

/// Signal-to-noise ratio `⟨M_a, α*ᵀ⟩ / ‖D^{1/2} M Σ*^{1/2}‖_F`, bounded by `√q`.
pub fn z_ratio(obs: &LinearObservable, model: &OuModel, state: &SteadyState) -> Result<f64> {
    check_dims(obs, state)?;
    let den = (sym_sqrt(model.d()) * &obs.m * sym_sqrt(&state.sigma)).norm();
    if den == 0.0 {
        return Err(Error::ZeroObservable);
    }
    Ok(expected_rate(obs, state)? / den)
}

#[derive(Clone, Debug)]
pub struct OptimalObservable {
    pub observable: LinearObservable,
    /// The model is at equilibrium and the observable is zero.
    pub degenerate: bool,
}

/// `M = D⁻¹α*ᵀΣ*⁻¹`, `v = 0`: the field `D⁻¹v*(x)`, produced at rate `q`.
pub fn optimal_observable(model: &OuModel, state: &SteadyState) -> Result<OptimalObservable> {
    let d = model.dim();
    let scale = (model.a() * &state.sigma).amax();
    if state.alpha.amax() <= 1e-12 * scale {
        return Ok(OptimalObservable {
            observable: LinearObservable::from_matrix(Matrix::zeros(d, d))?,
            degenerate: true,
        });
    }
    let dinv = crate::linalg::spd_inverse(model.d())?;
    let m = dinv * state.alpha.transpose() * &state.sigma_inv;
    Ok(OptimalObservable { observable: LinearObservable::from_matrix(m)?, degenerate: false })
}

/// `D̂ = (1/T) Σ ΔX ΔXᵀ`.
pub fn quadratic_variation(traj: &Trajectory) -> Result<Matrix> {
    require_steps(traj)?;
    let d = traj.dim();
    let mut acc = Matrix::zeros(d, d);
    for k in 0..traj.n_steps() {
        let x = traj.state(k);
        let y = traj.state(k + 1);
        for a in 0..d {
            for b in a..d {
                acc[(a, b)] += (y[a] - x[a]) * (y[b] - x[b]);
            }
        }
    }
    Ok(sym_upper(acc) / traj.duration())
}

fn sym_upper(mut m: Matrix) -> Matrix {
    for a in 0..m.nrows() {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

/// Mean-centered sample covariance of all `n + 1` states.
pub fn sample_covariance(traj: &Trajectory) -> Result<Matrix> {
    let d = traj.dim();
    let n = traj.n_steps() + 1;
    let mut mean = vec![0.0; d];
    for k in 0..n {
        for (a, x) in traj.state(k).iter().enumerate() {
            mean[a] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut acc = Matrix::zeros(d, d);
    for k in 0..n {
        let x = traj.state(k);
        for a in 0..d {
            for b in a..d {
                acc[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    Ok(sym_upper(acc) / (n as f64 - 1.0).max(1.0))
}

/// Invert an estimated SPD matrix, adding a ridge `1e-10·trace/d` when it is
/// nearly singular. Returns the inverse and whether the ridge was needed.
fn regularized_inverse(m: &Matrix, what: &str) -> Result<(Matrix, bool)> {
    let d = m.nrows();
    let tr = m.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::SingularEstimate(format!("{what} has trace {tr}")));
    }
    let mut work = m.clone();
    let mut ridged = false;
    if sym_eigenvalues(m)[0] < 1e-10 * tr {
        work += Matrix::identity(d, d) * (1e-10 * tr / d as f64);
        ridged = true;
    }
    let inv = crate::linalg::spd_inverse(&work).map_err(|_| Error::SingularEstimate(format!("{what} is not invertible")))?;
    Ok((inv, ridged))
}

/// Stage one of the two-stage estimator: the plug-in optimal observable
/// `M̂ = D̂⁻¹α̂ᵀΣ̂⁻¹` and any flags raised while building it.
pub fn plugin_optimal_observable(traj: &Trajectory) -> Result<(LinearObservable, Vec<String>)> {
    let mut flags = vec![];
    let (dinv, r1) = regularized_inverse(&quadratic_variation(traj)?, "diffusion estimate")?;
    let (sinv, r2) = regularized_inverse(&sample_covariance(traj)?, "covariance estimate")?;
    if r1 || r2 {
        flags.push("ridge".to_string());
    }
    let alpha = area_rate(traj)?;
    Ok((LinearObservable::from_matrix(dinv * alpha.transpose() * sinv)?, flags))
}

/// Split point and segment lengths for the two-stage estimator.
pub(crate) fn two_stage_split(traj: &Trajectory, split: f64) -> Result<usize> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::TooShort(format!("split = {split} leaves an empty stage")));
    }
    let n = traj.n_steps();
    let m1 = (split * n as f64).floor() as usize;
    if m1 < 100 || n - m1 < 100 {
        return Err(Error::TooShort(format!(
            "stages of {m1} and {} steps; each needs at least 100",
            n - m1
        )));
    }
    Ok(m1)
}

/// Two-stage entropy production estimate: fit `M̂` on the first `split`
/// fraction of the steps, then measure its rate (midpoint rule) on the rest.
pub fn two_stage_entropy(traj: &Trajectory, split: f64, boot: &BootstrapOptions) -> Result<RateEstimate> {
    let m1 = two_stage_split(traj, split)?;
    let first = traj.segment(0, m1)?;
    let second = traj.segment(m1, traj.n_steps())?;
    let (obs, mut flags) = plugin_optimal_observable(&first)?;
    let terms = observable_terms(&second, &obs, Discretization::Midpoint)?;
    let mut est = rate_from_terms(&second, &terms, boot, "two_stage")?;
    flags.append(&mut est.flags);
    flags.push(format!("split={split}"));
    est.flags = flags;
    Ok(est)
}

/// Angular winding rate `(Θ(T) − Θ(0))/T` of a 2D path. This estimator does
/// not converge in probability; the standard error is diagnostic only.
pub fn winding_rate(traj: &Trajectory, boot: &BootstrapOptions) -> Result<RateEstimate> {
    require_steps(traj)?;
    if traj.dim() != 2 {
        return Err(Error::DimensionMismatch("winding rate needs d = 2".into()));
    }
    for k in 0..=traj.n_steps() {
        let x = traj.state(k);
        if x[0].hypot(x[1]) <= 1e-300 {
            return Err(Error::OriginHit(k));
        }
    }
    let terms: Vec<f64> = (0..traj.n_steps())
        .map(|k| {
            let x = traj.state(k);
            let y = traj.state(k + 1);
            (x[0] * y[1] - x[1] * y[0]).atan2(x[0] * y[0] + x[1] * y[1])
        })
        .collect();
    let mut est = rate_from_terms(traj, &terms, boot, "winding")?;
    est.flags.push("non_convergent".into());
    Ok(est)
}

/// Block length for autocorrelated step sums: at least `⌈n^{1/3}⌉` and ten
/// estimated relaxation times, capped at `n/10`. The relaxation time comes
/// from `Â = (½D̂ + α̂)Σ̂⁻¹` fitted on the same data.
pub fn auto_block_len(traj: &Trajectory) -> usize {
    let n = traj.n_steps();
    let cube = (n as f64).cbrt().ceil() as usize;
    let cap = (n / 10).max(1);
    let tau_steps = relaxation_time(traj).map(|tau| (10.0 * tau / traj.dt).ceil() as usize);
    cube.max(tau_steps.unwrap_or(0)).min(cap).max(1)
}

fn relaxation_time(traj: &Trajectory) -> Option<f64> {
    let dhat = quadratic_variation(traj).ok()?;
    let (sinv, _) = regularized_inverse(&sample_covariance(traj).ok()?, "covariance").ok()?;
    let alpha = area_rate(traj).ok()?;
    let a = (dhat * 0.5 + alpha) * sinv;
    let min_re = a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    (min_re > 0.0 && min_re.is_finite()).then(|| 1.0 / min_re)
}
