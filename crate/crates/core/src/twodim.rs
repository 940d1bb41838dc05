//! Canonical two-dimensional OU processes in the `(λ̄, μ, ω)` parameterization.
//!
//! The canonical process is `dZ = B Z dt + dW` with
//! `B = −Λ − 2λ̄ωR`, `Λ = λ̄·diag(1+μ, 1−μ)`, `R = [[0,1],[−1,0]]`.
//! With this sign the area production matrix is exactly `ωR` and the
//! explicit covariance below solves the Lyapunov equation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_inv_sqrt, Matrix, Vector};
use crate::model::{gaussian_vector, OuModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardParams2D {
    pub lambda_bar: f64,
    pub mu: f64,
    pub omega: f64,
}

impl StandardParams2D {
    pub fn new(lambda_bar: f64, mu: f64, omega: f64) -> Result<Self> {
        let p = StandardParams2D { lambda_bar, mu, omega };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bar > 0.0 && self.lambda_bar.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda_bar = {} must be > 0", self.lambda_bar)));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::InvalidParams(format!("mu = {} must lie in [0, 1)", self.mu)));
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidParams("omega must be finite".into()));
        }
        Ok(())
    }

    fn c(&self) -> f64 {
        1.0 + 4.0 * self.omega * self.omega
    }
}

/// Canonical drift `B`, so that `dZ = B Z dt + dW`.
pub fn drift_matrix(p: &StandardParams2D) -> Result<Matrix> {
    p.validate()?;
    let l = p.lambda_bar;
    let s = 2.0 * l * p.omega;
    Ok(Matrix::from_row_slice(2, 2, &[-l * (1.0 + p.mu), -s, s, -l * (1.0 - p.mu)]))
}

/// The canonical process as an [`OuModel`]: `A = −B`, `G = I`.
pub fn to_model(p: &StandardParams2D) -> Result<OuModel> {
    OuModel::new(-drift_matrix(p)?, Matrix::identity(2, 2))
}

/// Closed-form stationary covariance.
pub fn covariance_explicit(p: &StandardParams2D) -> Result<Matrix> {
    p.validate()?;
    let c = p.c();
    let k = 1.0 / (2.0 * p.lambda_bar * (1.0 - p.mu * p.mu / c));
    let e = p.mu / c;
    let w2 = 2.0 * p.omega;
    Ok(Matrix::from_row_slice(
        2,
        2,
        &[k * (1.0 - e), -k * e * w2, -k * e * w2, k * (1.0 + e)],
    ))
}

/// Tilt of the covariance axes, `½·atan(2ω)`, counter-clockwise from `e₁`.
pub fn tilt(omega: f64) -> f64 {
    0.5 * (2.0 * omega).atan()
}

/// Closed-form `(s_max, s_min, tilt)` of the stationary covariance.
pub fn singular_values(p: &StandardParams2D) -> Result<(f64, f64, f64)> {
    p.validate()?;
    let r = p.mu / p.c().sqrt();
    let base = 1.0 / (2.0 * p.lambda_bar);
    Ok((base / (1.0 - r), base / (1.0 + r), tilt(p.omega)))
}

/// `trace(Σ*⁻¹)`, constant in `ω` and equal to `4λ̄`.
pub fn trace_precision(p: &StandardParams2D) -> Result<f64> {
    p.validate()?;
    Ok(4.0 * p.lambda_bar)
}

/// Closed-form entropy production rate of the canonical process, `4λ̄ω²`.
pub fn entropy_production(p: &StandardParams2D) -> Result<f64> {
    p.validate()?;
    Ok(4.0 * p.lambda_bar * p.omega * p.omega)
}

/// Geometry of the stationary ellipse `{½zᵀΣ*⁻¹z = 1}` and the two
/// `ω`-independent ellipses `{zᵀΛ⁺z = 1}` (inner) and `{zᵀΛ⁻z = 1}` (outer)
/// that bound it.
#[derive(Clone, Debug)]
pub struct EllipseGeometry {
    pub tilt: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    pub inner: Matrix,
    pub outer: Matrix,
    /// Unit vector `∝ [1, 2ω]`; the stationary ellipse touches the inner one here.
    pub tangency_dir: Vector,
    /// Unit vector `∝ [−2ω, 1]`; the stationary ellipse touches the outer one here.
    pub outer_tangency_dir: Vector,
    /// `μ = 0`: all three ellipses coincide with the same circle.
    pub degenerate: bool,
    /// `(max eig(Σ*Λ⁻), min eig(Σ*Λ⁺))`, both `½`.
    pub tangency_eigenvalues: (f64, f64),
    /// `zᵀΛ⁺z − 1` and `zᵀΛ⁻z − 1` at the two contact points.
    pub contact_residuals: (f64, f64),
}

pub fn bounding_matrices(p: &StandardParams2D) -> Result<(Matrix, Matrix)> {
    p.validate()?;
    let l = p.lambda_bar;
    let inner = Matrix::from_diagonal(&Vector::from_vec(vec![l * (1.0 + p.mu), l]));
    let outer = Matrix::from_diagonal(&Vector::from_vec(vec![l, l * (1.0 - p.mu)]));
    Ok((inner, outer))
}

fn eig2_real(m: &Matrix) -> (f64, f64) {
    let tr = m.trace();
    let det = m.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}

/// `(max eig(Σ*Λ⁻), min eig(Σ*Λ⁺))`.
pub fn tangency_eigenvalues(p: &StandardParams2D) -> Result<(f64, f64)> {
    let sigma = covariance_explicit(p)?;
    let (inner, outer) = bounding_matrices(p)?;
    Ok((eig2_real(&(&sigma * outer)).1, eig2_real(&(&sigma * inner)).0))
}

/// Point where the ray along `dir` meets `{zᵀPz = 1}`.
fn on_ellipse(p: &Matrix, dir: &Vector) -> Vector {
    dir / p.dot(&(dir * dir.transpose())).sqrt()
}

pub fn ellipse_geometry(p: &StandardParams2D) -> Result<EllipseGeometry> {
    let sigma = covariance_explicit(p)?;
    let (s_plus, s_minus, tilt) = singular_values(p)?;
    let (inner, outer) = bounding_matrices(p)?;
    let w2 = 2.0 * p.omega;
    let tangency_dir = Vector::from_vec(vec![1.0, w2]).normalize();
    let outer_tangency_dir = Vector::from_vec(vec![-w2, 1.0]).normalize();
    let steady = steady_ellipse_matrix(&sigma)?;
    let zi = on_ellipse(&steady, &tangency_dir);
    let zo = on_ellipse(&steady, &outer_tangency_dir);
    let contact_residuals = (zi.dot(&(&inner * &zi)) - 1.0, zo.dot(&(&outer * &zo)) - 1.0);
    Ok(EllipseGeometry {
        tilt,
        s_plus,
        s_minus,
        inner,
        outer,
        tangency_dir,
        outer_tangency_dir,
        degenerate: p.mu == 0.0,
        tangency_eigenvalues: tangency_eigenvalues(p)?,
        contact_residuals,
    })
}

/// `½Σ*⁻¹`, the quadratic form whose unit level set is the stationary ellipse.
pub fn steady_ellipse_matrix(sigma: &Matrix) -> Result<Matrix> {
    let inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("singular covariance".into()))?;
    Ok(inv * 0.5)
}

/// `n` points on `{zᵀPz = 1}` for SPD `P`, parameterized by angle.
pub fn ellipse_points(p: &Matrix, n: usize) -> Vec<[f64; 2]> {
    let root = sym_inv_sqrt(p);
    (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            let z = &root * Vector::from_vec(vec![t.cos(), t.sin()]);
            [z[0], z[1]]
        })
        .collect()
}

/// Monte Carlo mean of `u*(X) = ½XᵀΣ*⁻¹X` over `X ~ π*`; the exact value is 1.
pub fn stream_expectation(p: &StandardParams2D, n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::EmptySample);
    }
    let sigma = covariance_explicit(p)?;
    let prec = steady_ellipse_matrix(&sigma)?;
    let l = sigma.cholesky().expect("covariance is SPD").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let x = &l * gaussian_vector(&mut rng, 2);
        sum += x.dot(&(&prec * &x));
    }
    Ok(sum / n_samples as f64)
}

/// Itô drifts of `(R, Θ)` for `dZ = −(Λ + ωR)Z dt + (2Λ)^{1/2} dW`,
/// `Λ = λ·diag(1+ν, 1−ν)`.
pub fn polar_drift(r: f64, theta: f64, lambda: f64, nu: f64, omega_y: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::ZeroRadius(r));
    }
    let (s2, c2) = (2.0 * theta).sin_cos();
    let dr = lambda * ((1.0 - nu * c2) / r - (1.0 + nu * c2) * r);
    let dtheta = omega_y + lambda * nu * (1.0 + 2.0 / (r * r)) * s2;
    Ok((dr, dtheta))
}

/// Drift and noise factor of the process `polar_drift` describes, for Monte Carlo checks.
pub fn polar_process(lambda: f64, nu: f64, omega_y: f64) -> (Matrix, Matrix) {
    let a = Matrix::from_row_slice(
        2,
        2,
        &[lambda * (1.0 + nu), omega_y, -omega_y, lambda * (1.0 - nu)],
    );
    let g = Matrix::from_diagonal(&Vector::from_vec(vec![
        (2.0 * lambda * (1.0 + nu)).sqrt(),
        (2.0 * lambda * (1.0 - nu)).sqrt(),
    ]));
    (a, g)
}

/// Steady-state mean angular velocity of the canonical process, `ω/√det Σ*`.
pub fn angular_velocity_expectation(p: &StandardParams2D) -> Result<f64> {
    Ok(p.omega / covariance_explicit(p)?.determinant().sqrt())
}

/// Steady-state mean angular velocity of any 2D model, `α*₁₂/√det Σ*`.
pub fn angular_velocity_model(model: &OuModel) -> Result<f64> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch("angular velocity needs d = 2".into()));
    }
    let s = model.steady_state()?;
    Ok(s.alpha[(0, 1)] / s.sigma.determinant().sqrt())
}

/// `ω = det(D)^{1/2}·ω⁽ʸ⁾`: area production rate in the original coordinates.
pub fn omega_from_isotropized(omega_y: f64, d: &Matrix) -> f64 {
    d.determinant().sqrt() * omega_y
}

pub fn omega_to_isotropized(omega: f64, d: &Matrix) -> f64 {
    omega / d.determinant().sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub omega: f64,
    pub tilt_rad: f64,
    pub s_max: f64,
    pub s_min: f64,
    pub det: f64,
    pub q: f64,
}

pub fn sweep(lambda_bar: f64, mu: f64, omegas: &[f64]) -> Result<Vec<SweepRow>> {
    omegas
        .iter()
        .map(|&omega| {
            let p = StandardParams2D::new(lambda_bar, mu, omega)?;
            let (s_max, s_min, tilt_rad) = singular_values(&p)?;
            Ok(SweepRow {
                omega,
                tilt_rad,
                s_max,
                s_min,
                det: covariance_explicit(&p)?.determinant(),
                q: entropy_production(&p)?,
            })
        })
        .collect()
}

/// The `ω`-sweep grid used by the geometry command: `n` evenly spaced points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::model::solve_lyapunov;

    fn rot() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    fn sp(l: f64, m: f64, w: f64) -> StandardParams2D {
        StandardParams2D::new(l, m, w).unwrap()
    }

    fn lyap_resid(p: &StandardParams2D) -> f64 {
        let b = drift_matrix(p).unwrap();
        let s = covariance_explicit(p).unwrap();
        max_abs(&(&b * &s + &s * b.transpose() + Matrix::identity(2, 2)))
    }

    #[test]
    fn drift_examples() {
        assert_eq!(drift_matrix(&sp(1.0, 0.0, 0.0)).unwrap(), -Matrix::identity(2, 2));
        let b = drift_matrix(&sp(1.0, 0.5, 0.5)).unwrap();
        assert_eq!(b, Matrix::from_row_slice(2, 2, &[-1.5, -1.0, 1.0, -0.5]));
        let b = drift_matrix(&sp(2.0, 0.0, 1.0)).unwrap();
        assert_eq!(b, Matrix::from_row_slice(2, 2, &[-2.0, -4.0, 4.0, -2.0]));
    }

    #[test]
    fn invalid_params() {
        assert!(matches!(StandardParams2D::new(0.0, 0.1, 0.0), Err(Error::InvalidParams(_))));
        assert!(StandardParams2D::new(1.0, 1.0, 0.0).is_err());
        assert!(StandardParams2D::new(1.0, -0.1, 0.0).is_err());
        let bad = StandardParams2D { lambda_bar: 1.0, mu: 2.0, omega: 0.0 };
        assert!(covariance_explicit(&bad).is_err());
    }

    #[test]
    fn covariance_examples() {
        let p = sp(1.3, 0.4, 0.0);
        let s = covariance_explicit(&p).unwrap();
        let want = Matrix::from_diagonal(&Vector::from_vec(vec![
            0.5 / (1.3 * 1.4),
            0.5 / (1.3 * 0.6),
        ]));
        assert!((s - want).amax() < 1e-15);
        let s = covariance_explicit(&sp(2.0, 0.0, 3.7)).unwrap();
        assert!((s - Matrix::identity(2, 2) * 0.25).amax() < 1e-15);
        let p = sp(1.0, 0.5, 0.5);
        let s = covariance_explicit(&p).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 5.0]) / 7.0;
        assert!((&s - &want).amax() < 1e-15);
        let generic = solve_lyapunov(&to_model(&p).unwrap()).unwrap();
        assert!((generic - want).amax() < 1e-12);
        assert!(lyap_resid(&p) < 1e-12);
    }

    #[test]
    fn singular_value_examples() {
        let (a, b, t) = singular_values(&sp(2.0, 0.3, 0.0)).unwrap();
        assert!((a - 1.0 / (4.0 * 0.7)).abs() < 1e-15);
        assert!((b - 1.0 / (4.0 * 1.3)).abs() < 1e-15);
        assert_eq!(t, 0.0);
        let (a, b, _) = singular_values(&sp(1.0, 0.5, 0.5)).unwrap();
        // eigenvalues of [[3,-1],[-1,5]]/7 from a dense solver
        assert!((a - 0.773_459_080_339_013_1).abs() < 1e-12);
        assert!((b - 0.369_398_062_518_129_9).abs() < 1e-12);
        assert!((a + b - 8.0 / 7.0).abs() < 1e-14);
        let (a, b, _) = singular_values(&sp(0.7, 0.0, 9.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singular_values_match_eigendecomposition() {
        for &(l, m, w) in &[(1.0, 0.5, 0.5), (0.3, 0.9, -2.0), (5.0, 0.1, 17.0), (1.0, 0.7, 0.0)] {
            let p = sp(l, m, w);
            let s = covariance_explicit(&p).unwrap();
            let eig = s.clone().symmetric_eigen();
            let (hi, lo, t) = singular_values(&p).unwrap();
            let (imax, _) = eig.eigenvalues.argmax();
            assert!((eig.eigenvalues.max() - hi).abs() < 1e-12 * hi);
            assert!((eig.eigenvalues.min() - lo).abs() < 1e-12 * hi);
            if m > 0.0 {
                // the minor-variance axis is e1 at ω = 0; the tilted e1 is an eigenvector of s_min
                let v = Vector::from_vec(vec![t.cos(), t.sin()]);
                assert!((&s * &v - &v * lo).amax() < 1e-12);
                let major = eig.eigenvectors.column(imax);
                assert!(major.dot(&v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn geometry_examples() {
        let g = ellipse_geometry(&sp(1.0, 0.5, 0.0)).unwrap();
        assert_eq!(g.tilt, 0.0);
        assert_eq!(g.tangency_dir, Vector::from_vec(vec![1.0, 0.0]));
        assert!(g.contact_residuals.1.abs() < 1e-12);
        assert!(!g.degenerate);
        let g = ellipse_geometry(&sp(1.0, 0.5, 0.5)).unwrap();
        assert!((g.tangency_eigenvalues.0 - 0.5).abs() < 1e-12);
        assert!((g.tangency_eigenvalues.1 - 0.5).abs() < 1e-12);
        assert!(g.contact_residuals.0.abs() < 1e-12);
        assert!(g.contact_residuals.1.abs() < 1e-12);
        let up = ellipse_geometry(&sp(1.0, 0.5, 1e6)).unwrap().tilt;
        let dn = ellipse_geometry(&sp(1.0, 0.5, -1e6)).unwrap().tilt;
        assert!((up - std::f64::consts::FRAC_PI_4).abs() < 1e-6);
        assert!((dn + std::f64::consts::FRAC_PI_4).abs() < 1e-6);
        assert!(ellipse_geometry(&sp(1.0, 0.0, 0.3)).unwrap().degenerate);
    }

    #[test]
    fn alpha_is_omega_rotation_and_q_closed_form() {
        for &(l, m, w) in &[(1.0, 0.5, 1.0), (0.2, 0.9, -3.0), (4.0, 0.0, 0.25)] {
            let p = sp(l, m, w);
            let model = to_model(&p).unwrap();
            let st = model.steady_state().unwrap();
            assert!((&st.alpha - rot() * w).amax() < 1e-10);
            let q = entropy_production(&p).unwrap();
            assert!((st.q - q).abs() < 1e-10 * q.max(1.0));
            assert!((st.sigma_inv.trace() - 4.0 * l).abs() < 1e-10 * l);
        }
    }

    #[test]
    fn ellipse_points_lie_on_curve() {
        let p = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        for z in ellipse_points(&p, 37) {
            let z = Vector::from_vec(z.to_vec());
            assert!((z.dot(&(&p * &z)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_expectation_examples() {
        assert!(matches!(stream_expectation(&sp(1.0, 0.5, 2.0), 0, 1), Err(Error::EmptySample)));
        let n = 1_000_000;
        let m = stream_expectation(&sp(1.0, 0.5, 2.0), n, 42).unwrap();
        assert!((m - 1.0).abs() < 3.0 / (n as f64).sqrt(), "{m}");
    }

    #[test]
    fn polar_drift_examples() {
        assert_eq!(polar_drift(1.0, 0.3, 1.7, 0.0, 0.8).unwrap(), (0.0, 0.8));
        for r in [0.1, 1.0, 5.0] {
            assert_eq!(polar_drift(r, 1.1, 2.0, 0.0, -0.4).unwrap().1, -0.4);
        }
        let (dr, dt) = polar_drift(2.0, std::f64::consts::FRAC_PI_4, 1.0, 0.5, 1.0).unwrap();
        assert!((dr - (0.5 - 2.0)).abs() < 1e-15);
        assert!((dt - (1.0 + 0.5 * 1.5)).abs() < 1e-15);
        assert!(matches!(polar_drift(0.0, 0.0, 1.0, 0.5, 1.0), Err(Error::ZeroRadius(_))));
    }

    #[test]
    fn angular_velocity_examples() {
        assert_eq!(angular_velocity_expectation(&sp(1.0, 0.5, 0.0)).unwrap(), 0.0);
        // μ = 0: Σ* = I/(2λ̄), so the rate is 2λ̄ω, the rotation rate of the drift
        let w = angular_velocity_expectation(&sp(1.5, 0.0, 0.7)).unwrap();
        assert!((w - 2.0 * 1.5 * 0.7).abs() < 1e-12);
        let p = sp(1.0, 0.5, 1.0);
        let a = angular_velocity_expectation(&p).unwrap();
        let b = angular_velocity_model(&to_model(&p).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - 2.0 * (1.0f64 - 0.25 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn omega_conversion_roundtrip() {
        let d = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let w = omega_from_isotropized(0.3, &d);
        assert!((w - 0.3 * 7f64.sqrt()).abs() < 1e-15);
        assert!((omega_to_isotropized(w, &d) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn sweep_det_peaks_at_zero() {
        let omegas = linspace(-4.0, 4.0, 81);
        let rows = sweep(1.0, 0.5, &omegas).unwrap();
        let (imax, _) = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.det.total_cmp(&b.1.det))
            .unwrap();
        assert_eq!(rows[imax].omega, 0.0);
        for w in rows.windows(2) {
            if w[1].omega <= 0.0 {
                assert!(w[1].det > w[0].det);
            } else {
                assert!(w[1].det < w[0].det);
            }
        }
    }

    #[test]
    fn grid_properties() {
        let lams: Vec<f64> = (0..21).map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 20.0)).collect();
        let mus = linspace(0.0, 0.95, 11);
        let omegas = linspace(-20.0, 20.0, 41);
        for &l in &lams {
            for &m in &mus {
                let mut traces = vec![];
                let mut prev: Option<(f64, f64, f64)> = None;
                for &w in &omegas {
                    let p = sp(l, m, w);
                    assert!(lyap_resid(&p) <= 1e-10);
                    let s = covariance_explicit(&p).unwrap();
                    traces.push(s.clone().try_inverse().unwrap().trace());
                    let (hi, lo, _) = singular_values(&p).unwrap();
                    let det = s.determinant();
                    if let Some((pw, pdet, pecc)) = prev {
                        if m > 0.0 && pw >= 0.0 {
                            assert!(det < pdet, "det not decreasing at l={l} m={m} w={w}");
                            assert!(hi / lo < pecc);
                            assert!(det.ln() < pdet.ln());
                        }
                    }
                    prev = Some((w, det, hi / lo));
                }
                for t in &traces {
                    assert!((t - 4.0 * l).abs() <= 1e-10 * 4.0 * l);
                }
            }
        }
        let (hi, lo, _) = singular_values(&sp(1.0, 0.9, 1e6)).unwrap();
        assert!(hi / lo < 1.0 + 1e-5);
    }
}
