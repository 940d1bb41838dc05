//! The linear OU model `dX = −A X dt + G dW` and its closed-form steady state.

use nalgebra::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_inner, from_rows, max_abs, plane_rotation, skew_part, solve_continuous_lyapunov,
    spd_inverse, sym_inv_sqrt, sym_part, to_rows, Matrix, Vector,
};

#[derive(Serialize, Deserialize)]
struct ModelJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
}

/// A validated OU model. `D = G Gᵀ` is cached at construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct OuModel {
    a: Matrix,
    g: Matrix,
    d: Matrix,
}

impl TryFrom<ModelJson> for OuModel {
    type Error = Error;
    fn try_from(j: ModelJson) -> Result<Self> {
        OuModel::new(from_rows(&j.a)?, from_rows(&j.g)?)
    }
}

impl From<OuModel> for ModelJson {
    fn from(m: OuModel) -> Self {
        ModelJson { a: to_rows(&m.a), g: to_rows(&m.g) }
    }
}

impl OuModel {
    pub fn new(a: Matrix, g: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || g.nrows() != n || g.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, G is {}x{}; both must be square and the same size",
                a.nrows(),
                a.ncols(),
                g.nrows(),
                g.ncols()
            )));
        }
        if a.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite matrix entry".into()));
        }
        let min_re = a
            .complex_eigenvalues()
            .iter()
            .map(|z: &Complex<f64>| z.re)
            .fold(f64::INFINITY, f64::min);
        if min_re <= 0.0 {
            return Err(Error::UnstableDrift { real: min_re });
        }
        let sv = g.singular_values();
        let largest = sv.max();
        let smallest = sv.min();
        if !(smallest > 1e-12 * largest) {
            return Err(Error::SingularNoise { smallest, largest });
        }
        let d = sym_part(&(&g * g.transpose()));
        Ok(OuModel { a, g, d })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn g(&self) -> &Matrix {
        &self.g
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn steady_state(&self) -> Result<SteadyState> {
        SteadyState::new(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    /// `D⁻¹A` symmetric to `tol` (max-abs), i.e. the model is at equilibrium.
    pub fn is_detailed_balance(&self, tol: f64) -> bool {
        let Some(dinv) = self.d.clone().try_inverse() else {
            return false;
        };
        let m = dinv * &self.a;
        max_abs(&(&m - m.transpose())) <= tol
    }
}

/// Alias matching the operation name used throughout the docs.
pub fn build_model(a: Matrix, g: Matrix) -> Result<OuModel> {
    OuModel::new(a, g)
}

/// Stationary covariance `Σ*` solving `AΣ + ΣAᵀ = D`, symmetrized.
pub fn solve_lyapunov(model: &OuModel) -> Result<Matrix> {
    let s = sym_part(&solve_continuous_lyapunov(&model.a, &model.d)?);
    let resid = max_abs(&(&model.a * &s + &s * model.a.transpose() - &model.d));
    if !(resid <= 1e-10 * max_abs(&model.d)) {
        return Err(Error::NumericalFailure(format!("Lyapunov residual {resid:e}")));
    }
    Ok(s)
}

/// `α* = ½(AΣ* − Σ*Aᵀ)`, exactly skew.
pub fn alpha_star(model: &OuModel, sigma: &Matrix) -> Result<Matrix> {
    let d = model.dim();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::DimensionMismatch("sigma does not match model".into()));
    }
    Ok(skew_part(&(&model.a * sigma)))
}

/// Closed-form steady state of an OU model.
#[derive(Clone, Debug)]
pub struct SteadyState {
    pub sigma: Matrix,
    pub sigma_inv: Matrix,
    pub alpha: Matrix,
    /// Entropy production rate.
    pub q: f64,
    /// `½DΣ*⁻¹ − A`, the linear map `x ↦ v*(x)`.
    pub velocity_map: Matrix,
}

impl SteadyState {
    pub fn new(model: &OuModel) -> Result<Self> {
        let sigma = solve_lyapunov(model)?;
        let sigma_inv = spd_inverse(&sigma)?;
        let alpha = alpha_star(model, &sigma)?;
        let velocity_map = model.d() * &sigma_inv * 0.5 - model.a();
        let q = frobenius_q(model.d(), &sigma, &alpha);
        Ok(SteadyState { sigma, sigma_inv, alpha, q, velocity_map })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

fn frobenius_q(d: &Matrix, sigma: &Matrix, alpha: &Matrix) -> f64 {
    // Any whitening gives the same norm; triangular solves against the
    // Cholesky factors stay accurate when D is badly conditioned.
    let whitened = d.clone().cholesky().zip(sigma.clone().cholesky()).and_then(|(ld, ls)| {
        let y = ld.l().solve_lower_triangular(alpha)?;
        ls.l().solve_lower_triangular(&y.transpose())
    });
    match whitened {
        Some(x) => x.norm_squared(),
        None => (sym_inv_sqrt(d) * alpha * sym_inv_sqrt(sigma)).norm_squared(),
    }
}

/// Steady-state probability velocity `v*(x) = (½DΣ*⁻¹ − A)x = −α*Σ*⁻¹x`.
pub fn steady_velocity(state: &SteadyState, x: &Vector) -> Result<Vector> {
    if x.len() != state.dim() {
        return Err(Error::DimensionMismatch("x does not match model".into()));
    }
    Ok(&state.velocity_map * x)
}

/// `q = ‖D^{-1/2} α* Σ*^{-1/2}‖²_F`.
pub fn entropy_production(model: &OuModel, state: &SteadyState) -> f64 {
    frobenius_q(model.d(), &state.sigma, &state.alpha)
}

/// `q = ⟨D⁻¹α*Σ*⁻¹, α*⟩`, the inner-product form.
pub fn entropy_production_inner(model: &OuModel, state: &SteadyState) -> Result<f64> {
    let dinv = spd_inverse(model.d())?;
    Ok(frobenius_inner(&(dinv * &state.alpha * &state.sigma_inv), &state.alpha))
}

/// Angular momentum matrix `L_ij = E[xᵀR^(i,j)v*(x)]` under π*, in closed form.
pub fn angular_momentum(state: &SteadyState) -> Matrix {
    let d = state.dim();
    let vs = &state.velocity_map * &state.sigma;
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            (plane_rotation(d, i, j) * &vs).trace()
        }
    })
}

/// Helmholtz split of `w(x) = 2D⁻¹μ(x)` into conservative and rotational parts.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// `P = Σ*⁻¹`, with `u*(x) = ½xᵀPx`.
    pub u_quadratic: Matrix,
    /// `w_c(x) = −Px`.
    pub w_c_matrix: Matrix,
    /// `w_r(x) = (P − 2D⁻¹A)x = −2D⁻¹α*Px`.
    pub w_r_matrix: Matrix,
    two_dinv_a: Matrix,
    d: Matrix,
    a: Matrix,
}

pub fn decompose(model: &OuModel, state: &SteadyState) -> Result<Decomposition> {
    let p = state.sigma_inv.clone();
    let dinv = spd_inverse(model.d())?;
    let two_dinv_a = dinv * model.a() * 2.0;
    Ok(Decomposition {
        w_c_matrix: -&p,
        w_r_matrix: &p - &two_dinv_a,
        u_quadratic: p,
        two_dinv_a,
        d: model.d().clone(),
        a: model.a().clone(),
    })
}

impl Decomposition {
    /// Full field matrix, `w_c + w_r = −2D⁻¹A`.
    pub fn w_matrix(&self) -> Matrix {
        -&self.two_dinv_a
    }

    /// `trace(DP) − 2·trace(A)`, zero when the Poisson equation holds.
    pub fn poisson_residual(&self) -> f64 {
        (&self.d * &self.u_quadratic).trace() - 2.0 * self.a.trace()
    }

    /// `∇u·D(∇u + w)` at `x`, zero when the Hamilton–Jacobi equation holds.
    pub fn hamilton_jacobi_residual(&self, x: &Vector) -> f64 {
        let grad = &self.u_quadratic * x;
        let field = &grad + self.w_matrix() * x;
        grad.dot(&(&self.d * field))
    }
}

/// Random stable model: `A = BBᵀ/d + K + c·I` with skew `K`, so every
/// eigenvalue has real part at least `c`. `G` is a perturbed identity.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, d: usize) -> OuModel {
    loop {
        let b = gaussian_matrix(rng, d);
        let k = skew_part(&gaussian_matrix(rng, d));
        let a = &b * b.transpose() / d as f64 + k + Matrix::identity(d, d) * 0.5;
        let g = Matrix::identity(d, d) + gaussian_matrix(rng, d) * 0.4;
        if let Ok(m) = OuModel::new(a, g) {
            return m;
        }
    }
}

/// Random equilibrium model: `A = D·S` with `S` SPD, so `D⁻¹A` is symmetric.
pub fn random_equilibrium_model<R: Rng + ?Sized>(rng: &mut R, d: usize) -> OuModel {
    loop {
        let g = Matrix::identity(d, d) + gaussian_matrix(rng, d) * 0.4;
        let b = gaussian_matrix(rng, d);
        let s = &b * b.transpose() / d as f64 + Matrix::identity(d, d) * 0.5;
        let a = &g * g.transpose() * s;
        if let Ok(m) = OuModel::new(a, g) {
            return m;
        }
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}
