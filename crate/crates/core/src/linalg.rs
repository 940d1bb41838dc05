//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here targets the handful-of-dimensions matrices that show up
//! in OU models, so the Lyapunov solvers vectorize through Kronecker
//! products instead of using Bartels–Stewart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Build a matrix from row-major nested rows, rejecting ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `½(M + Mᵀ)`, mirrored so the result is bit-exactly symmetric.
pub fn sym_part(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = m[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// `½(M − Mᵀ)`, mirrored so the result is bit-exactly skew.
pub fn skew_part(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] - m[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = -v;
        }
    }
    k
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Matrix inner product `⟨A, B⟩ = Σ a_ij b_ij`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// The 90° rotation `R^(i,j) = e_i e_jᵀ − e_j e_iᵀ` in the (i, j) plane.
pub fn plane_rotation(dim: usize, i: usize, j: usize) -> Matrix {
    let mut r = Matrix::zeros(dim, dim);
    r[(i, j)] = 1.0;
    r[(j, i)] = -1.0;
    r
}

/// Solve `A X + X Aᵀ = Q` via `(I⊗A + A⊗I) vec X = vec Q`.
pub fn solve_continuous_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let d = a.nrows();
    if a.ncols() != d || q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let n = d * d;
    let idx = |i: usize, j: usize| i + j * d;
    let mut k = Matrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            for m in 0..d {
                k[(idx(i, j), idx(m, j))] += a[(i, m)];
                k[(idx(i, j), idx(i, m))] += a[(j, m)];
            }
        }
    }
    let rhs = Vector::from_iterator(n, q.iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Kronecker system in Lyapunov solve".into()))?;
    Ok(Matrix::from_column_slice(d, d, sol.as_slice()))
}

/// Solve `X = F X Fᵀ + Q` via `(I − F⊗F) vec X = vec Q`.
pub fn solve_discrete_lyapunov(f: &Matrix, q: &Matrix) -> Result<Matrix> {
    let d = f.nrows();
    if f.ncols() != d || q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch("discrete lyapunov".into()));
    }
    let n = d * d;
    let idx = |i: usize, j: usize| i + j * d;
    let mut k = Matrix::identity(n, n);
    for i in 0..d {
        for j in 0..d {
            for m in 0..d {
                for l in 0..d {
                    k[(idx(i, j), idx(m, l))] -= f[(i, m)] * f[(j, l)];
                }
            }
        }
    }
    let rhs = Vector::from_iterator(n, q.iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular discrete Lyapunov system".into()))?;
    Ok(Matrix::from_column_slice(d, d, sol.as_slice()))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = sym_part(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn sym_spectral_map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = sym_part(m).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let floor = 1e-14 * lmax;
    let mapped = eig.eigenvalues.map(|l| f(l.max(floor)));
    let v = &eig.eigenvectors;
    sym_part(&(v * Matrix::from_diagonal(&mapped) * v.transpose()))
}

/// Symmetric p.s.d. square root, eigenvalues floored at `1e-14·λ_max`.
pub fn sym_sqrt(m: &Matrix) -> Matrix {
    sym_spectral_map(m, f64::sqrt)
}

/// Symmetric inverse square root, eigenvalues floored at `1e-14·λ_max`.
pub fn sym_inv_sqrt(m: &Matrix) -> Matrix {
    sym_spectral_map(m, |l| 1.0 / l.sqrt())
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("matrix is not positive definite".into()))?;
    Ok(sym_part(&chol.inverse()))
}

/// Lower factor `L` with `L Lᵀ = M` for a p.s.d. `M`. Falls back to the
/// symmetric square root when Cholesky breaks down (e.g. `M = 0`).
pub fn psd_factor(m: &Matrix) -> Matrix {
    match m.clone().cholesky() {
        Some(c) => c.l(),
        None => sym_sqrt(m),
    }
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    m.singular_values().iter().fold(0.0_f64, |a, &b| a.max(b))
}

pub fn one_norm(m: &Matrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant (Higham 2005).
pub fn expm(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch("expm of non-square matrix".into()));
    }
    let norm = one_norm(m);
    if !norm.is_finite() {
        return Err(Error::NumericalFailure("expm of non-finite matrix".into()));
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-s);
    let id = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::NumericalFailure("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}
