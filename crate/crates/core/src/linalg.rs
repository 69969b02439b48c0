//! Dense numerical kernels: Lyapunov equations, the matrix sign function
//! and PBH rank tests.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

type C64 = Complex<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("Lyapunov operator is singular: eigenvalues {0} and {1} sum to zero")]
    SingularLyapunov(String, String),
}

fn require_square(a: &DMatrix<f64>) -> Result<usize, LinalgError> {
    if a.is_square() {
        Ok(a.nrows())
    } else {
        Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() })
    }
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|x| C64::new(x, 0.0))
}

/// Largest real part among the eigenvalues; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Solves `Aᵀ X + X A + Q = 0` by Bartels–Stewart on the complex Schur form
/// of `A`. Cost is `O(n³)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = require_square(a)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!("A is {n}x{n}, Q is {}x{}", q.nrows(), q.ncols())));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let schur = to_complex(a)
        .try_schur(f64::EPSILON, 10_000)
        .ok_or(LinalgError::NoConvergence { what: "Schur decomposition", iterations: 10_000 })?;
    let (u, t) = schur.unpack();
    // Y = U* X U satisfies T* Y + Y T = -U* Q U.
    let c = -(u.adjoint() * to_complex(q) * &u);
    let th = t.adjoint();
    let mut y = DMatrix::<C64>::zeros(n, n);
    let scale = t.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for j in 0..n {
        let mut rhs = c.column(j).into_owned();
        for k in 0..j {
            let tkj = t[(k, j)];
            if tkj != C64::new(0.0, 0.0) {
                rhs -= y.column(k) * tkj;
            }
        }
        // lower-triangular solve with (T* + t_jj I)
        let tjj = t[(j, j)];
        for i in 0..n {
            let mut s = rhs[i];
            for k in 0..i {
                s -= th[(i, k)] * y[(k, j)];
            }
            let d = th[(i, i)] + tjj;
            if d.norm() <= 1e-14 * scale {
                return Err(LinalgError::SingularLyapunov(fmt_c(t[(i, i)]), fmt_c(tjj)));
            }
            y[(i, j)] = s / d;
        }
    }
    let x = &u * y * u.adjoint();
    Ok(symmetrize(&x.map(|z| z.re)))
}

fn fmt_c(z: C64) -> String {
    format!("{:.3e}{:+.3e}i", z.re, z.im)
}

/// Kronecker-product Lyapunov solve, `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec X = -vec Q`.
/// Memory is `O(n⁴)`; intended for small systems and as a cross-check.
pub fn solve_lyapunov_kronecker(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = require_square(a)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!("A is {n}x{n}, Q is {}x{}", q.nrows(), q.ncols())));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Matrix sign function by the scaled Newton iteration
/// `Z ← (Z/c + c Z⁻¹)/2`, `c = |det Z|^{1/n}`.
pub fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = require_square(h)?;
    const MAX_ITER: usize = 100;
    let mut z = h.clone();
    let mut scaling = true;
    for _ in 0..MAX_ITER {
        let lu = z.clone().lu();
        let c = if scaling {
            let u = lu.u();
            let logdet: f64 = (0..n).map(|i| u[(i, i)].abs().ln()).sum();
            (logdet / n as f64).exp()
        } else {
            1.0
        };
        let zinv = lu.try_inverse().ok_or(LinalgError::Singular)?;
        let next = (&z / c + zinv * c) * 0.5;
        let delta = (&next - &z).norm();
        let size = next.norm();
        z = next;
        if delta <= 1e-2 * size {
            // scaling only helps far from convergence
            scaling = false;
        }
        if delta <= 1e-13 * size {
            return Ok(z);
        }
    }
    Err(LinalgError::NoConvergence { what: "matrix sign iteration", iterations: MAX_ITER })
}

/// Smallest singular value of `[A − λI, B]` relative to the scale of
/// `[A, B]`, minimised over eigenvalues with `Re λ > −tol`. Returns `None`
/// when no such eigenvalue exists.
fn pbh_margin(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Option<(f64, C64)> {
    let n = a.nrows();
    let scale = a.norm().max(b.norm()).max(1.0);
    let mut worst: Option<(f64, C64)> = None;
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.re <= -tol {
            continue;
        }
        let mut m = DMatrix::<C64>::zeros(n, n + b.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&(to_complex(a) - DMatrix::<C64>::identity(n, n) * *lambda));
        m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
        let sv = m.singular_values();
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min) / scale;
        if worst.map_or(true, |(w, _)| smin < w) {
            worst = Some((smin, *lambda));
        }
    }
    worst
}

/// PBH test: every eigenvalue with nonnegative real part (within `tol`) is
/// controllable through `B`. On failure returns the offending eigenvalue.
pub fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<(), C64> {
    match pbh_margin(a, b, tol) {
        Some((margin, lambda)) if margin <= tol => Err(lambda),
        _ => Ok(()),
    }
}

/// Detectability of `(A, Q)`: stabilizability of `(Aᵀ, Qᵀ)`.
pub fn check_detectable(a: &DMatrix<f64>, q: &DMatrix<f64>, tol: f64) -> Result<(), C64> {
    check_stabilizable(&a.transpose(), &q.transpose(), tol)
}

/// Symmetric eigenvalue bounds of a (symmetrised) matrix.
pub fn symmetric_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let ev = symmetrize(m).symmetric_eigenvalues();
    (ev.min(), ev.max())
}
