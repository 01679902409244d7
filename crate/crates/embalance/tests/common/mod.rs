//! Shared independent oracles for the integration suites: Kronecker-form
//! Lyapunov solves, the matrix exponential, and deterministic random
//! fixtures. These stay independent of the library's Schur/RK code paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Orthogonal factor of a random square matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n).qr().q()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Solve `A X + X A^T + M = 0` through the vec trick:
/// `(I (x) A + A (x) I) vec(X) = -vec(M)`.
pub fn kron_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let sys = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_column_slice((-m).as_slice());
    let sol = sys.lu().solve(&rhs).expect("kron oracle solve");
    DMatrix::from_column_slice(n, n, sol.as_slice())
}

/// Solve `A^T X + X A + M = 0` with the same oracle.
pub fn kron_lyapunov_adjoint(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    kron_lyapunov(&a.transpose(), m)
}

/// Matrix exponential (Pade scaling-and-squaring), independent of the RK
/// integration path.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

/// Smallest magnitude over the eigenvalue real parts.
pub fn min_decay(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|ev| ev.re.abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn rel_frobenius(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - y).norm() / y.norm()
}
