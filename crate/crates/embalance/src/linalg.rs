//! Dense linear-algebra kernels: Lyapunov solves, PSD factorization with
//! clipping, conditioned inversion and SVD, plus the [`Gramian`] container
//! shared by every gramian construction.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};
use crate::scalar::{convert, to_f64, Scalar};

/// Provenance tag identifying which construction produced a gramian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramianMethod {
    LallP,
    LallQ,
    LtvP,
    LtvQ,
    BilinearP,
    BilinearQ,
    NonlinearP,
    NonlinearQ,
    LtiP,
    LtiQ,
}

impl std::fmt::Display for GramianMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            GramianMethod::LallP => "lall-P",
            GramianMethod::LallQ => "lall-Q",
            GramianMethod::LtvP => "ltv-P",
            GramianMethod::LtvQ => "ltv-Q",
            GramianMethod::BilinearP => "bilinear-P",
            GramianMethod::BilinearQ => "bilinear-Q",
            GramianMethod::NonlinearP => "nonlinear-P",
            GramianMethod::NonlinearQ => "nonlinear-Q",
            GramianMethod::LtiP => "lti-P",
            GramianMethod::LtiQ => "lti-Q",
        };
        f.write_str(tag)
    }
}

/// Symmetric positive-semidefinite matrix with provenance metadata.
#[derive(Debug, Clone)]
pub struct Gramian<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub method: GramianMethod,
    pub horizon: T,
    pub quadrature: String,
    pub set_summary: String,
    /// Total magnitude of eigenvalues clipped during PSD repair.
    pub clipped_mass: T,
}

impl<T: Scalar> Gramian<T> {
    /// Wrap a matrix that is already PSD up to roundoff (e.g. a Lyapunov
    /// solution). The matrix is symmetrized; no eigenvalue clipping runs.
    pub fn new(
        matrix: DMatrix<T>,
        method: GramianMethod,
        horizon: T,
        quadrature: impl Into<String>,
        set_summary: impl Into<String>,
    ) -> Self {
        let matrix = symmetrize(&matrix);
        Gramian {
            matrix,
            method,
            horizon,
            quadrature: quadrature.into(),
            set_summary: set_summary.into(),
            clipped_mass: T::zero(),
        }
    }

    /// Wrap a quadrature-assembled matrix: symmetrize, then clip eigenvalues
    /// below `1e-12 * lambda_max` to zero to repair discretization noise.
    pub fn repaired(
        matrix: DMatrix<T>,
        method: GramianMethod,
        horizon: T,
        quadrature: impl Into<String>,
        set_summary: impl Into<String>,
    ) -> Self {
        let sym = symmetrize(&matrix);
        let factor = psd_factor_matrix(&sym);
        let repaired = &factor.factor * factor.factor.transpose();
        Gramian {
            matrix: repaired,
            method,
            horizon,
            quadrature: quadrature.into(),
            set_summary: set_summary.into(),
            clipped_mass: factor.clipped_mass,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Check the symmetry and near-PSD invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        if self.matrix.ncols() != n {
            return Err(Error::InvalidArgument("gramian must be square".into()));
        }
        let scale = self.matrix.amax();
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        let tol = convert::<T>(1e-10) * scale;
        if asym > tol && scale > T::zero() {
            return Err(Error::InvalidArgument(format!(
                "gramian asymmetry {:.3e} exceeds {:.3e}",
                to_f64(asym),
                to_f64(tol)
            )));
        }
        let eig = symmetrize(&self.matrix).symmetric_eigen().eigenvalues;
        let lambda_max = eig.iter().copied().fold(T::zero(), T::max);
        let lambda_min = eig.iter().copied().fold(T::zero(), T::min);
        if lambda_min < -convert::<T>(1e-10) * lambda_max {
            return Err(Error::InvalidArgument(format!(
                "gramian eigenvalue {:.3e} below PSD tolerance",
                to_f64(lambda_min)
            )));
        }
        Ok(())
    }
}

/// `(m + m^T) / 2`
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = convert::<T>(0.5);
    (m + m.transpose()) * half
}

/// Largest real part over the eigenvalues of a square matrix.
pub fn spectral_abscissa<T: Scalar>(a: &DMatrix<T>) -> T {
    a.complex_eigenvalues()
        .iter()
        .map(|ev| ev.re)
        .fold(T::from_f64(f64::NEG_INFINITY).unwrap(), T::max)
}

/// Real Schur decomposition of a stable matrix, cached so that both Lyapunov
/// orientations (`AX + XA^T + M = 0` and `A^T X + X A + M = 0`) can be solved
/// with a single factorization.
pub struct LyapunovSolver<T: Scalar> {
    a: DMatrix<T>,
    q: DMatrix<T>,
    t: DMatrix<T>,
    /// Diagonal block layout of the quasi-triangular factor: (start, size).
    blocks: Vec<(usize, usize)>,
}

impl<T: Scalar> LyapunovSolver<T> {
    /// Factorize `a`. Fails if the Schur iteration does not converge or if
    /// any eigenvalue has a nonnegative real part.
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument(
                "Lyapunov solver requires a square matrix".into(),
            ));
        }
        let schur = Schur::try_new(a.clone(), T::default_epsilon(), 0).ok_or(Error::SchurFailed)?;
        let (q, t) = schur.unpack();
        let blocks = partition_blocks(&t);

        let mut max_re = T::from_f64(f64::NEG_INFINITY).unwrap();
        for &(start, size) in &blocks {
            let re = if size == 1 {
                t[(start, start)]
            } else {
                (t[(start, start)] + t[(start + 1, start + 1)]) * convert::<T>(0.5)
            };
            max_re = max_re.max(re);
        }
        if max_re >= T::zero() {
            return Err(Error::UnstableMatrix {
                max_re: to_f64(max_re),
            });
        }

        Ok(LyapunovSolver {
            a: a.clone(),
            q,
            t,
            blocks,
        })
    }

    /// Solve `A X + X A^T + M = 0` for symmetric `M`.
    pub fn solve(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        let c = -(self.q.transpose() * m * &self.q);
        let y = self.triangular_lyap(&c, false)?;
        let x = symmetrize(&(&self.q * y * self.q.transpose()));
        let residual = (&self.a * &x + &x * self.a.transpose() + m).norm();
        check_residual(residual, m.norm())?;
        Ok(x)
    }

    /// Solve `A^T X + X A + M = 0` for symmetric `M`.
    pub fn solve_adjoint(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        let c = -(self.q.transpose() * m * &self.q);
        let y = self.triangular_lyap(&c, true)?;
        let x = symmetrize(&(&self.q * y * self.q.transpose()));
        let residual = (self.a.transpose() * &x + &x * &self.a + m).norm();
        check_residual(residual, m.norm())?;
        Ok(x)
    }

    /// Eigenvalue real parts read off the quasi-triangular diagonal.
    pub fn eigenvalue_real_parts(&self) -> Vec<T> {
        let mut out = Vec::new();
        for &(start, size) in &self.blocks {
            if size == 1 {
                out.push(self.t[(start, start)]);
            } else {
                let re =
                    (self.t[(start, start)] + self.t[(start + 1, start + 1)]) * convert::<T>(0.5);
                out.push(re);
                out.push(re);
            }
        }
        out
    }

    /// Back-substitution for `T Y + Y T^T = C` (or `T^T Y + Y T = C` when
    /// `adjoint`), with `T` upper quasi-triangular. Blocks are solved through
    /// Kronecker systems of size at most 4.
    fn triangular_lyap(&self, c: &DMatrix<T>, adjoint: bool) -> Result<DMatrix<T>> {
        let n = self.t.nrows();
        let nb = self.blocks.len();
        let mut y = DMatrix::<T>::zeros(n, n);

        let order: Vec<usize> = if adjoint {
            (0..nb).collect()
        } else {
            (0..nb).rev().collect()
        };

        for &bj in &order {
            let (cj, nj) = self.blocks[bj];
            for &bi in &order {
                let (ci, ni) = self.blocks[bi];
                let mut rhs = c.view((ci, cj), (ni, nj)).clone_owned();

                if adjoint {
                    // minus T[0..ci, bi]^T * Y[0..ci, bj]  and  Y[bi, 0..cj] * T[0..cj, bj]
                    if ci > 0 {
                        let tt = self.t.view((0, ci), (ci, ni));
                        let yy = y.view((0, cj), (ci, nj));
                        rhs -= tt.transpose() * yy;
                    }
                    if cj > 0 {
                        let yy = y.view((ci, 0), (ni, cj));
                        let tt = self.t.view((0, cj), (cj, nj));
                        rhs -= yy * tt;
                    }
                } else {
                    // minus T[bi, ci+ni..n] * Y[ci+ni..n, bj]  and  Y[bi, cj+nj..n] * T[bj, cj+nj..n]^T
                    let ri = ci + ni;
                    let rj = cj + nj;
                    if ri < n {
                        let tt = self.t.view((ci, ri), (ni, n - ri));
                        let yy = y.view((ri, cj), (n - ri, nj));
                        rhs -= tt * yy;
                    }
                    if rj < n {
                        let yy = y.view((ci, rj), (ni, n - rj));
                        let tt = self.t.view((cj, rj), (nj, n - rj));
                        rhs -= yy * tt.transpose();
                    }
                }

                let tii = self.t.view((ci, ci), (ni, ni)).clone_owned();
                let tjj = self.t.view((cj, cj), (nj, nj)).clone_owned();
                let (lhs_i, lhs_j) = if adjoint {
                    (tii.transpose(), tjj.transpose())
                } else {
                    (tii, tjj)
                };
                // vec(T_ii Y + Y T_jj^T) = (I (x) T_ii + T_jj (x) I) vec(Y)
                let sys = DMatrix::<T>::identity(nj, nj).kronecker(&lhs_i)
                    + lhs_j.kronecker(&DMatrix::<T>::identity(ni, ni));
                let rhs_vec = DVector::<T>::from_column_slice(rhs.as_slice());
                let sol = sys
                    .lu()
                    .solve(&rhs_vec)
                    .ok_or(Error::SingularLyapunovBlock)?;
                let block = DMatrix::<T>::from_column_slice(ni, nj, sol.as_slice());
                y.view_mut((ci, cj), (ni, nj)).copy_from(&block);
            }
        }
        Ok(y)
    }
}

fn check_residual<T: Scalar>(residual: T, m_norm: T) -> Result<()> {
    // 1e-10 relative for f64; degrades gracefully for wider-epsilon scalars.
    let rel = convert::<T>(1e-10).max(T::default_epsilon() * convert::<T>(100.0));
    let tol = rel * m_norm + T::default_epsilon();
    if residual > tol {
        return Err(Error::ResidualTooLarge {
            residual: to_f64(residual),
            tol: to_f64(tol),
        });
    }
    Ok(())
}

fn partition_blocks<T: Scalar>(t: &DMatrix<T>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != T::zero() {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solve `A X + X A^T + M = 0` with a fresh Schur factorization of `A`.
pub fn solve_lyapunov<T: Scalar>(a: &DMatrix<T>, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    LyapunovSolver::new(a)?.solve(m)
}

/// Solve `A^T X + X A + M = 0` with a fresh Schur factorization of `A`.
pub fn solve_lyapunov_adjoint<T: Scalar>(a: &DMatrix<T>, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    LyapunovSolver::new(a)?.solve_adjoint(m)
}

/// Rank-revealing PSD square root `G ~= R R^T`.
pub struct PsdFactor<T: Scalar> {
    /// `n x r` factor with orthogonal, eigenvalue-scaled columns.
    pub factor: DMatrix<T>,
    pub rank: usize,
    /// Sum of |eigenvalue| over the clipped spectrum.
    pub clipped_mass: T,
}

/// Factor a symmetric near-PSD matrix, clipping eigenvalues below
/// `1e-12 * lambda_max` (quadrature noise can dip slightly negative).
pub fn psd_factor_matrix<T: Scalar>(m: &DMatrix<T>) -> PsdFactor<T> {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().copied().fold(T::zero(), T::max);
    let clip = convert::<T>(1e-12) * lambda_max;

    let mut retained: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > clip).collect();
    retained.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut clipped_mass = T::zero();
    for i in 0..n {
        if !retained.contains(&i) {
            clipped_mass += eig.eigenvalues[i].abs();
        }
    }

    let rank = retained.len();
    let mut factor = DMatrix::<T>::zeros(n, rank);
    for (col, &i) in retained.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        factor
            .column_mut(col)
            .copy_from(&(eig.eigenvectors.column(i) * scale));
    }
    PsdFactor {
        factor,
        rank,
        clipped_mass,
    }
}

/// Factor a gramian as `G ~= R R^T` (see [`psd_factor_matrix`]).
pub fn psd_factor<T: Scalar>(g: &Gramian<T>) -> PsdFactor<T> {
    psd_factor_matrix(&g.matrix)
}

/// Thin SVD with singular values sorted non-increasing.
pub struct SvdParts<T: Scalar> {
    pub u: DMatrix<T>,
    pub sigma: DVector<T>,
    pub v: DMatrix<T>,
}

pub fn svd_sorted<T: Scalar>(m: &DMatrix<T>) -> Result<SvdParts<T>> {
    let svd = m
        .clone()
        .try_svd(true, true, T::default_epsilon(), 0)
        .ok_or(Error::SvdFailed)?;
    let u_raw = svd.u.ok_or(Error::SvdFailed)?;
    let vt_raw = svd.v_t.ok_or(Error::SvdFailed)?;
    let k = svd.singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut u = DMatrix::<T>::zeros(u_raw.nrows(), k);
    let mut v = DMatrix::<T>::zeros(vt_raw.ncols(), k);
    let mut sigma = DVector::<T>::zeros(k);
    for (col, &i) in order.iter().enumerate() {
        u.column_mut(col).copy_from(&u_raw.column(i));
        v.column_mut(col).copy_from(&vt_raw.row(i).transpose());
        sigma[col] = svd.singular_values[i];
    }
    Ok(SvdParts { u, sigma, v })
}

/// Default condition-number limit for fundamental-solution inversion; beyond
/// this double precision leaves no trustworthy digits in the integrand.
pub fn default_cond_limit<T: Scalar>() -> T {
    convert(1e12)
}

/// SVD-based inverse that refuses matrices with condition number above
/// `cond_limit`.
pub fn conditioned_inverse<T: Scalar>(m: &DMatrix<T>, cond_limit: T) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(
            "conditioned_inverse requires a square matrix".into(),
        ));
    }
    let parts = svd_sorted(m)?;
    let n = m.nrows();
    let sigma_max = parts.sigma[0];
    let sigma_min = parts.sigma[n - 1];
    let cond = if sigma_min > T::zero() {
        sigma_max / sigma_min
    } else {
        T::from_f64(f64::INFINITY).unwrap()
    };
    if !(cond <= cond_limit) {
        return Err(Error::IllConditioned {
            cond: to_f64(cond),
            limit: to_f64(cond_limit),
        });
    }
    let mut inv = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        let scaled = parts.v.column(i) / parts.sigma[i];
        inv += scaled * parts.u.column(i).transpose();
    }
    Ok(inv)
}
