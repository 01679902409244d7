//! Order-2 Carleman bilinearization: augment the state with its Kronecker
//! square so a smooth input-affine system becomes bilinear with a nilpotent
//! state-input coupling.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::model::{BilinearModel, NonlinearModel};
use crate::scalar::{convert, Scalar};

/// Quadratic Taylor data of a drift at its equilibrium:
/// `f(x) ~= A1 x + A2 (x (x) x)` with `A2` of shape `n x n^2`.
#[derive(Debug, Clone)]
pub struct PolynomialDrift<T: Scalar> {
    a1: DMatrix<T>,
    a2: DMatrix<T>,
}

impl<T: Scalar> PolynomialDrift<T> {
    /// The quadratic term is symmetrized over index pairs so that
    /// `A2 (x (x) y) = A2 (y (x) x)`.
    pub fn new(a1: DMatrix<T>, a2: DMatrix<T>) -> Result<Self> {
        let n = a1.nrows();
        if a1.ncols() != n {
            return Err(Error::InvalidArgument("A1 must be square".into()));
        }
        if a2.nrows() != n || a2.ncols() != n * n {
            return Err(Error::InvalidArgument("A2 must have shape n x n^2".into()));
        }
        let mut a2 = a2;
        let half = convert::<T>(0.5);
        for i in 0..n {
            for k in (i + 1)..n {
                let ca = i * n + k;
                let cb = k * n + i;
                for row in 0..n {
                    let avg = (a2[(row, ca)] + a2[(row, cb)]) * half;
                    a2[(row, ca)] = avg;
                    a2[(row, cb)] = avg;
                }
            }
        }
        Ok(PolynomialDrift { a1, a2 })
    }

    pub fn dim(&self) -> usize {
        self.a1.nrows()
    }

    pub fn a1(&self) -> &DMatrix<T> {
        &self.a1
    }

    pub fn a2(&self) -> &DMatrix<T> {
        &self.a2
    }

    /// Evaluate `A1 x + A2 (x (x) x)`.
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let xx = x.kronecker(x);
        &self.a1 * x + &self.a2 * xx
    }
}

/// Truncation order of the drift expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorOrder {
    Linear,
    Quadratic,
}

/// Step for the finite-difference Taylor extraction.
const FD_STEP: f64 = 1e-5;

/// Taylor-expand the drift at the model equilibrium. Models built from
/// closed-form presets carry analytic Taylor data and skip differencing.
pub fn taylor_drift<T: Scalar>(
    model: &NonlinearModel<T>,
    order: TaylorOrder,
) -> Result<PolynomialDrift<T>> {
    if let Some(pd) = model.analytic_taylor() {
        return match order {
            TaylorOrder::Quadratic => Ok(pd.clone()),
            TaylorOrder::Linear => {
                let n = pd.dim();
                PolynomialDrift::new(pd.a1().clone(), DMatrix::zeros(n, n * n))
            }
        };
    }
    taylor_drift_numeric(model, order)
}

/// Central finite differences of the drift at the equilibrium (step 1e-5),
/// regardless of any analytic data on the model.
pub fn taylor_drift_numeric<T: Scalar>(
    model: &NonlinearModel<T>,
    order: TaylorOrder,
) -> Result<PolynomialDrift<T>> {
    let n = model.state_dim();
    let t0 = T::zero();
    let x0 = model.equilibrium().clone();
    let h = convert::<T>(FD_STEP);
    let two_h = h + h;

    let eval = |x: &DVector<T>| -> Result<DVector<T>> {
        let f = model.drift_at(t0, x);
        if f.iter().all(|v| v.is_finite()) {
            Ok(f)
        } else {
            Err(Error::InvalidArgument(
                "drift differencing produced non-finite values".into(),
            ))
        }
    };

    let shifted = |signs: &[(usize, T)]| -> DVector<T> {
        let mut x = x0.clone();
        for &(idx, s) in signs {
            x[idx] += s * h;
        }
        x
    };

    let mut a1 = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        let fp = eval(&shifted(&[(i, T::one())]))?;
        let fm = eval(&shifted(&[(i, -T::one())]))?;
        a1.column_mut(i).copy_from(&((fp - fm) / two_h));
    }

    let mut a2 = DMatrix::<T>::zeros(n, n * n);
    if order == TaylorOrder::Quadratic {
        let f0 = eval(&x0)?;
        let half = convert::<T>(0.5);
        let h2 = h * h;
        for i in 0..n {
            let fp = eval(&shifted(&[(i, T::one())]))?;
            let fm = eval(&shifted(&[(i, -T::one())]))?;
            let second = (fp - &f0 * convert::<T>(2.0) + fm) / h2;
            a2.column_mut(i * n + i).copy_from(&(second * half));
        }
        for i in 0..n {
            for k in (i + 1)..n {
                let fpp = eval(&shifted(&[(i, T::one()), (k, T::one())]))?;
                let fpm = eval(&shifted(&[(i, T::one()), (k, -T::one())]))?;
                let fmp = eval(&shifted(&[(i, -T::one()), (k, T::one())]))?;
                let fmm = eval(&shifted(&[(i, -T::one()), (k, -T::one())]))?;
                let mixed = (fpp - fpm - fmp + fmm) / (convert::<T>(4.0) * h2);
                let halved = mixed * half;
                a2.column_mut(i * n + k).copy_from(&halved);
                a2.column_mut(k * n + i).copy_from(&halved);
            }
        }
    }

    PolynomialDrift::new(a1, a2)
}

/// Lift the physical state to the Carleman coordinates `[x; x (x) x]`.
pub fn lift_state<T: Scalar>(x: &DVector<T>) -> DVector<T> {
    let n = x.len();
    let mut lifted = DVector::<T>::zeros(n + n * n);
    lifted.rows_mut(0, n).copy_from(x);
    lifted.rows_mut(n, n * n).copy_from(&x.kronecker(x));
    lifted
}

/// Build the order-2 Carleman bilinear model of dimension `n + n^2`:
///
/// ```text
/// A = [ A1            A2          ]    N = [ 0                0 ]
///     [ 0   A1 (x) I + I (x) A1   ]        [ B (x) I + I (x) B 0 ]
/// ```
///
/// with `B = [b; 0]` and `C = [c, 0]`. `N` is strictly block lower
/// triangular, hence nilpotent with `N^2 = 0`.
pub fn carleman_lift<T: Scalar>(
    pd: &PolynomialDrift<T>,
    b: &DVector<T>,
    c: &RowDVector<T>,
) -> Result<BilinearModel<T>> {
    let n = pd.dim();
    if b.len() != n || c.len() != n {
        return Err(Error::InvalidArgument(
            "input/output vectors must match the drift dimension".into(),
        ));
    }
    let n2 = n * n;
    let nb = n + n2;
    let id = DMatrix::<T>::identity(n, n);

    let mut ahat = DMatrix::<T>::zeros(nb, nb);
    ahat.view_mut((0, 0), (n, n)).copy_from(pd.a1());
    ahat.view_mut((0, n), (n, n2)).copy_from(pd.a2());
    let lifted_a = pd.a1().kronecker(&id) + id.kronecker(pd.a1());
    ahat.view_mut((n, n), (n2, n2)).copy_from(&lifted_a);

    let mut nhat = DMatrix::<T>::zeros(nb, nb);
    let coupling = b.kronecker(&id) + id.kronecker(b);
    nhat.view_mut((n, 0), (n2, n)).copy_from(&coupling);

    let mut bhat = DVector::<T>::zeros(nb);
    bhat.rows_mut(0, n).copy_from(b);

    let mut chat = RowDVector::<T>::zeros(nb);
    chat.columns_mut(0, n).copy_from(c);

    BilinearModel::new(ahat, nhat, bhat, chat)
}
