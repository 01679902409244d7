//! System-model abstractions and the benchmark systems: the nonlinear RC
//! ladder (a gradient system), random stable LTI fixtures, and bilinear
//! models with nilpotent state-input coupling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carleman::PolynomialDrift;
use crate::error::{Error, Result};
use crate::scalar::{convert, to_f64, Scalar};

pub type DriftFn<T> = Arc<dyn Fn(T, &DVector<T>) -> DVector<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(T) -> DMatrix<T> + Send + Sync>;
pub type OutputFn<T> = Arc<dyn Fn(T, &DVector<T>) -> DVector<T> + Send + Sync>;

/// Input-affine nonlinear system `x' = f(t, x) + B(t) u`, `y = h(t, x)`.
///
/// Evaluation maps must be pure; models are immutable after construction and
/// safe to share across threads.
#[derive(Clone)]
pub struct NonlinearModel<T: Scalar> {
    n: usize,
    p: usize,
    q: usize,
    drift: DriftFn<T>,
    input_map: MatrixFn<T>,
    output_map: OutputFn<T>,
    equilibrium: DVector<T>,
    analytic_taylor: Option<Arc<PolynomialDrift<T>>>,
}

impl<T: Scalar> std::fmt::Debug for NonlinearModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("q", &self.q)
            .finish()
    }
}

impl<T: Scalar> NonlinearModel<T> {
    pub fn new(
        n: usize,
        p: usize,
        q: usize,
        drift: DriftFn<T>,
        input_map: MatrixFn<T>,
        output_map: OutputFn<T>,
    ) -> Result<Self> {
        if n == 0 || p == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        let model = NonlinearModel {
            n,
            p,
            q,
            drift,
            input_map,
            output_map,
            equilibrium: DVector::zeros(n),
            analytic_taylor: None,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let t0 = T::zero();
        let x = DVector::<T>::zeros(self.n);
        if (self.drift)(t0, &x).len() != self.n {
            return Err(Error::InvalidArgument(
                "drift must return an n-vector".into(),
            ));
        }
        let b = (self.input_map)(t0);
        if b.nrows() != self.n || b.ncols() != self.p {
            return Err(Error::InvalidArgument(
                "input map must return an n x p matrix".into(),
            ));
        }
        if (self.output_map)(t0, &x).len() != self.q {
            return Err(Error::InvalidArgument(
                "output map must return a q-vector".into(),
            ));
        }
        Ok(())
    }

    pub fn with_equilibrium(mut self, equilibrium: DVector<T>) -> Result<Self> {
        if equilibrium.len() != self.n {
            return Err(Error::InvalidArgument(
                "equilibrium length must equal the state dimension".into(),
            ));
        }
        self.equilibrium = equilibrium;
        Ok(self)
    }

    pub fn with_analytic_taylor(mut self, taylor: PolynomialDrift<T>) -> Self {
        self.analytic_taylor = Some(Arc::new(taylor));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    pub fn output_dim(&self) -> usize {
        self.q
    }

    pub fn equilibrium(&self) -> &DVector<T> {
        &self.equilibrium
    }

    pub fn analytic_taylor(&self) -> Option<&PolynomialDrift<T>> {
        self.analytic_taylor.as_deref()
    }

    pub fn drift_at(&self, t: T, x: &DVector<T>) -> DVector<T> {
        (self.drift)(t, x)
    }

    pub fn input_at(&self, t: T) -> DMatrix<T> {
        (self.input_map)(t)
    }

    pub fn output_at(&self, t: T, x: &DVector<T>) -> DVector<T> {
        (self.output_map)(t, x)
    }

    /// Verify `f(t, equilibrium) = 0` at the given times.
    pub fn check_equilibrium(&self, times: &[T], tol: T) -> Result<()> {
        for &t in times {
            let r = self.drift_at(t, &self.equilibrium).amax();
            if r > tol {
                return Err(Error::InvalidArgument(format!(
                    "drift at equilibrium has magnitude {:.3e} at t = {:.3e}",
                    to_f64(r),
                    to_f64(t)
                )));
            }
        }
        Ok(())
    }
}

/// Linear time-varying system `x' = A(t) x + B(t) u`, `y = C(t) x`.
#[derive(Clone)]
pub struct LtvModel<T: Scalar> {
    n: usize,
    p: usize,
    q: usize,
    a: MatrixFn<T>,
    b: MatrixFn<T>,
    c: MatrixFn<T>,
}

impl<T: Scalar> LtvModel<T> {
    pub fn new(
        n: usize,
        p: usize,
        q: usize,
        a: MatrixFn<T>,
        b: MatrixFn<T>,
        c: MatrixFn<T>,
    ) -> Result<Self> {
        let model = LtvModel { n, p, q, a, b, c };
        let t0 = T::zero();
        let (am, bm, cm) = (model.a_at(t0), model.b_at(t0), model.c_at(t0));
        if am.nrows() != n
            || am.ncols() != n
            || bm.nrows() != n
            || bm.ncols() != p
            || cm.nrows() != q
            || cm.ncols() != n
        {
            return Err(Error::InvalidArgument(
                "LTV coefficient shapes do not match the declared dimensions".into(),
            ));
        }
        Ok(model)
    }

    /// Constant-coefficient (LTI) model.
    pub fn constant(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        let p = b.ncols();
        let q = c.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::InvalidArgument(
                "inconsistent LTI matrix dimensions".into(),
            ));
        }
        Ok(LtvModel {
            n,
            p,
            q,
            a: Arc::new(move |_t| a.clone()),
            b: Arc::new(move |_t| b.clone()),
            c: Arc::new(move |_t| c.clone()),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    pub fn output_dim(&self) -> usize {
        self.q
    }

    pub fn a_at(&self, t: T) -> DMatrix<T> {
        (self.a)(t)
    }

    pub fn b_at(&self, t: T) -> DMatrix<T> {
        (self.b)(t)
    }

    pub fn c_at(&self, t: T) -> DMatrix<T> {
        (self.c)(t)
    }

    /// View the LTV system as a drift-plus-source nonlinear model.
    pub fn to_nonlinear(&self) -> NonlinearModel<T> {
        let a = Arc::clone(&self.a);
        let b = Arc::clone(&self.b);
        let c = Arc::clone(&self.c);
        NonlinearModel::new(
            self.n,
            self.p,
            self.q,
            Arc::new(move |t, x: &DVector<T>| a(t) * x),
            Arc::new(move |t| b(t)),
            Arc::new(move |t, x: &DVector<T>| c(t) * x),
        )
        .expect("LTV shapes already validated")
    }
}

/// Bilinear system `x' = A x + N x u + B u`, `y = C x` with scalar input and
/// output (the form produced by Carleman bilinearization).
#[derive(Debug, Clone)]
pub struct BilinearModel<T: Scalar> {
    pub ahat: DMatrix<T>,
    pub nhat: DMatrix<T>,
    pub bhat: DVector<T>,
    pub chat: RowDVector<T>,
}

impl<T: Scalar> BilinearModel<T> {
    pub fn new(
        ahat: DMatrix<T>,
        nhat: DMatrix<T>,
        bhat: DVector<T>,
        chat: RowDVector<T>,
    ) -> Result<Self> {
        let nb = ahat.nrows();
        if ahat.ncols() != nb
            || nhat.nrows() != nb
            || nhat.ncols() != nb
            || bhat.len() != nb
            || chat.len() != nb
        {
            return Err(Error::InvalidArgument(
                "inconsistent bilinear matrix dimensions".into(),
            ));
        }
        Ok(BilinearModel {
            ahat,
            nhat,
            bhat,
            chat,
        })
    }

    pub fn dim(&self) -> usize {
        self.ahat.nrows()
    }

    /// Right-hand side of the bilinear dynamics for input value `u`.
    pub fn rhs(&self, x: &DVector<T>, u: T) -> DVector<T> {
        &self.ahat * x + (&self.nhat * x) * u + &self.bhat * u
    }

    pub fn output(&self, x: &DVector<T>) -> T {
        (&self.chat * x)[0]
    }

    /// Smallest `k` with `N^k = 0`, by direct powering, or `None` if no such
    /// `k <= max_power` exists.
    pub fn nilpotency_index(&self, max_power: usize) -> Option<usize> {
        if self.nhat.iter().all(|v| *v == T::zero()) {
            return Some(1);
        }
        let mut power = self.nhat.clone();
        for k in 2..=max_power {
            power = &power * &self.nhat;
            if power.iter().all(|v| *v == T::zero()) {
                return Some(k);
            }
        }
        None
    }

    /// The dressed input direction `sum_k (c/2)^k N^k B`; the series is
    /// finite because `N` is nilpotent (errors otherwise).
    pub fn dressed_input(&self, c: T) -> Result<DVector<T>> {
        let nb = self.dim();
        let half_c = c * convert::<T>(0.5);
        let mut term = self.bhat.clone();
        let mut acc = self.bhat.clone();
        for _k in 1..=nb {
            term = (&self.nhat * &term) * half_c;
            if term.iter().all(|v| *v == T::zero()) {
                return Ok(acc);
            }
            acc += &term;
        }
        Err(Error::NotNilpotent { max_power: nb })
    }

    /// Exact post-impulse state for `u = c * delta(t)`:
    /// `x(0+) = sum_k (c/2)^k N^k B * c`.
    pub fn impulse_state(&self, c: T) -> Result<DVector<T>> {
        Ok(self.dressed_input(c)? * c)
    }

    /// The linear part `(A, B, C)` with the bilinear coupling dropped.
    pub fn linear_part(&self) -> LtvModel<T> {
        let b = DMatrix::from_column_slice(self.dim(), 1, self.bhat.as_slice());
        let c = DMatrix::from_row_slice(1, self.dim(), self.chat.as_slice());
        LtvModel::constant(self.ahat.clone(), b, c).expect("dimensions are consistent")
    }
}

/// Scale constants and orthogonal directions probing the state (or input)
/// space in the empirical-gramian constructions.
#[derive(Debug, Clone)]
pub struct PerturbationSets<T: Scalar> {
    scales: Vec<T>,
    rotations: Vec<DMatrix<T>>,
}

impl<T: Scalar> PerturbationSets<T> {
    /// Scales may be negative (the benchmark uses both signs) but not zero;
    /// every rotation must be orthogonal.
    pub fn new(scales: Vec<T>, rotations: Vec<DMatrix<T>>) -> Result<Self> {
        if scales.is_empty() || rotations.is_empty() {
            return Err(Error::InvalidArgument(
                "perturbation sets must be nonempty".into(),
            ));
        }
        if scales.iter().any(|c| *c == T::zero() || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "scale constants must be finite and nonzero".into(),
            ));
        }
        let dim = rotations[0].nrows();
        let tol = convert::<T>(1e-12).max(T::default_epsilon() * convert::<T>(10.0));
        for r in &rotations {
            if r.nrows() != dim || r.ncols() != dim {
                return Err(Error::InvalidArgument(
                    "all rotations must be square with equal dimension".into(),
                ));
            }
            let dev = (r.transpose() * r - DMatrix::<T>::identity(dim, dim)).amax();
            if dev > tol {
                return Err(Error::InvalidArgument(format!(
                    "rotation fails orthogonality check: deviation {:.3e}",
                    to_f64(dev)
                )));
            }
        }
        Ok(PerturbationSets { scales, rotations })
    }

    /// Sets with the single identity rotation, as in the benchmark.
    pub fn identity(dim: usize, scales: Vec<T>) -> Result<Self> {
        PerturbationSets::new(scales, vec![DMatrix::identity(dim, dim)])
    }

    pub fn dim(&self) -> usize {
        self.rotations[0].nrows()
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    pub fn rotations(&self) -> &[DMatrix<T>] {
        &self.rotations
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn num_rotations(&self) -> usize {
        self.rotations.len()
    }

    pub fn summary(&self) -> String {
        let scales: Vec<String> = self
            .scales
            .iter()
            .map(|c| format!("{}", to_f64(*c)))
            .collect();
        format!(
            "M = [{}], r = {} rotation(s) of dim {}",
            scales.join(", "),
            self.num_rotations(),
            self.dim()
        )
    }
}

/// Diode-plus-resistor constitutive law `i(v) = (e^{40 v} - 1) + v`,
/// evaluated cancellation-free so tiny perturbation scales stay smooth.
#[inline]
fn resistor_law<T: Scalar>(v: T) -> T {
    crate::scalar::exp_m1(convert::<T>(40.0) * v) + v
}

/// Build the n-node nonlinear RC ladder: node 1 carries the input current
/// source and the output tap, every node pair is joined by the nonlinear
/// resistor, and the dynamics are the negative potential gradient.
pub fn build_rc_ladder<T: Scalar>(n: usize) -> Result<NonlinearModel<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the RC ladder needs at least 2 nodes".into(),
        ));
    }
    let drift: DriftFn<T> = Arc::new(move |_t, v: &DVector<T>| {
        let mut dx = DVector::<T>::zeros(n);
        // branch currents: ground resistor at node 1, then node-to-node
        let g0 = resistor_law(v[0]);
        dx[0] -= g0;
        for k in 0..n - 1 {
            let gk = resistor_law(v[k] - v[k + 1]);
            dx[k] -= gk;
            dx[k + 1] += gk;
        }
        dx
    });
    let input: MatrixFn<T> = Arc::new(move |_t| {
        let mut b = DMatrix::<T>::zeros(n, 1);
        b[(0, 0)] = T::one();
        b
    });
    let output: OutputFn<T> = Arc::new(move |_t, v: &DVector<T>| DVector::from_element(1, v[0]));

    Ok(NonlinearModel::new(n, 1, 1, drift, input, output)?
        .with_analytic_taylor(rc_ladder_taylor(n)))
}

/// Analytic first- and second-order Taylor data of the ladder drift at the
/// origin: `g'(0) = 41`, `g''(0) = 1600`, so the quadratic term carries
/// coefficients of magnitude 800.
pub fn rc_ladder_taylor<T: Scalar>(n: usize) -> PolynomialDrift<T> {
    let gp = convert::<T>(41.0);
    let half_gpp = convert::<T>(800.0);

    let mut a1 = DMatrix::<T>::zeros(n, n);
    a1[(0, 0)] -= gp;
    for k in 0..n - 1 {
        a1[(k, k)] -= gp;
        a1[(k, k + 1)] += gp;
        a1[(k + 1, k)] += gp;
        a1[(k + 1, k + 1)] -= gp;
    }

    let mut a2 = DMatrix::<T>::zeros(n, n * n);
    // quadratic part of each branch current distributes over the pair
    // (a, a), (a, b), (b, a), (b, b) of quadratic coordinates
    let add_branch = |row: usize, a: usize, b: Option<usize>, sign: T, a2: &mut DMatrix<T>| {
        let w = sign * half_gpp;
        match b {
            None => a2[(row, a * n + a)] += w,
            Some(b) => {
                a2[(row, a * n + a)] += w;
                a2[(row, a * n + b)] -= w;
                a2[(row, b * n + a)] -= w;
                a2[(row, b * n + b)] += w;
            }
        }
    };
    add_branch(0, 0, None, -T::one(), &mut a2);
    for k in 0..n - 1 {
        add_branch(k, k, Some(k + 1), -T::one(), &mut a2);
        add_branch(k + 1, k, Some(k + 1), T::one(), &mut a2);
    }

    PolynomialDrift::new(a1, a2).expect("ladder Taylor data is consistent")
}

/// Overflow guard for the ladder potential: `e^x` stops being representable
/// near `x = 709`.
pub const POTENTIAL_EXP_LIMIT: f64 = 700.0;

/// The ladder potential `V(v)` (the Lyapunov function of the gradient
/// system); `V(0) = n / 40`.
pub fn rc_ladder_potential<T: Scalar>(v: &DVector<T>) -> Result<T> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the RC ladder needs at least 2 nodes".into(),
        ));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(
            "potential requires a finite state".into(),
        ));
    }
    let forty = convert::<T>(40.0);
    let inv40 = T::one() / forty;
    let half = convert::<T>(0.5);
    let limit = convert::<T>(POTENTIAL_EXP_LIMIT);

    let term = |w: T| -> Result<T> {
        let e = forty * w;
        if e > limit {
            return Err(Error::Overflow {
                exponent: to_f64(e),
                limit: POTENTIAL_EXP_LIMIT,
            });
        }
        Ok(inv40 * e.exp() - w + half * w * w)
    };

    let mut total = term(v[0])?;
    for k in 0..n - 1 {
        total += term(v[k] - v[k + 1])?;
    }
    Ok(total)
}

/// Deterministic random stable LTI fixture: eigenvalues drawn in
/// `[-0.75, -0.5]` under a mild non-orthogonal similarity, so the spectral
/// abscissa is at most `-0.5` and the backward fundamental solution stays
/// invertible over the consistency-test horizons.
pub fn random_stable_lti<T: Scalar>(n: usize, seed: u64) -> Result<LtvModel<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.75..-0.5)).collect();

    let mut scale = 0.2;
    let (s, s_inv) = loop {
        let mut rng_s = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let s = DMatrix::<f64>::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + scale * rng_s.gen_range(-1.0..1.0)
        });
        match s.clone().try_inverse() {
            Some(inv) => break (s, inv),
            None => scale *= 0.5,
        }
    };
    let a64 = &s * DMatrix::from_diagonal(&DVector::from_vec(d)) * &s_inv;

    let a = DMatrix::<T>::from_fn(n, n, |i, j| convert(a64[(i, j)]));
    let b = DMatrix::<T>::from_fn(n, 1, |_, _| convert(rng.gen_range(-1.0..1.0)));
    let c = DMatrix::<T>::from_fn(1, n, |_, _| convert(rng.gen_range(-1.0..1.0)));
    LtvModel::constant(a, b, c)
}
