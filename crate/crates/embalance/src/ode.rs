//! Deterministic initial-value-problem integration, forward and backward in
//! time, with dense output onto uniform sample grids.
//!
//! The adaptive method is Dormand-Prince 5(4); the fixed-step classic RK4 is
//! kept for convergence studies. Between accepted integrator steps samples
//! are produced by cubic Hermite interpolation on the step endpoints.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::NonlinearModel;
use crate::scalar::{convert, to_f64, Scalar};

/// Time-stepping scheme and its accuracy knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntegrationMethod<T: Scalar> {
    Rk4Fixed { step: T },
    Rk45Adaptive { rel_tol: T, abs_tol: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T: Scalar> {
    pub method: IntegrationMethod<T>,
    pub max_steps: usize,
}

impl<T: Scalar> Default for IntegratorConfig<T> {
    fn default() -> Self {
        IntegratorConfig {
            method: IntegrationMethod::Rk45Adaptive {
                rel_tol: convert(1e-8),
                abs_tol: convert(1e-10),
            },
            max_steps: 1_000_000,
        }
    }
}

impl<T: Scalar> IntegratorConfig<T> {
    pub fn rk45(rel_tol: T, abs_tol: T) -> Self {
        IntegratorConfig {
            method: IntegrationMethod::Rk45Adaptive { rel_tol, abs_tol },
            max_steps: 1_000_000,
        }
    }

    pub fn rk4(step: T) -> Self {
        IntegratorConfig {
            method: IntegrationMethod::Rk4Fixed { step },
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be >= 1".into()));
        }
        match self.method {
            IntegrationMethod::Rk4Fixed { step } => {
                if !(step > T::zero()) {
                    return Err(Error::InvalidArgument("fixed step must be > 0".into()));
                }
            }
            IntegrationMethod::Rk45Adaptive { rel_tol, abs_tol } => {
                if !(rel_tol > T::zero()) || !(abs_tol > T::zero()) {
                    return Err(Error::InvalidArgument("tolerances must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// States (and optionally outputs) sampled on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub grid: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub outputs: Option<Vec<DVector<T>>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn t0(&self) -> T {
        self.grid[0]
    }

    pub fn t1(&self) -> T {
        *self.grid.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn output_dim(&self) -> usize {
        self.outputs
            .as_ref()
            .and_then(|y| y.first())
            .map_or(0, |y| y.len())
    }

    /// Largest deviation of the grid from uniform spacing.
    pub fn grid_uniformity(&self) -> T {
        let n = self.grid.len();
        if n < 3 {
            return T::zero();
        }
        let h = (self.t1() - self.t0()) / convert::<T>((n - 1) as f64);
        let mut worst = T::zero();
        for k in 1..n {
            let dev = (self.grid[k] - self.grid[k - 1] - h).abs();
            worst = worst.max(dev);
        }
        worst
    }
}

fn all_finite<T: Scalar>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Build the uniform grid with exact endpoints.
fn uniform_grid<T: Scalar>(t0: T, t1: T, n: usize) -> Vec<T> {
    let span = t1 - t0;
    let mut grid: Vec<T> = (0..=n)
        .map(|k| t0 + span * convert::<T>(k as f64) / convert::<T>(n as f64))
        .collect();
    grid[0] = t0;
    grid[n] = t1;
    grid
}

/// Cubic Hermite interpolation on one integrator step.
fn hermite<T: Scalar>(
    theta: T,
    h: T,
    xa: &DVector<T>,
    xb: &DVector<T>,
    fa: &DVector<T>,
    fb: &DVector<T>,
) -> DVector<T> {
    let one = T::one();
    let dx = xb - xa;
    let poly = &dx * (one - theta - theta) + fa * ((theta - one) * h) + fb * (theta * h);
    xa * (one - theta) + xb * theta + poly * (theta * (theta - one))
}

struct DenseSampler<'g, T: Scalar> {
    grid: &'g [T],
    dir: T,
    next: usize,
    states: Vec<DVector<T>>,
}

impl<'g, T: Scalar> DenseSampler<'g, T> {
    fn new(grid: &'g [T], x0: &DVector<T>, dir: T) -> Self {
        let mut states = Vec::with_capacity(grid.len());
        states.push(x0.clone());
        DenseSampler {
            grid,
            dir,
            next: 1,
            states,
        }
    }

    /// Emit every grid point covered by the accepted step `[ta, tb]`.
    fn advance(
        &mut self,
        ta: T,
        tb: T,
        xa: &DVector<T>,
        xb: &DVector<T>,
        fa: &DVector<T>,
        fb: &DVector<T>,
    ) {
        let h = tb - ta;
        while self.next < self.grid.len() && (self.grid[self.next] - tb) * self.dir <= T::zero() {
            let theta = (self.grid[self.next] - ta) / h;
            self.states.push(hermite(theta, h, xa, xb, fa, fb));
            self.next += 1;
        }
    }

    fn finished(&self) -> bool {
        self.next >= self.grid.len()
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [&[f64]; 6] = [
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `x' = rhs(t, x)` from `t0` to `t1` (backward when `t1 < t0`),
/// sampling the solution at `n + 1` uniform grid points.
pub fn integrate_rhs<T, F>(
    rhs: F,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    n: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> DVector<T>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one interval".into()));
    }
    if t1 == t0 {
        return Err(Error::InvalidArgument("t1 must differ from t0".into()));
    }
    if !all_finite(x0) {
        return Err(Error::NonFiniteState { t: to_f64(t0) });
    }

    let grid = uniform_grid(t0, t1, n);
    let dir = if t1 > t0 { T::one() } else { -T::one() };
    let span = (t1 - t0).abs();

    let states = match cfg.method {
        IntegrationMethod::Rk45Adaptive { rel_tol, abs_tol } => dopri5(
            &rhs,
            x0,
            &grid,
            t0,
            t1,
            dir,
            span,
            rel_tol,
            abs_tol,
            cfg.max_steps,
        )?,
        IntegrationMethod::Rk4Fixed { step } => {
            rk4_fixed(&rhs, x0, &grid, t0, t1, dir, step, cfg.max_steps)?
        }
    };

    Ok(Trajectory {
        grid,
        states,
        outputs: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn dopri5<T, F>(
    rhs: &F,
    x0: &DVector<T>,
    grid: &[T],
    t0: T,
    t1: T,
    dir: T,
    span: T,
    rel_tol: T,
    abs_tol: T,
    max_steps: usize,
) -> Result<Vec<DVector<T>>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> DVector<T>,
{
    let dim = x0.len();
    let mut sampler = DenseSampler::new(grid, x0, dir);

    let mut t = t0;
    let mut x = x0.clone();
    let mut f = rhs(t, &x);
    if !all_finite(&f) {
        return Err(Error::NonFiniteState { t: to_f64(t) });
    }

    // Steps never span more than one output interval, keeping the cubic
    // interpolation error below the step error.
    let h_cap = span / convert::<T>((grid.len() - 1) as f64);
    let mut h = (span * convert::<T>(1e-3)).min(h_cap) * dir;
    let h_floor = span * T::default_epsilon() * convert::<T>(16.0);
    let x0_scale = x0.norm() + T::one();
    let rate_scale = f.norm() + x0_scale / span.abs();
    let blowup = convert::<T>(1e6);
    let mut steps = 0usize;
    let mut last_trial_nonfinite = false;

    let a: Vec<Vec<T>> = DP_A
        .iter()
        .map(|row| row.iter().map(|&v| convert::<T>(v)).collect())
        .collect();
    let c: Vec<T> = DP_C.iter().map(|&v| convert::<T>(v)).collect();
    let e: Vec<T> = DP_ERR.iter().map(|&v| convert::<T>(v)).collect();

    while !sampler.finished() {
        if steps >= max_steps {
            return Err(Error::StepLimitExceeded {
                t: to_f64(t),
                steps,
            });
        }
        steps += 1;

        if h.abs() > h_cap {
            h = h_cap * dir;
        }
        // clamp the final step onto t1
        if (t + h - t1) * dir > T::zero() {
            h = t1 - t;
        }

        let mut k: Vec<DVector<T>> = Vec::with_capacity(7);
        k.push(f.clone());
        let mut trial_ok = true;
        for stage in 0..6 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                xs += kj * (a[stage][j] * h);
            }
            let ks = rhs(t + c[stage] * h, &xs);
            if !all_finite(&ks) {
                trial_ok = false;
                break;
            }
            k.push(ks);
        }

        let (x_new, err_norm) = if trial_ok {
            // 5th-order solution is the stage-7 state (FSAL)
            let mut x_new = x.clone();
            for (j, kj) in k.iter().take(6).enumerate() {
                if a[5][j] != T::zero() {
                    x_new += kj * (a[5][j] * h);
                }
            }
            if !all_finite(&x_new) {
                trial_ok = false;
                (x_new, T::zero())
            } else {
                let mut err = DVector::<T>::zeros(dim);
                for (j, kj) in k.iter().enumerate() {
                    if e[j] != T::zero() {
                        err += kj * (e[j] * h);
                    }
                }
                let mut acc = T::zero();
                for i in 0..dim {
                    let sc = abs_tol + rel_tol * x[i].abs().max(x_new[i].abs());
                    let r = err[i] / sc;
                    acc += r * r;
                }
                let err_norm = (acc / convert::<T>(dim as f64)).sqrt();
                (x_new, err_norm)
            }
        } else {
            (x.clone(), T::zero())
        };

        if !trial_ok {
            last_trial_nonfinite = true;
            h *= convert::<T>(0.2);
            if h.abs() < h_floor {
                return Err(Error::NonFiniteState { t: to_f64(t) });
            }
            continue;
        }
        // blow-up signature: the state escaped its initial scale, or the
        // vector field's local rate exploded (exponential nonlinearities
        // blow up in rate while the state grows slowly)
        let escaping = x.norm() > blowup * x0_scale || f.norm() > blowup * rate_scale;

        if err_norm <= T::one() {
            // accepted; k7 = rhs at the new point (FSAL)
            let f_new = if k.len() == 7 {
                k[6].clone()
            } else {
                rhs(t + h, &x_new)
            };
            let t_new = t + h;
            sampler.advance(t, t_new, &x, &x_new, &f, &f_new);
            t = t_new;
            x = x_new;
            f = f_new;
            last_trial_nonfinite = false;

            let factor = if err_norm == T::zero() {
                convert::<T>(5.0)
            } else {
                let inv5 = convert::<T>(-0.2);
                (convert::<T>(0.9) * err_norm.powf(inv5))
                    .min(convert::<T>(5.0))
                    .max(convert::<T>(0.2))
            };
            h *= factor;
        } else {
            let inv5 = convert::<T>(-0.2);
            let factor = (convert::<T>(0.9) * err_norm.powf(inv5)).max(convert::<T>(0.2));
            h *= factor;
        }

        if h.abs() < h_floor {
            // the step has collapsed: a state escaping its initial scale
            // marks finite-time blow-up rather than exhaustion
            if last_trial_nonfinite || escaping {
                return Err(Error::NonFiniteState { t: to_f64(t) });
            }
            return Err(Error::StepLimitExceeded {
                t: to_f64(t),
                steps,
            });
        }
    }

    Ok(sampler.states)
}

#[allow(clippy::too_many_arguments)]
fn rk4_fixed<T, F>(
    rhs: &F,
    x0: &DVector<T>,
    grid: &[T],
    t0: T,
    t1: T,
    dir: T,
    step: T,
    max_steps: usize,
) -> Result<Vec<DVector<T>>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> DVector<T>,
{
    let mut sampler = DenseSampler::new(grid, x0, dir);
    let mut t = t0;
    let mut x = x0.clone();
    let mut f = rhs(t, &x);
    if !all_finite(&f) {
        return Err(Error::NonFiniteState { t: to_f64(t) });
    }
    let half = convert::<T>(0.5);
    let sixth = convert::<T>(1.0 / 6.0);
    let two = convert::<T>(2.0);
    let mut steps = 0usize;

    while !sampler.finished() {
        if steps >= max_steps {
            return Err(Error::StepLimitExceeded {
                t: to_f64(t),
                steps,
            });
        }
        steps += 1;

        let mut h = step * dir;
        if (t + h - t1) * dir > T::zero() {
            h = t1 - t;
        }

        let k1 = f.clone();
        let k2 = rhs(t + h * half, &(&x + &k1 * (h * half)));
        let k3 = rhs(t + h * half, &(&x + &k2 * (h * half)));
        let k4 = rhs(t + h, &(&x + &k3 * h));
        let x_new = &x + (&k1 + &k2 * two + &k3 * two + &k4) * (h * sixth);
        if !all_finite(&x_new) {
            return Err(Error::NonFiniteState { t: to_f64(t) });
        }
        let t_new = t + h;
        let f_new = rhs(t_new, &x_new);
        if !all_finite(&f_new) {
            return Err(Error::NonFiniteState { t: to_f64(t_new) });
        }
        sampler.advance(t, t_new, &x, &x_new, &k1, &f_new);
        t = t_new;
        x = x_new;
        f = f_new;
    }

    Ok(sampler.states)
}

/// Integrate a model under input `u`, recording states and outputs on the
/// uniform grid.
pub fn integrate<T, U>(
    model: &NonlinearModel<T>,
    x0: &DVector<T>,
    u: U,
    t0: T,
    t1: T,
    n: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>>
where
    T: Scalar,
    U: Fn(T) -> DVector<T>,
{
    let rhs = |t: T, x: &DVector<T>| model.drift_at(t, x) + model.input_at(t) * u(t);
    let mut traj = integrate_rhs(rhs, x0, t0, t1, n, cfg)?;
    attach_outputs(model, &mut traj);
    Ok(traj)
}

/// Integrate a model with `u = 0` (drift only).
pub fn integrate_zero_input<T: Scalar>(
    model: &NonlinearModel<T>,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    n: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    let rhs = |t: T, x: &DVector<T>| model.drift_at(t, x);
    let mut traj = integrate_rhs(rhs, x0, t0, t1, n, cfg)?;
    attach_outputs(model, &mut traj);
    Ok(traj)
}

fn attach_outputs<T: Scalar>(model: &NonlinearModel<T>, traj: &mut Trajectory<T>) {
    let outputs = traj
        .grid
        .iter()
        .zip(traj.states.iter())
        .map(|(&t, x)| model.output_at(t, x))
        .collect();
    traj.outputs = Some(outputs);
}

/// Realize the impulsive input `u(t) = scale * direction * delta(t)` as the
/// jump initial condition `x(0+) = equilibrium + B(t0) * scale * direction`,
/// then integrate with zero input. Exact for input-affine systems.
pub fn impulse_response<T: Scalar>(
    model: &NonlinearModel<T>,
    scale: T,
    direction: &DVector<T>,
    t1: T,
    n: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    if direction.len() != model.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "impulse direction has length {}, expected input dimension {}",
            direction.len(),
            model.input_dim()
        )));
    }
    let t0 = T::zero();
    let x0 = model.equilibrium() + model.input_at(t0) * (direction * scale);
    integrate_zero_input(model, &x0, t0, t1, n, cfg)
}

/// Time average of the trajectory states via the trapezoid rule; a finite
/// horizon proxy for the infinite-time mean of a stable response.
pub fn mean_value<T: Scalar>(traj: &Trajectory<T>) -> DVector<T> {
    mean_of_samples(&traj.grid, &traj.states)
}

/// Trapezoid-rule time average of arbitrary samples on a grid.
pub fn mean_of_samples<T: Scalar>(grid: &[T], samples: &[DVector<T>]) -> DVector<T> {
    assert_eq!(grid.len(), samples.len(), "grid/sample length mismatch");
    assert!(!samples.is_empty(), "mean of an empty trajectory");
    if samples.len() == 1 {
        return samples[0].clone();
    }
    let dim = samples[0].len();
    let half = convert::<T>(0.5);
    let mut acc = DVector::<T>::zeros(dim);
    for k in 1..samples.len() {
        let dt = grid[k] - grid[k - 1];
        acc += (&samples[k] + &samples[k - 1]) * (dt * half);
    }
    let span = *grid.last().unwrap() - grid[0];
    acc / span
}
