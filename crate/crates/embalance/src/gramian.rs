//! The four gramian constructions: Lall empirical gramians from impulse and
//! initial-condition ensembles, fundamental-solution gramians for LTV
//! systems, Lyapunov-form gramians for bilinear systems with nilpotent
//! coupling, and the averaged-fundamental-solution gramians for nonlinear
//! drift.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{conditioned_inverse, Gramian, GramianMethod, LyapunovSolver};
use crate::model::{BilinearModel, LtvModel, NonlinearModel, PerturbationSets};
use crate::ode::{
    impulse_response, integrate_rhs, integrate_zero_input, mean_of_samples, IntegratorConfig,
    Trajectory,
};
use crate::scalar::{convert, to_f64, Scalar};

/// Composite quadrature rule on a uniform node grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    Trapezoid,
    Simpson,
}

impl std::fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuadratureRule::Trapezoid => f.write_str("trapezoid"),
            QuadratureRule::Simpson => f.write_str("simpson"),
        }
    }
}

/// Horizon and discretization replacing the improper gramian integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig<T: Scalar> {
    pub horizon: T,
    pub nodes: usize,
    pub rule: QuadratureRule,
}

impl<T: Scalar> QuadratureConfig<T> {
    pub fn new(horizon: T, nodes: usize, rule: QuadratureRule) -> Result<Self> {
        if !(horizon > T::zero()) {
            return Err(Error::InvalidArgument(
                "quadrature horizon must be positive".into(),
            ));
        }
        if nodes < 3 {
            return Err(Error::InvalidArgument(
                "quadrature needs at least 3 nodes".into(),
            ));
        }
        if rule == QuadratureRule::Simpson && nodes % 2 == 0 {
            return Err(Error::InvalidArgument(
                "Simpson quadrature needs an odd node count".into(),
            ));
        }
        Ok(QuadratureConfig {
            horizon,
            nodes,
            rule,
        })
    }

    pub fn simpson(horizon: T, nodes: usize) -> Result<Self> {
        QuadratureConfig::new(horizon, nodes, QuadratureRule::Simpson)
    }

    pub fn trapezoid(horizon: T, nodes: usize) -> Result<Self> {
        QuadratureConfig::new(horizon, nodes, QuadratureRule::Trapezoid)
    }

    /// Node times on `[0, horizon]`.
    pub fn node_times(&self) -> Vec<T> {
        let n = self.nodes - 1;
        let mut times: Vec<T> = (0..=n)
            .map(|k| self.horizon * convert::<T>(k as f64) / convert::<T>(n as f64))
            .collect();
        times[0] = T::zero();
        times[n] = self.horizon;
        times
    }

    /// Quadrature weights matching [`Self::node_times`].
    pub fn weights(&self) -> Vec<T> {
        let n = self.nodes - 1;
        let h = self.horizon / convert::<T>(n as f64);
        match self.rule {
            QuadratureRule::Trapezoid => {
                let half = h * convert::<T>(0.5);
                (0..=n)
                    .map(|k| if k == 0 || k == n { half } else { h })
                    .collect()
            }
            QuadratureRule::Simpson => {
                let third = h / convert::<T>(3.0);
                (0..=n)
                    .map(|k| {
                        let c = if k == 0 || k == n {
                            1.0
                        } else if k % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        third * convert::<T>(c)
                    })
                    .collect()
            }
        }
    }

    pub fn tag(&self) -> String {
        format!("{}[{}]", self.rule, self.nodes)
    }
}

/// Whether the Lall-gramian means are the known equilibrium or the
/// finite-horizon time average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    /// Use the model equilibrium (the infinite-horizon limit for
    /// asymptotically stable responses); avoids the O(1/T) bias of the
    /// finite-horizon average.
    Equilibrium,
    /// Finite-horizon trapezoid time average.
    TimeAverage,
}

/// Per-node diagnostics of a quadrature-assembled gramian: the trace of the
/// PSD integrand (a tail indicator) and, where an inverse is taken, the
/// condition number at each node.
#[derive(Debug, Clone)]
pub struct NodeTrace<T: Scalar> {
    pub times: Vec<T>,
    pub integrand_trace: Vec<T>,
    pub condition: Vec<T>,
}

impl<T: Scalar> NodeTrace<T> {
    fn new(times: Vec<T>) -> Self {
        let n = times.len();
        NodeTrace {
            times,
            integrand_trace: vec![T::zero(); n],
            condition: Vec::new(),
        }
    }
}

/// Zero-input simulations from all perturbed initial conditions
/// `x(0) = c_m T_l e_i`, sampled on the quadrature node grid.
struct EnsembleMember<T: Scalar> {
    i: usize,
    l: usize,
    m: usize,
    states: Vec<DVector<T>>,
    outputs: Vec<DVector<T>>,
}

fn zero_input_ensemble<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    t_end: T,
    nodes: usize,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<EnsembleMember<T>>> {
    let n = model.state_dim();
    if sets.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "perturbation sets have dimension {}, model has {}",
            sets.dim(),
            n
        )));
    }
    let mut triples = Vec::new();
    for i in 0..n {
        for l in 0..sets.num_rotations() {
            for m in 0..sets.num_scales() {
                triples.push((i, l, m));
            }
        }
    }
    let results: Vec<Result<EnsembleMember<T>>> = triples
        .par_iter()
        .map(|&(i, l, m)| {
            let c = sets.scales()[m];
            let x0 = sets.rotations()[l].column(i) * c;
            let traj =
                integrate_zero_input(model, &x0.clone_owned(), T::zero(), t_end, nodes - 1, cfg)
                    .map_err(|e| e.for_member(i, l, m))?;
            Ok(EnsembleMember {
                i,
                l,
                m,
                states: traj.states,
                outputs: traj.outputs.unwrap_or_default(),
            })
        })
        .collect();
    // fixed order: the first failing member (lexicographic) wins
    results.into_iter().collect()
}

/// State-space average of the nonlinear fundamental solution on the
/// quadrature node grid. `times` are the actual evaluation times (negative
/// for the backward span).
#[derive(Debug, Clone)]
pub struct AveragedFundamental<T: Scalar> {
    pub times: Vec<T>,
    pub values: Vec<DMatrix<T>>,
    pub sets: PerturbationSets<T>,
}

/// Direction of the span the averaged fundamental solution is sampled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanDirection {
    Forward,
    Backward,
}

/// Assemble `<Theta(t)> = (1/rs) sum_{i,l,m} (1/c_m) x^{ilm}(t) e_i^T T_l^T`
/// from `r * s * n` zero-input simulations. `<Theta(0)> = I` by construction.
pub fn averaged_fundamental<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    direction: SpanDirection,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<AveragedFundamental<T>> {
    let n = model.state_dim();
    let t_end = match direction {
        SpanDirection::Forward => quad.horizon,
        SpanDirection::Backward => -quad.horizon,
    };
    let members = zero_input_ensemble(model, sets, t_end, quad.nodes, cfg)?;

    let r = sets.num_rotations();
    let s = sets.num_scales();
    let norm = T::one() / convert::<T>((r * s) as f64);

    let mut values: Vec<DMatrix<T>> = vec![DMatrix::zeros(n, n); quad.nodes];
    for l in 0..r {
        for m in 0..s {
            let inv_c = T::one() / sets.scales()[m];
            // columns of X are x^{ilm}; member order within (l, m) is by i
            for j in 0..quad.nodes {
                let mut x = DMatrix::<T>::zeros(n, n);
                for member in members.iter().filter(|mb| mb.l == l && mb.m == m) {
                    x.column_mut(member.i).copy_from(&member.states[j]);
                }
                values[j] += x * (sets.rotations()[l].transpose() * (inv_c * norm));
            }
        }
    }

    let times: Vec<T> = quad
        .node_times()
        .into_iter()
        .map(|tau| match direction {
            SpanDirection::Forward => tau,
            SpanDirection::Backward => -tau,
        })
        .collect();

    Ok(AveragedFundamental {
        times,
        values,
        sets: sets.clone(),
    })
}

/// Def-3 controllability gramian
/// `P = int_0^T <Theta(-tau)>^{-1} B(-tau) B^T(-tau) <Theta(-tau)>^{-T} dtau`.
pub fn nonlinear_controllability<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    cond_limit: T,
) -> Result<Gramian<T>> {
    nonlinear_controllability_traced(model, sets, quad, cfg, cond_limit).map(|(g, _)| g)
}

pub fn nonlinear_controllability_traced<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    cond_limit: T,
) -> Result<(Gramian<T>, NodeTrace<T>)> {
    let n = model.state_dim();
    let avg = averaged_fundamental(model, sets, SpanDirection::Backward, quad, cfg)?;
    let weights = quad.weights();

    let mut p = DMatrix::<T>::zeros(n, n);
    let mut trace = NodeTrace::new(avg.times.clone());
    for (j, theta) in avg.values.iter().enumerate() {
        let t = avg.times[j];
        let inv = conditioned_inverse(theta, cond_limit).map_err(|e| e.at_node(to_f64(t)))?;
        let v = &inv * model.input_at(t);
        let contribution = &v * v.transpose();
        trace.integrand_trace[j] = contribution.trace();
        trace.condition.push(condition_estimate(theta));
        p += contribution * weights[j];
    }

    Ok((
        Gramian::repaired(
            p,
            GramianMethod::NonlinearP,
            quad.horizon,
            quad.tag(),
            avg.sets.summary(),
        ),
        trace,
    ))
}

fn condition_estimate<T: Scalar>(m: &DMatrix<T>) -> T {
    match crate::linalg::svd_sorted(m) {
        Ok(parts) => {
            let smin = parts.sigma[parts.sigma.len() - 1];
            if smin > T::zero() {
                parts.sigma[0] / smin
            } else {
                T::from_f64(f64::INFINITY).unwrap()
            }
        }
        Err(_) => T::from_f64(f64::NAN).unwrap(),
    }
}

/// Def-4 observability gramian `Q = int_0^T z^T(tau) z(tau) dtau` with
/// `z(t) = (1/rs) sum (1/c_m) y^{ilm}(t) e_i^T T_l^T`.
pub fn nonlinear_observability<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Gramian<T>> {
    nonlinear_observability_traced(model, sets, quad, cfg).map(|(g, _)| g)
}

pub fn nonlinear_observability_traced<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<(Gramian<T>, NodeTrace<T>)> {
    let n = model.state_dim();
    let q_dim = model.output_dim();
    let members = zero_input_ensemble(model, sets, quad.horizon, quad.nodes, cfg)?;
    let weights = quad.weights();
    let times = quad.node_times();

    let r = sets.num_rotations();
    let s = sets.num_scales();
    let norm = T::one() / convert::<T>((r * s) as f64);

    let mut q = DMatrix::<T>::zeros(n, n);
    let mut trace = NodeTrace::new(times.clone());
    for j in 0..quad.nodes {
        let mut z = DMatrix::<T>::zeros(q_dim, n);
        for l in 0..r {
            for m in 0..s {
                let inv_c = T::one() / sets.scales()[m];
                let mut y = DMatrix::<T>::zeros(q_dim, n);
                for member in members.iter().filter(|mb| mb.l == l && mb.m == m) {
                    y.column_mut(member.i).copy_from(&member.outputs[j]);
                }
                z += y * (sets.rotations()[l].transpose() * (inv_c * norm));
            }
        }
        let contribution = z.transpose() * &z;
        trace.integrand_trace[j] = contribution.trace();
        q += contribution * weights[j];
    }

    Ok((
        Gramian::repaired(
            q,
            GramianMethod::NonlinearQ,
            quad.horizon,
            quad.tag(),
            sets.summary(),
        ),
        trace,
    ))
}

/// Def-1 empirical controllability gramian from impulse-response ensembles.
/// The perturbation sets live in the input space (dimension `p`).
pub fn lall_controllability<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    mean_mode: MeanMode,
) -> Result<Gramian<T>> {
    lall_controllability_traced(model, sets, quad, cfg, mean_mode).map(|(g, _)| g)
}

pub fn lall_controllability_traced<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    mean_mode: MeanMode,
) -> Result<(Gramian<T>, NodeTrace<T>)> {
    let n = model.state_dim();
    let p_dim = model.input_dim();
    if sets.dim() != p_dim {
        return Err(Error::InvalidArgument(format!(
            "Def-1 sets probe the input space: expected dimension {}, got {}",
            p_dim,
            sets.dim()
        )));
    }
    let r = sets.num_rotations();
    let s = sets.num_scales();

    let mut triples = Vec::new();
    for i in 0..p_dim {
        for l in 0..r {
            for m in 0..s {
                triples.push((i, l, m));
            }
        }
    }
    let trajectories: Vec<Result<Trajectory<T>>> = triples
        .par_iter()
        .map(|&(i, l, m)| {
            let c = sets.scales()[m];
            let direction = sets.rotations()[l].column(i).clone_owned();
            impulse_response(model, c, &direction, quad.horizon, quad.nodes - 1, cfg)
                .map_err(|e| e.for_member(i, l, m))
        })
        .collect();

    let weights = quad.weights();
    let norm = T::one() / convert::<T>((r * s) as f64);
    let mut p = DMatrix::<T>::zeros(n, n);
    let mut trace = NodeTrace::new(quad.node_times());

    for (idx, traj) in trajectories.into_iter().enumerate() {
        let traj = traj?;
        let (_, _, m) = triples[idx];
        let c = sets.scales()[m];
        let scale = norm / (c * c);
        let mean = match mean_mode {
            MeanMode::Equilibrium => model.equilibrium().clone(),
            MeanMode::TimeAverage => mean_of_samples(&traj.grid, &traj.states),
        };
        for j in 0..quad.nodes {
            let dev = &traj.states[j] - &mean;
            let w = weights[j] * scale;
            trace.integrand_trace[j] += dev.norm_squared() * scale;
            p += (&dev * dev.transpose()) * w;
        }
    }

    if p.amax() == T::zero() {
        return Err(Error::DegenerateGramian);
    }
    Ok((
        Gramian::repaired(
            p,
            GramianMethod::LallP,
            quad.horizon,
            quad.tag(),
            sets.summary(),
        ),
        trace,
    ))
}

/// Def-1 gramian for a bilinear system, realizing each impulse through the
/// exact post-impulse state (the nilpotent series) followed by zero-input
/// (linear) decay.
pub fn lall_controllability_bilinear<T: Scalar>(
    model: &BilinearModel<T>,
    scales: &[T],
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Gramian<T>> {
    if scales.is_empty() || scales.iter().any(|c| *c == T::zero()) {
        return Err(Error::InvalidArgument(
            "scale set must be nonempty with nonzero entries".into(),
        ));
    }
    let nb = model.dim();
    let s = scales.len();
    let weights = quad.weights();

    let trajectories: Vec<Result<Trajectory<T>>> = scales
        .par_iter()
        .enumerate()
        .map(|(m, &c)| {
            let x0 = model.impulse_state(c)?;
            let a = model.ahat.clone();
            integrate_rhs(
                move |_t, x: &DVector<T>| &a * x,
                &x0,
                T::zero(),
                quad.horizon,
                quad.nodes - 1,
                cfg,
            )
            .map_err(|e| e.for_member(0, 0, m))
        })
        .collect();

    let mut p = DMatrix::<T>::zeros(nb, nb);
    for (m, traj) in trajectories.into_iter().enumerate() {
        let traj = traj?;
        let c = scales[m];
        let scale = T::one() / (convert::<T>(s as f64) * c * c);
        for j in 0..quad.nodes {
            let x = &traj.states[j];
            p += (x * x.transpose()) * (weights[j] * scale);
        }
    }

    if p.amax() == T::zero() {
        return Err(Error::DegenerateGramian);
    }
    let summary = format!(
        "M = [{}], exact bilinear impulses",
        scales
            .iter()
            .map(|c| format!("{}", to_f64(*c)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(Gramian::repaired(
        p,
        GramianMethod::LallP,
        quad.horizon,
        quad.tag(),
        summary,
    ))
}

/// Def-2 empirical observability gramian from initial-condition ensembles.
/// The perturbation sets live in the state space (dimension `n`).
pub fn lall_observability<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    mean_mode: MeanMode,
) -> Result<Gramian<T>> {
    lall_observability_traced(model, sets, quad, cfg, mean_mode).map(|(g, _)| g)
}

pub fn lall_observability_traced<T: Scalar>(
    model: &NonlinearModel<T>,
    sets: &PerturbationSets<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    mean_mode: MeanMode,
) -> Result<(Gramian<T>, NodeTrace<T>)> {
    let n = model.state_dim();
    let q_dim = model.output_dim();
    let members = zero_input_ensemble(model, sets, quad.horizon, quad.nodes, cfg)?;
    let weights = quad.weights();
    let times = quad.node_times();

    let r = sets.num_rotations();
    let s = sets.num_scales();
    let norm = T::one() / convert::<T>((r * s) as f64);
    let y_eq = model.output_at(T::zero(), model.equilibrium());

    let mut q = DMatrix::<T>::zeros(n, n);
    let mut trace = NodeTrace::new(times);

    for l in 0..r {
        for m in 0..s {
            let c = sets.scales()[m];
            let scale = norm / (c * c);
            // deviation outputs for this (l, m): columns indexed by i
            let mut devs: Vec<DMatrix<T>> = vec![DMatrix::zeros(q_dim, n); quad.nodes];
            for member in members.iter().filter(|mb| mb.l == l && mb.m == m) {
                let mean = match mean_mode {
                    MeanMode::Equilibrium => y_eq.clone(),
                    MeanMode::TimeAverage => mean_of_samples(&quad.node_times(), &member.outputs),
                };
                for j in 0..quad.nodes {
                    devs[j]
                        .column_mut(member.i)
                        .copy_from(&(&member.outputs[j] - &mean));
                }
            }
            let mut acc = DMatrix::<T>::zeros(n, n);
            for j in 0..quad.nodes {
                let psi = devs[j].transpose() * &devs[j];
                trace.integrand_trace[j] += psi.trace() * scale;
                acc += psi * weights[j];
            }
            q += sets.rotations()[l].clone() * acc * sets.rotations()[l].transpose() * scale;
        }
    }

    if q.amax() == T::zero() {
        return Err(Error::DegenerateGramian);
    }
    Ok((
        Gramian::repaired(
            q,
            GramianMethod::LallQ,
            quad.horizon,
            quad.tag(),
            sets.summary(),
        ),
        trace,
    ))
}

/// LTV gramians from the fundamental solution: integrate `Theta' = A(t)
/// Theta` column-wise forward and backward, then quadrature Eqs for P and Q.
pub fn ltv_gramians<T: Scalar>(
    model: &LtvModel<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    cond_limit: T,
) -> Result<(Gramian<T>, Gramian<T>)> {
    ltv_gramians_traced(model, quad, cfg, cond_limit).map(|(p, q, _, _)| (p, q))
}

pub fn ltv_gramians_traced<T: Scalar>(
    model: &LtvModel<T>,
    quad: &QuadratureConfig<T>,
    cfg: &IntegratorConfig<T>,
    cond_limit: T,
) -> Result<(Gramian<T>, Gramian<T>, NodeTrace<T>, NodeTrace<T>)> {
    let n = model.state_dim();
    let taus = quad.node_times();
    let weights = quad.weights();

    let fundamental = |t_end: T| -> Result<Vec<DMatrix<T>>> {
        let columns: Vec<Result<Vec<DVector<T>>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = DVector::<T>::zeros(n);
                e[i] = T::one();
                let a = model.clone();
                let traj = integrate_rhs(
                    move |t, x: &DVector<T>| a.a_at(t) * x,
                    &e,
                    T::zero(),
                    t_end,
                    quad.nodes - 1,
                    cfg,
                )?;
                Ok(traj.states)
            })
            .collect();
        let mut thetas = vec![DMatrix::<T>::zeros(n, n); quad.nodes];
        for (i, col) in columns.into_iter().enumerate() {
            let col = col?;
            for j in 0..quad.nodes {
                thetas[j].column_mut(i).copy_from(&col[j]);
            }
        }
        Ok(thetas)
    };

    let theta_fwd = fundamental(quad.horizon)?;
    let theta_bwd = fundamental(-quad.horizon)?;

    let mut p = DMatrix::<T>::zeros(n, n);
    let mut p_trace = NodeTrace::new(taus.iter().map(|&t| -t).collect());
    for j in 0..quad.nodes {
        let tau = taus[j];
        let inv =
            conditioned_inverse(&theta_bwd[j], cond_limit).map_err(|e| e.at_node(to_f64(-tau)))?;
        let v = &inv * model.b_at(-tau);
        let contribution = &v * v.transpose();
        p_trace.integrand_trace[j] = contribution.trace();
        p_trace.condition.push(condition_estimate(&theta_bwd[j]));
        p += contribution * weights[j];
    }

    let mut q = DMatrix::<T>::zeros(n, n);
    let mut q_trace = NodeTrace::new(taus.clone());
    for j in 0..quad.nodes {
        let tau = taus[j];
        let ct = model.c_at(tau) * &theta_fwd[j];
        let contribution = ct.transpose() * &ct;
        q_trace.integrand_trace[j] = contribution.trace();
        q += contribution * weights[j];
    }

    let p_gram = Gramian::repaired(
        p,
        GramianMethod::LtvP,
        quad.horizon,
        quad.tag(),
        "fundamental solution",
    );
    let q_gram = Gramian::repaired(
        q,
        GramianMethod::LtvQ,
        quad.horizon,
        quad.tag(),
        "fundamental solution",
    );
    Ok((p_gram, q_gram, p_trace, q_trace))
}

/// Lyapunov-form gramians of a bilinear system with nilpotent coupling.
///
/// With `normalize` off this reproduces the literal dressed-input sum
/// `sum_m S(c_m) B B^T S(c_m)^T`; with it on, the `1/s` weighting makes the
/// construction agree with Def 1 applied to the bilinear system.
pub fn bilinear_gramians<T: Scalar>(
    model: &BilinearModel<T>,
    scales: &[T],
    normalize: bool,
) -> Result<(Gramian<T>, Gramian<T>)> {
    if scales.is_empty() || scales.iter().any(|c| *c == T::zero()) {
        return Err(Error::InvalidArgument(
            "scale set must be nonempty with nonzero entries".into(),
        ));
    }
    let nb = model.dim();
    let solver = LyapunovSolver::new(&model.ahat)?;

    let mut bbar = DMatrix::<T>::zeros(nb, nb);
    for &c in scales {
        let dressed = model.dressed_input(c)?;
        bbar += &dressed * dressed.transpose();
    }
    if normalize {
        bbar /= convert::<T>(scales.len() as f64);
    }

    let p = solver.solve(&bbar)?;
    let ctc = model.chat.transpose() * &model.chat;
    let q = solver.solve_adjoint(&ctc)?;

    let summary = format!(
        "M = [{}], normalize = {}",
        scales
            .iter()
            .map(|c| format!("{}", to_f64(*c)))
            .collect::<Vec<_>>()
            .join(", "),
        normalize
    );
    let inf = T::from_f64(f64::INFINITY).unwrap();
    Ok((
        Gramian::new(
            p,
            GramianMethod::BilinearP,
            inf,
            "lyapunov",
            summary.clone(),
        ),
        Gramian::new(q, GramianMethod::BilinearQ, inf, "lyapunov", summary),
    ))
}

/// Gramians of the linear part only: `A P + P A^T + B B^T = 0` and
/// `A^T Q + Q A + C^T C = 0`.
pub fn linear_part_gramians<T: Scalar>(
    model: &BilinearModel<T>,
) -> Result<(Gramian<T>, Gramian<T>)> {
    let solver = LyapunovSolver::new(&model.ahat)?;
    let bbt = &model.bhat * model.bhat.transpose();
    let ctc = model.chat.transpose() * &model.chat;
    let p = solver.solve(&bbt)?;
    let q = solver.solve_adjoint(&ctc)?;
    let inf = T::from_f64(f64::INFINITY).unwrap();
    Ok((
        Gramian::new(p, GramianMethod::LtiP, inf, "lyapunov", "linear part"),
        Gramian::new(q, GramianMethod::LtiQ, inf, "lyapunov", "linear part"),
    ))
}
