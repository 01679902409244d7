//! Square-root balanced truncation from a gramian pair and Petrov-Galerkin
//! projection of nonlinear and bilinear models onto the balanced subspace.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, spectral_abscissa, svd_sorted, Gramian};
use crate::model::{BilinearModel, NonlinearModel};
use crate::ode::{integrate_zero_input, IntegratorConfig};
use crate::scalar::{convert, to_f64, Scalar};

/// Biorthogonal projection pair with the retained Hankel singular values.
#[derive(Debug, Clone)]
pub struct ReductionBasis<T: Scalar> {
    pub v: DMatrix<T>,
    pub w: DMatrix<T>,
    /// Retained Hankel singular values, strictly positive, non-increasing.
    pub hankel: Vec<T>,
    /// First discarded singular value (zero when nothing was discarded).
    pub discarded_tail: T,
    /// Gramian method tags the basis was balanced from.
    pub provenance: String,
}

impl<T: Scalar> ReductionBasis<T> {
    pub fn order(&self) -> usize {
        self.v.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.v.nrows()
    }

    /// `W^T V = I` deviation.
    pub fn biorthogonality_error(&self) -> T {
        let k = self.order();
        (self.w.transpose() * &self.v - DMatrix::<T>::identity(k, k)).amax()
    }
}

/// Square-root balancing: factor both gramians, SVD the cross product
/// `L^T R = U S V^T`, and form `V = R V_k S_k^{-1/2}`, `W = L U_k S_k^{-1/2}`.
pub fn balance<T: Scalar>(p: &Gramian<T>, q: &Gramian<T>, k: usize) -> Result<ReductionBasis<T>> {
    let n = p.dim();
    if q.dim() != n {
        return Err(Error::InvalidArgument(
            "gramian dimensions do not match".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("order k must be >= 1".into()));
    }

    let r = psd_factor(p).factor;
    let l = psd_factor(q).factor;
    let cross = l.transpose() * &r;
    let parts = svd_sorted(&cross)?;

    let sigma_max = if parts.sigma.is_empty() {
        T::zero()
    } else {
        parts.sigma[0]
    };
    let rank_tol = convert::<T>(1e-12) * sigma_max;
    let rank = parts.sigma.iter().filter(|&&s| s > rank_tol).count();
    if k > rank {
        return Err(Error::RankDeficient { requested: k, rank });
    }

    // reproducible sign convention: largest-magnitude entry of each retained
    // left singular vector is positive
    let mut u = parts.u.columns(0, k).clone_owned();
    let mut v = parts.v.columns(0, k).clone_owned();
    for col in 0..k {
        let mut dominant = T::zero();
        for e in u.column(col).iter() {
            if e.abs() > dominant.abs() {
                dominant = *e;
            }
        }
        if dominant < T::zero() {
            u.column_mut(col).neg_mut();
            v.column_mut(col).neg_mut();
        }
    }

    let inv_sqrt = DMatrix::<T>::from_diagonal(&DVector::from_fn(k, |i, _| {
        T::one() / parts.sigma[i].sqrt()
    }));
    let v_basis = &r * &v * &inv_sqrt;
    let w_basis = &l * &u * &inv_sqrt;

    let hankel: Vec<T> = (0..k).map(|i| parts.sigma[i]).collect();
    let discarded_tail = if k < parts.sigma.len() {
        parts.sigma[k]
    } else {
        T::zero()
    };

    let basis = ReductionBasis {
        v: v_basis,
        w: w_basis,
        hankel,
        discarded_tail,
        provenance: format!("{} + {}", p.method, q.method),
    };
    let biorth = basis.biorthogonality_error();
    if biorth > convert::<T>(1e-8) {
        return Err(Error::BalancingFailed {
            biorth_err: to_f64(biorth),
        });
    }
    Ok(basis)
}

/// The reduced dynamical system together with its reduction metadata.
#[derive(Clone)]
pub enum ReducedSystem<T: Scalar> {
    Nonlinear(NonlinearModel<T>),
    Bilinear(BilinearModel<T>),
}

#[derive(Clone)]
pub struct ReducedModel<T: Scalar> {
    pub system: ReducedSystem<T>,
    pub basis: ReductionBasis<T>,
    pub provenance: String,
    /// For bilinear reductions: nilpotency index of the reduced coupling, if
    /// it is still nilpotent (projection does not preserve nilpotency).
    pub reduced_nilpotency: Option<usize>,
}

impl<T: Scalar> ReducedModel<T> {
    pub fn order(&self) -> usize {
        self.basis.order()
    }
}

/// Petrov-Galerkin projection of a nonlinear model:
/// `z' = W^T f(t, x* + V z) + W^T B(t) u`, `y = h(t, x* + V z)`.
pub fn project_nonlinear<T: Scalar>(
    model: &NonlinearModel<T>,
    basis: &ReductionBasis<T>,
) -> Result<ReducedModel<T>> {
    if basis.full_dim() != model.state_dim() {
        return Err(Error::InvalidArgument(
            "basis dimension does not match the model".into(),
        ));
    }
    let k = basis.order();
    let v = basis.v.clone();
    let w_t = basis.w.transpose();
    let x_eq = model.equilibrium().clone();

    let m_drift = model.clone();
    let (v_d, w_d, eq_d) = (v.clone(), w_t.clone(), x_eq.clone());
    let drift = Arc::new(move |t: T, z: &DVector<T>| {
        let x = &eq_d + &v_d * z;
        &w_d * m_drift.drift_at(t, &x)
    });

    let m_input = model.clone();
    let w_i = w_t.clone();
    let input = Arc::new(move |t: T| &w_i * m_input.input_at(t));

    let m_out = model.clone();
    let (v_o, eq_o) = (v, x_eq);
    let output = Arc::new(move |t: T, z: &DVector<T>| {
        let x = &eq_o + &v_o * z;
        m_out.output_at(t, &x)
    });

    let reduced = NonlinearModel::new(
        k,
        model.input_dim(),
        model.output_dim(),
        drift,
        input,
        output,
    )?;
    Ok(ReducedModel {
        system: ReducedSystem::Nonlinear(reduced),
        basis: basis.clone(),
        provenance: basis.provenance.clone(),
        reduced_nilpotency: None,
    })
}

/// Petrov-Galerkin projection of a bilinear model:
/// `(W^T A V, W^T N V, W^T B, C V)`.
pub fn project_bilinear<T: Scalar>(
    model: &BilinearModel<T>,
    basis: &ReductionBasis<T>,
) -> Result<ReducedModel<T>> {
    if basis.full_dim() != model.dim() {
        return Err(Error::InvalidArgument(
            "basis dimension does not match the model".into(),
        ));
    }
    let k = basis.order();
    let w_t = basis.w.transpose();
    let a_r = &w_t * &model.ahat * &basis.v;
    let n_r = &w_t * &model.nhat * &basis.v;
    let b_r = &w_t * &model.bhat;
    let c_r = &model.chat * &basis.v;

    let reduced = BilinearModel::new(
        a_r,
        n_r,
        DVector::from_column_slice(b_r.as_slice()),
        RowDVector::from_row_slice(c_r.as_slice()),
    )?;
    let nilpotency = reduced.nilpotency_index(k.max(2));
    Ok(ReducedModel {
        system: ReducedSystem::Bilinear(reduced),
        basis: basis.clone(),
        provenance: basis.provenance.clone(),
        reduced_nilpotency: nilpotency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    Stable,
    Unstable,
}

impl std::fmt::Display for StabilityVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityVerdict::Stable => f.write_str("stable"),
            StabilityVerdict::Unstable => f.write_str("unstable"),
        }
    }
}

/// Outcome of the reduced-model stability probe; the report is the result,
/// an unstable verdict is not an error.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    /// Largest eigenvalue real part (linear/bilinear reductions).
    pub spectral_abscissa: Option<f64>,
    /// Worst observed `||z(t)|| / ||z(0)||` over the probe runs (nonlinear).
    pub max_growth: Option<f64>,
    pub details: String,
}

/// Divergence threshold for the nonlinear probe.
const GROWTH_LIMIT: f64 = 1e3;

/// Spectral test for bilinear reductions; zero-input simulation from small
/// random initial conditions for nonlinear ones.
pub fn stability_check<T: Scalar>(model: &ReducedModel<T>, horizon: T) -> StabilityReport {
    match &model.system {
        ReducedSystem::Bilinear(bl) => {
            let abscissa = to_f64(spectral_abscissa(&bl.ahat));
            let verdict = if abscissa < 0.0 {
                StabilityVerdict::Stable
            } else {
                StabilityVerdict::Unstable
            };
            StabilityReport {
                verdict,
                spectral_abscissa: Some(abscissa),
                max_growth: None,
                details: format!("reduced spectral abscissa = {abscissa:.6e}"),
            }
        }
        ReducedSystem::Nonlinear(nl) => {
            let k = nl.state_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(0xBA1A);
            let cfg = IntegratorConfig::default();
            let mut max_growth: f64 = 0.0;
            let mut diverged = false;
            let mut details = String::new();
            for probe in 0..5 {
                let mut z0 =
                    DVector::<T>::from_fn(k, |_, _| convert::<T>(rng.gen_range(-1.0..1.0)));
                let norm = z0.norm();
                if norm > T::zero() {
                    z0 /= norm;
                }
                z0 *= convert::<T>(0.01);
                match integrate_zero_input(nl, &z0, T::zero(), horizon, 200, &cfg) {
                    Ok(traj) => {
                        let z0_norm = to_f64(traj.states[0].norm());
                        for x in &traj.states {
                            let g = to_f64(x.norm()) / z0_norm;
                            max_growth = max_growth.max(g);
                        }
                    }
                    Err(e) => {
                        diverged = true;
                        details = format!("probe {probe} diverged: {e}");
                        break;
                    }
                }
            }
            let verdict = if diverged || max_growth > GROWTH_LIMIT {
                StabilityVerdict::Unstable
            } else {
                StabilityVerdict::Stable
            };
            if details.is_empty() {
                details = format!("max zero-input growth = {max_growth:.3e} over 5 probes");
            }
            StabilityReport {
                verdict,
                spectral_abscissa: None,
                max_growth: Some(max_growth),
                details,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{symmetrize, GramianMethod};
    use crate::model::random_stable_lti;
    use crate::ode::integrate;

    fn gram(m: DMatrix<f64>, tag: GramianMethod) -> Gramian<f64> {
        Gramian::new(m, tag, 1.0, "test", "test")
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        symmetrize(&(&g * g.transpose())) + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn diagonal_balanced_case() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let p = gram(d.clone(), GramianMethod::LtiP);
        let q = gram(d, GramianMethod::LtiQ);
        let basis = balance(&p, &q, 2).unwrap();
        assert!((basis.hankel[0] - 4.0).abs() < 1e-12);
        assert!((basis.hankel[1] - 1.0).abs() < 1e-12);
        // V and W are the identity up to per-column sign
        for col in 0..2 {
            let v = basis.v.column(col);
            let w = basis.w.column(col);
            assert!((v.amax() - 1.0).abs() < 1e-12);
            assert!((v - w).amax() < 1e-12);
        }
    }

    #[test]
    fn hankel_values_match_pq_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let p_mat = random_spd(6, &mut rng);
        let q_mat = random_spd(6, &mut rng);
        let basis = balance(
            &gram(p_mat.clone(), GramianMethod::LtiP),
            &gram(q_mat.clone(), GramianMethod::LtiQ),
            3,
        )
        .unwrap();
        let mut eigs: Vec<f64> = (&p_mat * &q_mat)
            .complex_eigenvalues()
            .iter()
            .map(|c| c.re)
            .collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for i in 0..3 {
            let sigma2 = basis.hankel[i] * basis.hankel[i];
            let rel = (sigma2 - eigs[i]).abs() / eigs[i];
            assert!(rel < 1e-8, "sigma_{i}^2 rel err {rel:.3e}");
        }
    }

    #[test]
    fn balanced_gramian_property() {
        // W^T P W and V^T Q V are diag(sigma) at full rank
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p_mat = random_spd(5, &mut rng);
        let q_mat = random_spd(5, &mut rng);
        let basis = balance(
            &gram(p_mat.clone(), GramianMethod::LtiP),
            &gram(q_mat.clone(), GramianMethod::LtiQ),
            5,
        )
        .unwrap();
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(basis.hankel.clone()));
        let wpw = basis.w.transpose() * &p_mat * &basis.w;
        let vqv = basis.v.transpose() * &q_mat * &basis.v;
        assert!((&wpw - &sigma).norm() / sigma.norm() < 1e-6);
        assert!((&vqv - &sigma).norm() / sigma.norm() < 1e-6);
        assert!(basis.biorthogonality_error() < 1e-8);
    }

    #[test]
    fn rank_deficient_is_typed() {
        let p = gram(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0])),
            GramianMethod::LtiP,
        );
        let q = gram(DMatrix::identity(3, 3), GramianMethod::LtiQ);
        match balance(&p, &q, 2) {
            Err(Error::RankDeficient { requested, rank }) => {
                assert_eq!(requested, 2);
                assert_eq!(rank, 1);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn gramian_scaling_leaves_basis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p_mat = random_spd(4, &mut rng);
        let q_mat = random_spd(4, &mut rng);
        let alpha = 3.7;
        let b1 = balance(
            &gram(p_mat.clone(), GramianMethod::LtiP),
            &gram(q_mat.clone(), GramianMethod::LtiQ),
            2,
        )
        .unwrap();
        let b2 = balance(
            &gram(&p_mat * alpha, GramianMethod::LtiP),
            &gram(&q_mat * alpha, GramianMethod::LtiQ),
            2,
        )
        .unwrap();
        for i in 0..2 {
            assert!((b2.hankel[i] / b1.hankel[i] - alpha).abs() < 1e-10);
        }
        assert!((&b1.v - &b2.v).amax() < 1e-8);
        assert!((&b1.w - &b2.w).amax() < 1e-8);
    }

    #[test]
    fn identity_projection_reproduces_linear_model() {
        let lti = random_stable_lti::<f64>(4, 3).unwrap();
        let nl = lti.to_nonlinear();
        let basis = ReductionBasis {
            v: DMatrix::identity(4, 4),
            w: DMatrix::identity(4, 4),
            hankel: vec![1.0; 4],
            discarded_tail: 0.0,
            provenance: "identity".into(),
        };
        let reduced = project_nonlinear(&nl, &basis).unwrap();
        let ReducedSystem::Nonlinear(rm) = &reduced.system else {
            panic!("expected nonlinear reduction");
        };
        let cfg = IntegratorConfig::default();
        let u = |t: f64| DVector::from_element(1, (-t).exp());
        let x0 = DVector::zeros(4);
        let t_ref = integrate(&nl, &x0, u, 0.0, 2.0, 50, &cfg).unwrap();
        let t_red = integrate(rm, &x0, u, 0.0, 2.0, 50, &cfg).unwrap();
        for k in 0..=50 {
            let d = (&t_ref.states[k] - &t_red.states[k]).amax();
            assert!(d < 1e-9, "deviation {d:.3e} at node {k}");
        }
    }

    #[test]
    fn linear_projection_matches_matrix_triple() {
        let lti = random_stable_lti::<f64>(5, 8).unwrap();
        let nl = lti.to_nonlinear();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p_mat = random_spd(5, &mut rng);
        let q_mat = random_spd(5, &mut rng);
        let basis = balance(
            &gram(p_mat, GramianMethod::LtiP),
            &gram(q_mat, GramianMethod::LtiQ),
            2,
        )
        .unwrap();
        let reduced = project_nonlinear(&nl, &basis).unwrap();
        let ReducedSystem::Nonlinear(rm) = &reduced.system else {
            panic!("expected nonlinear reduction");
        };
        let a = lti.a_at(0.0);
        let ar = basis.w.transpose() * &a * &basis.v;
        let z = DVector::from_vec(vec![0.3, -0.7]);
        let direct = &ar * &z;
        let through = rm.drift_at(0.0, &z);
        assert!((direct - through).amax() < 1e-12);
        let br = basis.w.transpose() * lti.b_at(0.0);
        assert!((rm.input_at(0.0) - br).amax() < 1e-12);
        let cr = lti.c_at(0.0) * &basis.v;
        let y = rm.output_at(0.0, &z);
        assert!((y[0] - (cr * &z)[0]).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_projection_is_unchanged() {
        let lti = random_stable_lti::<f64>(3, 4).unwrap();
        let mut nhat = DMatrix::zeros(3, 3);
        nhat[(1, 0)] = 1.0;
        let bl = BilinearModel::new(
            lti.a_at(0.0),
            nhat,
            DVector::from_column_slice(lti.b_at(0.0).as_slice()),
            RowDVector::from_row_slice(lti.c_at(0.0).as_slice()),
        )
        .unwrap();
        let basis = ReductionBasis {
            v: DMatrix::identity(3, 3),
            w: DMatrix::identity(3, 3),
            hankel: vec![1.0; 3],
            discarded_tail: 0.0,
            provenance: "identity".into(),
        };
        let reduced = project_bilinear(&bl, &basis).unwrap();
        let ReducedSystem::Bilinear(rbl) = &reduced.system else {
            panic!("expected bilinear reduction");
        };
        assert!((&rbl.ahat - &bl.ahat).amax() < 1e-14);
        assert!((&rbl.nhat - &bl.nhat).amax() < 1e-14);
        assert_eq!(reduced.reduced_nilpotency, Some(2));
    }

    #[test]
    fn stability_check_verdicts() {
        let stable = BilinearModel::new(
            -DMatrix::<f64>::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            RowDVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let basis = ReductionBasis {
            v: DMatrix::identity(2, 2),
            w: DMatrix::identity(2, 2),
            hankel: vec![1.0; 2],
            discarded_tail: 0.0,
            provenance: "identity".into(),
        };
        let rm = project_bilinear(&stable, &basis).unwrap();
        assert_eq!(stability_check(&rm, 1.0).verdict, StabilityVerdict::Stable);

        let mut unstable_a = -DMatrix::<f64>::identity(2, 2);
        unstable_a[(1, 1)] = 0.1;
        let unstable = BilinearModel::new(
            unstable_a,
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            RowDVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let rm = project_bilinear(&unstable, &basis).unwrap();
        let report = stability_check(&rm, 1.0);
        assert_eq!(report.verdict, StabilityVerdict::Unstable);
        assert!(report.spectral_abscissa.unwrap() > 0.0);
    }
}
