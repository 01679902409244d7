//! Reduction-quality properties: error monotonicity in the retained order,
//! and the single-scale instability probe on the benchmark pipeline.

mod common;
use embalance::balance::{balance, project_bilinear};
use embalance::gramian::{bilinear_gramians, linear_part_gramians};
use embalance::model::{build_rc_ladder, random_stable_lti, BilinearModel};
use embalance::ode::IntegratorConfig;
use embalance::pipeline::{
    build_lifted_model, rms_error, simulate_bilinear, simulate_reduced, ExperimentConfig,
};
use nalgebra::{DMatrix, DVector, RowDVector};

#[test]
fn rms_error_never_increases_with_order() {
    // k+1 retained modes may not do worse than k (5% slack for quadrature
    // and integration noise)
    let icfg = IntegratorConfig::default();
    let u = |t: f64| DVector::from_element(1, (-t).exp());
    for seed in [2u64, 9, 14] {
        let lti = random_stable_lti::<f64>(8, seed).unwrap();
        let model = BilinearModel::new(
            lti.a_at(0.0),
            DMatrix::zeros(8, 8),
            DVector::from_column_slice(lti.b_at(0.0).as_slice()),
            RowDVector::from_row_slice(lti.c_at(0.0).as_slice()),
        )
        .unwrap();
        let reference = simulate_bilinear(&model, u, &DVector::zeros(8), 4.0, 400, &icfg).unwrap();
        let (p, q) = linear_part_gramians(&model).unwrap();

        let mut previous = f64::INFINITY;
        for k in 1..=5 {
            // Hankel values decay exponentially; stop at the numerical rank
            let basis = match balance(&p, &q, k) {
                Ok(basis) => basis,
                Err(embalance::error::Error::RankDeficient { .. }) => break,
                Err(e) => panic!("balance failed at k={k}: {e}"),
            };
            let reduced = project_bilinear(&model, &basis).unwrap();
            let traj = simulate_reduced(&reduced, u, 4.0, 400, &icfg).unwrap();
            let err = rms_error(&reference, &traj).unwrap();
            assert!(
                err <= previous * 1.05,
                "seed {seed}: error grew at k={k}: {err:.3e} > {previous:.3e}"
            );
            previous = err;
        }
    }
}

#[test]
fn linear_part_projection_of_the_lift_is_stable() {
    let cfg = ExperimentConfig::default();
    let ladder = build_rc_ladder::<f64>(4).unwrap();
    let lifted = build_lifted_model(&cfg, &ladder).unwrap();
    let (p, q) = linear_part_gramians(&lifted).unwrap();
    let basis = balance(&p, &q, 3).unwrap();
    let reduced = project_bilinear(&lifted, &basis).unwrap();
    let report = embalance::balance::stability_check(&reduced, 1.0);
    assert_eq!(
        report.verdict,
        embalance::balance::StabilityVerdict::Stable,
        "{}",
        report.details
    );
}

#[test]
fn single_scale_benchmark_pipeline_records_verdict() {
    // M = {0.20} on the benchmark lift: the reduction pipeline must complete
    // and deliver a stability verdict either way
    let cfg = ExperimentConfig::default();
    let model = build_rc_ladder::<f64>(30).unwrap();
    let lifted = build_lifted_model(&cfg, &model).unwrap();
    let (p, q) = bilinear_gramians(&lifted, &[0.20], true).unwrap();
    let basis = balance(&p, &q, 3).unwrap();
    let reduced = project_bilinear(&lifted, &basis).unwrap();
    let report = embalance::balance::stability_check(&reduced, 1.0);
    assert!(report.spectral_abscissa.is_some());
    println!(
        "M = {{0.20}} verdict: {} ({})",
        report.verdict, report.details
    );
}
