//! Acceptance suite: every criterion below prints one PASS/FAIL line
//! (`cargo test --test acceptance -- --nocapture` to see them all) and
//! asserts at its stated tolerance.

mod common;

use std::time::Instant;

use common::*;
use embalance::balance::balance;
use embalance::error::Error;
use embalance::gramian::{
    averaged_fundamental, lall_controllability, lall_observability, linear_part_gramians,
    nonlinear_controllability, nonlinear_observability, QuadratureConfig, SpanDirection,
};
use embalance::linalg::{Gramian, GramianMethod};
use embalance::model::{
    build_rc_ladder, random_stable_lti, rc_ladder_potential, BilinearModel, LtvModel,
    PerturbationSets,
};
use embalance::ode::{integrate_rhs, integrate_zero_input, IntegratorConfig};
use embalance::pipeline::{build_lifted_model, compare_all, ExperimentConfig};
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use std::sync::Arc;

/// The canonical benchmark configuration shipped in the repository.
const BENCHMARK_CONFIG: &str = include_str!("../../../configs/benchmark.toml");

fn verdict(criterion: &str, ok: bool, detail: &str) -> bool {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn cubic_decay_model() -> embalance::NonlinearModel64 {
    embalance::model::NonlinearModel::new(
        1,
        1,
        1,
        Arc::new(|_t, x: &DVector<f64>| -x.map(|v| v * v * v)),
        Arc::new(|_t| DMatrix::from_element(1, 1, 1.0)),
        Arc::new(|_t, x: &DVector<f64>| x.clone()),
    )
    .unwrap()
}

#[test]
fn criterion_1_lti_consistency() {
    let start = Instant::now();
    let cfg = IntegratorConfig::rk45(1e-8, 1e-12);
    let mut worst: f64 = 0.0;

    for seed in 1..=20u64 {
        let n = 2 + (seed as usize) % 7; // dimensions 2..=8
        let model = random_stable_lti::<f64>(n, seed).unwrap();
        let (a, b, c) = (model.a_at(0.0), model.b_at(0.0), model.c_at(0.0));
        let nl = model.to_nonlinear();
        let horizon = 40.0 / min_decay(&a);
        let quad = QuadratureConfig::simpson(horizon, 401).unwrap();

        let p_lyap = kron_lyapunov(&a, &(&b * b.transpose()));
        let q_lyap = kron_lyapunov_adjoint(&a, &(c.transpose() * &c));

        let p_lall = lall_controllability(
            &nl,
            &PerturbationSets::identity(1, vec![1.0]).unwrap(),
            &quad,
            &cfg,
            embalance::gramian::MeanMode::Equilibrium,
        )
        .unwrap();
        worst = worst.max(rel_frobenius(&p_lall.matrix, &p_lyap));

        let q_lall = lall_observability(
            &nl,
            &PerturbationSets::identity(n, vec![0.7]).unwrap(),
            &quad,
            &cfg,
            embalance::gramian::MeanMode::Equilibrium,
        )
        .unwrap();
        worst = worst.max(rel_frobenius(&q_lall.matrix, &q_lyap));

        let sets = PerturbationSets::identity(n, vec![0.5]).unwrap();
        let p_new = nonlinear_controllability(&nl, &sets, &quad, &cfg, 1e12).unwrap();
        worst = worst.max(rel_frobenius(&p_new.matrix, &p_lyap));

        let q_new = nonlinear_observability(&nl, &sets, &quad, &cfg).unwrap();
        worst = worst.max(rel_frobenius(&q_new.matrix, &q_lyap));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-2 && elapsed < 120.0;
    assert!(
        verdict(
            "criterion 1 (LTI consistency, Defs 1-4 vs Lyapunov over 20 systems)",
            ok,
            &format!("worst rel Frobenius err {worst:.3e}, runtime {elapsed:.1}s")
        ),
        "worst err {worst:.3e} (tolerance 1e-2), runtime {elapsed:.1}s (limit 120s)"
    );
}

#[test]
fn criterion_2_ltv_scalar_closed_form() {
    // a(t) = -(1 + 0.5 sin t), closed-form Theta(t) = exp(-t + 0.5(cos t - 1))
    let a = Arc::new(|t: f64| DMatrix::from_element(1, 1, -(1.0 + 0.5 * t.sin())));
    let b = Arc::new(|_t: f64| DMatrix::from_element(1, 1, 1.0));
    let c = Arc::new(|_t: f64| DMatrix::from_element(1, 1, 1.0));
    let model = LtvModel::new(1, 1, 1, a, b, c).unwrap();
    let quad = QuadratureConfig::simpson(6.0, 201).unwrap();
    let icfg = IntegratorConfig::rk45(1e-10, 1e-14);
    let (p, q) = embalance::gramian::ltv_gramians(&model, &quad, &icfg, 1e12).unwrap();

    let theta = |t: f64| (-t + 0.5 * (t.cos() - 1.0)).exp();
    let (times, weights) = (quad.node_times(), quad.weights());
    let mut p_oracle = 0.0;
    let mut q_oracle = 0.0;
    for (j, &tau) in times.iter().enumerate() {
        p_oracle += weights[j] / (theta(-tau) * theta(-tau));
        q_oracle += weights[j] * theta(tau) * theta(tau);
    }
    let err_p = (p.matrix[(0, 0)] - p_oracle).abs();
    let err_q = (q.matrix[(0, 0)] - q_oracle).abs();
    let ok = err_p <= 1e-8 && err_q <= 1e-8;
    assert!(
        verdict(
            "criterion 2 (LTV closed-form fundamental solution)",
            ok,
            &format!("P err {err_p:.3e}, Q err {err_q:.3e}")
        ),
        "P err {err_p:.3e}, Q err {err_q:.3e} (tolerance 1e-8)"
    );
}

#[test]
fn criterion_3_bilinear_exactness() {
    // 5-dimensional random instance; the coupling is index-2 nilpotent
    // (N^2 = 0) like every Carleman lift, which is the class where the
    // impulse solution is also the narrow-pulse limit
    let lti = random_stable_lti::<f64>(5, 12).unwrap();
    let mut nhat = DMatrix::zeros(5, 5);
    nhat[(2, 0)] = 0.9;
    nhat[(3, 1)] = -0.6;
    nhat[(4, 0)] = 0.4;
    nhat[(4, 1)] = 0.7;
    let model = BilinearModel::new(
        lti.a_at(0.0),
        nhat.clone(),
        DVector::from_column_slice(lti.b_at(0.0).as_slice()),
        RowDVector::from_row_slice(lti.c_at(0.0).as_slice()),
    )
    .unwrap();
    assert!(model.nilpotency_index(5).is_some());

    // (i) narrow-pulse simulation against the closed-form trajectory
    let width = 1e-5;
    let icfg = IntegratorConfig::rk45(1e-11, 1e-14);
    let mut worst_pulse: f64 = 0.0;
    for &c in &[0.1, 1.0] {
        let m = model.clone();
        let pulse = integrate_rhs(
            move |_t, x: &DVector<f64>| m.rhs(x, c / width),
            &DVector::zeros(5),
            0.0,
            width,
            8,
            &icfg,
        )
        .unwrap();
        let m = model.clone();
        let free = integrate_rhs(
            move |_t, x: &DVector<f64>| m.rhs(x, 0.0),
            pulse.states.last().unwrap(),
            width,
            1.0,
            100,
            &icfg,
        )
        .unwrap();

        // closed form: x(t) = e^{A t} sum_k (c/2)^k N^k B c, series built here
        let mut series = DVector::zeros(5);
        let mut term = DVector::from_column_slice(lti.b_at(0.0).as_slice());
        for _k in 0..5 {
            series += &term;
            term = (&nhat * &term) * (c / 2.0);
        }
        let jump = series * c;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (k, &t) in free.grid.iter().enumerate() {
            if t < 0.01 {
                continue;
            }
            let exact = expm(&(model.ahat.clone() * t)) * &jump;
            worst = worst.max((&free.states[k] - &exact).norm());
            scale = scale.max(exact.norm());
        }
        worst_pulse = worst_pulse.max(worst / scale);
    }

    // (ii) Lyapunov-form gramians against the quadrature form with exact
    // matrix exponentials (semigroup recurrence)
    let scales = [0.1, -0.6, 1.0];
    let (p_lyap, q_lyap) = embalance::gramian::bilinear_gramians(&model, &scales, false).unwrap();

    let horizon = 18.0 / min_decay(&model.ahat);
    let nodes = 3201usize;
    let h = horizon / (nodes - 1) as f64;
    let e_step = expm(&(model.ahat.clone() * h));
    let mut bbar = DMatrix::<f64>::zeros(5, 5);
    for &c in &scales {
        let mut series = DVector::zeros(5);
        let mut term = DVector::from_column_slice(lti.b_at(0.0).as_slice());
        for _k in 0..5 {
            series += &term;
            term = (&nhat * &term) * (c / 2.0);
        }
        bbar += &series * series.transpose();
    }
    let ctc = model.chat.transpose() * &model.chat;
    let mut p_quad = DMatrix::<f64>::zeros(5, 5);
    let mut q_quad = DMatrix::<f64>::zeros(5, 5);
    let mut theta = DMatrix::<f64>::identity(5, 5);
    for j in 0..nodes {
        let w = if j == 0 || j == nodes - 1 {
            h / 3.0
        } else if j % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
        p_quad += &theta * &bbar * theta.transpose() * w;
        q_quad += theta.transpose() * &ctc * &theta * w;
        theta = &e_step * theta;
    }
    let err_p = rel_frobenius(&p_quad, &p_lyap.matrix);
    let err_q = rel_frobenius(&q_quad, &q_lyap.matrix);

    let ok = worst_pulse <= 1e-4 && err_p <= 1e-6 && err_q <= 1e-6;
    assert!(
        verdict(
            "criterion 3 (bilinear exactness: pulse vs closed form, Lyapunov vs quadrature)",
            ok,
            &format!("pulse rel {worst_pulse:.3e}, P rel {err_p:.3e}, Q rel {err_q:.3e}")
        ),
        "pulse rel {worst_pulse:.3e} (1e-4), P rel {err_p:.3e}, Q rel {err_q:.3e} (1e-6)"
    );
}

#[test]
fn criterion_4_benchmark_fidelity() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::from_toml(BENCHMARK_CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());

    let table = compare_all(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    for row in &table.rows {
        println!(
            "  {} vs {}: rms = {:?}, relative = {:?}, status = {}",
            row.pipeline,
            row.reference,
            row.rms,
            row.rms_relative,
            row.error.as_deref().unwrap_or("ok")
        );
    }

    // The benchmark windows are calibrated in the relative metric
    // (difference-RMS over reference-signal RMS): the bilinear-lift row
    // reproduces the expected 1.0e-2 there. Sub-checks (a) and (b) are
    // windows in that metric; (c) bounds the absolute output error.
    let a_rel = table.relative_rms_of("bilinear-full");
    let b_rel = table.relative_rms_of("linear-part");
    let c_abs = table.rms_of("nonlinear-gramians");
    let c_rel = table.relative_rms_of("nonlinear-gramians");
    let d_lall = table.relative_rms_of("lall");

    let ok_a = a_rel.is_some_and(|v| (3e-3..=3e-2).contains(&v));
    let ok_b = b_rel.is_some_and(|v| (8e-3..=8e-2).contains(&v));
    let ok_c = c_abs.is_some_and(|v| v <= 1e-3);
    let ok_d = match (c_rel, b_rel, d_lall) {
        (Some(e), Some(lin), Some(lall)) => e < lin && lin <= lall,
        _ => false,
    };
    let ok_runtime = elapsed < 900.0;

    let a = verdict(
        "criterion 4a (bilinear-930 vs nonlinear in [3e-3, 3e-2])",
        ok_a,
        &format!("relative rms {a_rel:?}"),
    );
    let b = verdict(
        "criterion 4b (linear-part k=3 vs bilinear-930 in [8e-3, 8e-2])",
        ok_b,
        &format!("relative rms {b_rel:?}"),
    );
    let c = verdict(
        "criterion 4c (Defs 3-4 k=3 vs nonlinear <= 1e-3)",
        ok_c,
        &format!("rms {c_abs:?} (relative {c_rel:?})"),
    );
    let d = verdict(
        "criterion 4d (ordering Defs 3-4 < linear-part <= Lall)",
        ok_d,
        &format!("{c_rel:?} < {b_rel:?} <= {d_lall:?}"),
    );
    let r = verdict(
        "criterion 4 runtime (< 15 min)",
        ok_runtime,
        &format!("{elapsed:.1}s"),
    );

    // structural artifacts: the wide five-curve CSV and the four-row table
    let comparison = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let header = comparison.lines().next().unwrap();
    let ok_csv = header == "t,y_nonlinear,y_bilinear930,y_linear_part_k,y_lall_k,y_defs34_k"
        && comparison.lines().count() == cfg.samples + 1;
    let rms_table = std::fs::read_to_string(dir.path().join("rms_table.csv")).unwrap();
    let ok_table = rms_table.lines().count() == 5; // header + 4 rows
    let s = verdict(
        "criterion 4 artifacts (5-curve CSV, 4-row RMS table)",
        ok_csv && ok_table,
        &format!(
            "{} curves file lines, {} table lines",
            comparison.lines().count(),
            rms_table.lines().count()
        ),
    );

    assert!(
        a && b && c && d && r && s,
        "benchmark fidelity sub-criteria failed: a={a} b={b} c={c} d={d} runtime={r} artifacts={s}"
    );
}

#[test]
fn criterion_5_balancing_property() {
    let mut worst_diag: f64 = 0.0;
    let mut worst_biorth: f64 = 0.0;

    let mut check = |p: &Gramian<f64>, q: &Gramian<f64>, k: usize| {
        let basis = balance(p, q, k).unwrap();
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(basis.hankel.clone()));
        let wpw = basis.w.transpose() * &p.matrix * &basis.w;
        let vqv = basis.v.transpose() * &q.matrix * &basis.v;
        worst_diag = worst_diag.max((&wpw - &sigma).norm() / sigma.norm());
        worst_diag = worst_diag.max((&vqv - &sigma).norm() / sigma.norm());
        worst_biorth = worst_biorth.max(basis.biorthogonality_error());
    };

    // random SPD pairs at full and partial order
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let n = 4 + (seed as usize % 3);
        let p = Gramian::new(
            random_spd(&mut r, n),
            GramianMethod::LtiP,
            1.0,
            "test",
            "spd",
        );
        let q = Gramian::new(
            random_spd(&mut r, n),
            GramianMethod::LtiQ,
            1.0,
            "test",
            "spd",
        );
        check(&p, &q, n);
        check(&p, &q, 2);
    }

    // a basis emitted by the real pipeline (lifted 4-node ladder)
    let cfg = ExperimentConfig::default();
    let ladder = build_rc_ladder::<f64>(4).unwrap();
    let lifted = build_lifted_model(&cfg, &ladder).unwrap();
    let (p, q) = linear_part_gramians(&lifted).unwrap();
    check(&p, &q, 3);

    let ok = worst_diag <= 1e-6 && worst_biorth <= 1e-8;
    assert!(
        verdict(
            "criterion 5 (balanced-gramian property and biorthogonality)",
            ok,
            &format!("worst diag dev {worst_diag:.3e}, worst biorth {worst_biorth:.3e}")
        ),
        "diag dev {worst_diag:.3e} (1e-6), biorth {worst_biorth:.3e} (1e-8)"
    );
}

#[test]
fn criterion_6_gradient_system_suite() {
    let n = 30;
    let model = build_rc_ladder::<f64>(n).unwrap();
    let mut r = rng(6);
    let h = 1e-6;

    // drift + grad V = 0 at 100 random points
    let mut worst_grad: f64 = 0.0;
    for _ in 0..100 {
        let x = DVector::from_fn(n, |_, _| r.gen_range(-0.1..0.1));
        let drift = model.drift_at(0.0, &x);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let grad =
                (rc_ladder_potential(&xp).unwrap() - rc_ladder_potential(&xm).unwrap()) / (2.0 * h);
            let denom = grad.abs().max(1.0);
            worst_grad = worst_grad.max((drift[j] + grad).abs() / denom);
        }
    }

    // V non-increasing along 10 zero-input trajectories, and the state
    // contracts over one time unit
    let icfg = IntegratorConfig::default();
    let mut ok_descent = true;
    for _ in 0..10 {
        let x0 = DVector::from_fn(n, |_, _| r.gen_range(-0.1..0.1));
        let traj = integrate_zero_input(&model, &x0, 0.0, 1.0, 100, &icfg).unwrap();
        let mut previous = f64::INFINITY;
        for x in &traj.states {
            let v = rc_ladder_potential(x).unwrap();
            if v > previous + 1e-9 {
                ok_descent = false;
            }
            previous = v;
        }
        if traj.states.last().unwrap().norm() >= x0.norm() {
            ok_descent = false;
        }
    }

    let ok = worst_grad <= 1e-5 && ok_descent;
    assert!(
        verdict(
            "criterion 6 (gradient consistency and Lyapunov descent)",
            ok,
            &format!("worst gradient residual {worst_grad:.3e}, descent ok = {ok_descent}")
        ),
        "gradient residual {worst_grad:.3e} (1e-5), descent {ok_descent}"
    );
}

#[test]
fn criterion_7_averaged_fundamental_checks() {
    // <Theta(0)> = I exactly
    let ladder = build_rc_ladder::<f64>(4).unwrap();
    let sets = PerturbationSets::identity(4, vec![0.05, -0.025]).unwrap();
    let quad = QuadratureConfig::simpson(0.02, 5).unwrap();
    let avg = averaged_fundamental(
        &ladder,
        &sets,
        SpanDirection::Forward,
        &quad,
        &IntegratorConfig::default(),
    )
    .unwrap();
    let exact_identity = avg.values[0] == DMatrix::<f64>::identity(4, 4);

    // scalar cubic closed form to 1e-8
    let model = cubic_decay_model();
    let c = 0.3;
    let csets = PerturbationSets::identity(1, vec![c]).unwrap();
    let cquad = QuadratureConfig::simpson(1.0, 11).unwrap();
    let icfg = IntegratorConfig::rk45(1e-10, 1e-14);
    let cavg = averaged_fundamental(&model, &csets, SpanDirection::Forward, &cquad, &icfg).unwrap();
    let mut worst_theta: f64 = 0.0;
    for (j, &t) in cavg.times.iter().enumerate() {
        let exact = 1.0 / (1.0 + 2.0 * c * c * t).sqrt();
        worst_theta = worst_theta.max((cavg.values[j][(0, 0)] - exact).abs());
    }

    // Def-3 scalar gramian value 0.99 to 1e-6
    let gsets = PerturbationSets::identity(1, vec![0.1]).unwrap();
    let p = nonlinear_controllability(&model, &gsets, &cquad, &icfg, 1e12).unwrap();
    let gram_err = (p.matrix[(0, 0)] - 0.99).abs();

    let ok = exact_identity && worst_theta <= 1e-8 && gram_err <= 1e-6;
    assert!(
        verdict(
            "criterion 7 (averaged fundamental solution checks)",
            ok,
            &format!(
                "identity exact = {exact_identity}, theta err {worst_theta:.3e}, gramian err {gram_err:.3e}"
            )
        ),
        "identity {exact_identity}, theta {worst_theta:.3e} (1e-8), gramian {gram_err:.3e} (1e-6)"
    );
}

#[test]
fn criterion_8_failure_paths_are_typed() {
    let icfg = IntegratorConfig::default();

    // backward blow-up of x' = -x^3 with c = 1 over tau in [0, 0.6]
    let model = cubic_decay_model();
    let sets = PerturbationSets::identity(1, vec![1.0]).unwrap();
    let quad = QuadratureConfig::simpson(0.6, 11).unwrap();
    let blow_up = nonlinear_controllability(&model, &sets, &quad, &icfg, 1e12);
    let ok_blow_up = matches!(
        blow_up.as_ref().map_err(|e| e.root()),
        Err(Error::NonFiniteState { .. })
    );

    // ill-conditioned <Theta(-tau)> on a strongly separated linear system
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.1, -40.0]));
    let lin = LtvModel::constant(
        a,
        DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
    )
    .unwrap()
    .to_nonlinear();
    let sets2 = PerturbationSets::identity(2, vec![1.0]).unwrap();
    let quad2 = QuadratureConfig::simpson(1.0, 11).unwrap();
    let ill = nonlinear_controllability(&lin, &sets2, &quad2, &icfg, 1e12);
    let ok_ill = matches!(
        ill.as_ref().map_err(|e| e.root()),
        Err(Error::IllConditioned { .. })
    );
    let ok_node_context = matches!(ill, Err(Error::QuadratureNode { .. }));

    let ok = ok_blow_up && ok_ill && ok_node_context;
    assert!(
        verdict(
            "criterion 8 (typed failures, no silent NaN gramians)",
            ok,
            &format!(
                "blow-up typed = {ok_blow_up}, ill-conditioned typed = {ok_ill}, node context = {ok_node_context}"
            )
        ),
        "blow-up {ok_blow_up}, ill-conditioned {ok_ill}, node context {ok_node_context}"
    );
}
