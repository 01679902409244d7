//! Property-based invariants for the quadrature and repair primitives.

mod common;

use embalance::linalg::psd_factor_matrix;
use embalance::ode::{mean_value, Trajectory};
use embalance::pipeline::rms_error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn traj_from(values: &[f64], span: f64) -> Trajectory<f64> {
    let n = values.len();
    let grid: Vec<f64> = (0..n).map(|k| span * k as f64 / (n - 1) as f64).collect();
    Trajectory {
        grid,
        states: values
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect(),
        outputs: Some(
            values
                .iter()
                .map(|&v| DVector::from_element(1, v))
                .collect(),
        ),
    }
}

proptest! {
    #[test]
    fn mean_of_constant_is_constant(
        value in -1e6f64..1e6,
        len in 2usize..50,
        span in 1e-3f64..1e3,
    ) {
        let traj = traj_from(&vec![value; len], span);
        let mean = mean_value(&traj)[0];
        prop_assert!((mean - value).abs() <= 1e-10 * value.abs().max(1.0));
    }

    #[test]
    fn rms_of_constant_offset_is_the_offset(
        base in proptest::collection::vec(-1e3f64..1e3, 2..40),
        offset in -1e3f64..1e3,
    ) {
        let shifted: Vec<f64> = base.iter().map(|v| v + offset).collect();
        let a = traj_from(&base, 1.0);
        let b = traj_from(&shifted, 1.0);
        let rms = rms_error(&a, &b).unwrap();
        prop_assert!((rms - offset.abs()).abs() <= 1e-9 * offset.abs().max(1.0));
    }

    #[test]
    fn psd_repair_is_a_projection(
        entries in proptest::collection::vec(-1.0f64..1.0, 16),
        shift in 0.0f64..0.5,
    ) {
        let g = DMatrix::from_vec(4, 4, entries);
        let sym = (&g + g.transpose()) * 0.5 + DMatrix::identity(4, 4) * shift;
        let once = psd_factor_matrix(&sym);
        let repaired = &once.factor * once.factor.transpose();
        let twice = psd_factor_matrix(&repaired);
        let repaired2 = &twice.factor * twice.factor.transpose();
        let scale = repaired.amax().max(1e-30);
        prop_assert!((repaired2 - &repaired).amax() <= 1e-12 * scale);
    }
}
