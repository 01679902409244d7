//! Empirical balanced truncation of nonlinear state-space systems.
//!
//! The crate computes four families of controllability/observability
//! gramians (classical LTI/LTV, impulse/initial-condition empirical,
//! bilinear Lyapunov-form, and averaged-fundamental-solution gramians for
//! nonlinear drift) and reduces models by square-root balancing with
//! Petrov-Galerkin projection. The nonlinear RC-ladder circuit serves as the
//! built-in benchmark.
//!
//! All numerical kernels are generic over the scalar type through
//! [`scalar::Scalar`] (`f32` or `f64`); the concrete aliases below fix the
//! working precision. The pipeline/CLI layer is `f64`.

pub mod balance;
pub mod carleman;
pub mod error;
pub mod gramian;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` working types.
pub type NonlinearModel64 = model::NonlinearModel<f64>;
pub type LtvModel64 = model::LtvModel<f64>;
pub type BilinearModel64 = model::BilinearModel<f64>;
pub type PerturbationSets64 = model::PerturbationSets<f64>;
pub type Trajectory64 = ode::Trajectory<f64>;
pub type IntegratorConfig64 = ode::IntegratorConfig<f64>;
pub type Gramian64 = linalg::Gramian<f64>;
pub type QuadratureConfig64 = gramian::QuadratureConfig<f64>;
pub type ReductionBasis64 = balance::ReductionBasis<f64>;
pub type ReducedModel64 = balance::ReducedModel<f64>;

/// Concrete `f32` variants for single-precision experiments.
pub type NonlinearModel32 = model::NonlinearModel<f32>;
pub type LtvModel32 = model::LtvModel<f32>;
pub type BilinearModel32 = model::BilinearModel<f32>;
pub type Trajectory32 = ode::Trajectory<f32>;
pub type Gramian32 = linalg::Gramian<f32>;
