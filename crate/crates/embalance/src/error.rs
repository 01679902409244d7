//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by models, integrators, gramian builders and pipelines.
///
/// Numerical diagnostics are carried as `f64` regardless of the working
/// scalar type so that error values stay printable and comparable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integration exceeded {steps} steps at t = {t:.6e}")]
    StepLimitExceeded { t: f64, steps: usize },

    #[error("state became non-finite at t = {t:.6e} (finite-time blow-up or overflow)")]
    NonFiniteState { t: f64 },

    #[error("matrix has an eigenvalue with real part {max_re:.6e} >= 0")]
    UnstableMatrix { max_re: f64 },

    #[error("matrix condition number {cond:.3e} exceeds limit {limit:.3e}")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("Lyapunov residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("Lyapunov block system is singular (eigenvalue pair sums to zero)")]
    SingularLyapunovBlock,

    #[error("Schur decomposition did not converge")]
    SchurFailed,

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("matrix is not nilpotent within {max_power} powers")]
    NotNilpotent { max_power: usize },

    #[error("gramian is identically zero (degenerate perturbation set or horizon)")]
    DegenerateGramian,

    #[error("requested order {requested} exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("balancing produced a basis with biorthogonality error {biorth_err:.3e}")]
    BalancingFailed { biorth_err: f64 },

    #[error("exponent {exponent:.3e} exceeds overflow guard {limit:.3e}")]
    Overflow { exponent: f64, limit: f64 },

    #[error("trajectory grids do not match: {0}")]
    GridMismatch(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("ensemble member (i={i}, l={l}, m={m}) failed: {source}")]
    EnsembleMember {
        i: usize,
        l: usize,
        m: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("quadrature node tau = {tau:.6e} failed: {source}")]
    QuadratureNode {
        tau: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("pipeline stage '{stage}' failed: {source}")]
    PipelineStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach a pipeline stage label to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::PipelineStage {
            stage,
            source: Box::new(self),
        }
    }

    /// Attach the perturbation-set member that produced the error.
    pub fn for_member(self, i: usize, l: usize, m: usize) -> Self {
        Error::EnsembleMember {
            i,
            l,
            m,
            source: Box::new(self),
        }
    }

    /// Attach the quadrature node that produced the error.
    pub fn at_node(self, tau: f64) -> Self {
        Error::QuadratureNode {
            tau,
            source: Box::new(self),
        }
    }

    /// Walk the source chain to the innermost `Error`.
    pub fn root(&self) -> &Error {
        match self {
            Error::EnsembleMember { source, .. }
            | Error::QuadratureNode { source, .. }
            | Error::PipelineStage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
