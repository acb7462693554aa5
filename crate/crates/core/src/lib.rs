//! Finite-horizon state-feedback system level synthesis (SLS) with an H2
//! objective, solved by dynamic programming over the spectral components
//! of the closed-loop response.
//!
//! The crate provides three synthesizers — plain finite-horizon SLS, an
//! infinite-horizon approximation that drops the terminal boundary
//! condition, and a variant that honors entrywise linear constraints on
//! the response (a superclass of sparsity/locality constraints) — plus an
//! independent KKT-based quadratic-program oracle, a closed-loop impulse
//! simulator, and generators for random chain plants and d-locality
//! constraint sets.
//!
//! All solvers operate on the pair of spectral components
//! `{phi_x[tau], phi_u[tau]}` for `tau = 1..T`, which must satisfy the
//! achievability conditions
//!
//! ```text
//! phi_x[1] = I,
//! phi_x[tau+1] = A phi_x[tau] + B phi_u[tau],
//! A phi_x[T] + B phi_u[T] = 0   (finite-impulse-response boundary)
//! ```
//!
//! and minimize `sum_tau ||C phi_x[tau] + D phi_u[tau]||_F^2`.

pub mod constraints;
pub mod kkt;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod synth;

mod jsonmat;

pub use constraints::{
    d_locality, d_locality_pattern, from_sparsity, membership_residual, EntrywiseConstraint,
    SparsityPattern,
};
pub use kkt::{assemble, KktDims, KktSystem};
pub use linalg::{
    left_kron_lift, null_space_basis, null_space_intersection, pinv, pinv_with_tol, unvectorize,
    vectorize, NullSpaceBasis, DEFAULT_RANK_TOL,
};
pub use model::{
    chain_distance, default_h2_objective, generate_chain, ChainSpec, H2Objective, Plant,
    SynthesisProblem,
};
pub use sim::{log_heatmap, simulate_impulse, ControllerRealization, Trajectory};
pub use synth::{
    evaluate_h2, feasible_step, synthesize_h2_approx, synthesize_h2_constrained,
    synthesize_h2_plain, AchievabilityResiduals, FeasibleStep, GainSchedule, SystemResponse,
};

/// Errors produced by construction, synthesis, and the KKT oracle.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix or vector dimensions are inconsistent with the operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument violates a precondition (non-finite entries, empty
    /// interval, zero horizon, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The problem admits no response satisfying all equality constraints.
    #[error("infeasible: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Infeasible { residual: f64, tolerance: f64 },

    /// A dense factorization failed to converge or produced no solution.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Numeric(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Stack size for the worker threads that run dense factorizations.
///
/// OpenBLAS's threaded LU (`dgetrf_parallel`) recurses with large frames
/// and overflows the 2 MiB default stack of spawned Rust threads even for
/// moderate matrices, so the solver entry points execute on a dedicated
/// thread with a roomy stack.
const COMPUTE_STACK_BYTES: usize = 32 * 1024 * 1024;

pub(crate) fn on_compute_stack<T, F>(f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .name("slsdp-compute".into())
            .stack_size(COMPUTE_STACK_BYTES)
            .spawn_scoped(scope, f)
            .expect("failed to spawn compute thread")
            .join()
            .unwrap_or_else(|payload| std::panic::resume_unwind(payload))
    })
}
