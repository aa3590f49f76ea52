use thiserror::Error;

/// Errors surfaced by grid construction, kernel evaluation, the steady-state
/// solver, the time integrator and the diagnostic solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the tabulation box")]
    OutOfDomain,

    #[error("e^-V does not decay below the truncation threshold at the grid boundary (box too small)")]
    BoundaryDecay,

    #[error("kernel evaluated at its singularity")]
    KernelSingularity,

    #[error("grid is not symmetric about the origin")]
    AsymmetricGrid,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("density has a nonpositive node")]
    NonpositiveDensity,

    #[error("exponent overflow in S(rho): -V - K rho reaches {max_exponent:.3e}")]
    ExponentOverflow { max_exponent: f64 },

    #[error("Picard iteration diverged: residual {residual:.3e} exceeds 10x initial {initial:.3e}")]
    Divergence { residual: f64, initial: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("eigensolver failed to converge")]
    EigenFailure,

    #[error("conjugate gradient did not converge in {iters} iterations (residual {residual:.3e})")]
    CgNoConvergence { iters: usize, residual: f64 },

    #[error("twisted Gram matrix is not positive definite (coercivity smallness violated)")]
    GramNotPositive,

    #[error("kernel fails the positivity check (worst ratio {worst_ratio:.3e}); set the override to proceed")]
    KernelNotPositive { worst_ratio: f64 },

    #[error("rate fit needs at least {needed} positive samples in the window, got {got}")]
    FitWindow { needed: usize, got: usize },

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
