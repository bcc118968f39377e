use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectral space: {0}")]
    InvalidSpace(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("operator is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("input is not real-valued (max imaginary part {0:.3e})")]
    NotReal(f64),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("operator is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("relative entropy undefined: second argument is singular (min eigenvalue {0:.3e})")]
    RelativeEntropyUndefined(f64),

    #[error("density not bounded below: min value {0:.3e}")]
    DensityNotBoundedBelow(f64),

    #[error("singular division: density touches zero (min value {0:.3e})")]
    SingularDensity(f64),

    #[error("initial state rejected: {0}")]
    InitialState(String),

    #[error("trace mismatch: {0:.17e} vs {1:.17e}")]
    TraceMismatch(f64, f64),

    #[error("moment solve did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NotConverged { residual: f64, iterations: usize },

    #[error("density floor breached at t = {t}: min density {min_density:.3e} < floor {floor:.3e}")]
    DensityFloor {
        t: f64,
        min_density: f64,
        floor: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
