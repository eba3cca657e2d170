//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building models, integrating orbits,
/// or quantizing.
#[derive(Debug, Error)]
pub enum SpinError {
    /// `j` must be a positive integer or half-integer.
    #[error("spin j must be a positive multiple of 1/2, got {0}")]
    InvalidSpin(f64),

    /// `hbar` must be positive and finite.
    #[error("hbar must be positive and finite, got {0}")]
    InvalidHbar(f64),

    /// A model needs at least one term.
    #[error("model has no terms")]
    EmptyModel,

    /// The assembled operator is not Hermitian to working precision.
    /// Products of spin operators must be symmetrized by the caller.
    #[error("model matrix is not Hermitian (max |H - H^dag| element = {0:.3e})")]
    NotHermitian(f64),

    /// The iterative eigensolver ran out of sweeps.
    #[error("Hermitian eigendecomposition did not converge")]
    EigenFailed,

    /// A phase-space point left the representable region.
    #[error("phase-space point out of range: {0}")]
    PointOutOfRange(String),

    /// Adaptive step control shrank the step below the representable limit.
    #[error("step size underflow at t = {t:.6e} (stiff or singular point?)")]
    StepUnderflow { t: f64 },

    /// An orbit failed to return to its start within the step budget.
    #[error("orbit did not close: {0}")]
    OrbitOpen(String),

    /// No classical orbit exists at the requested energy.
    #[error("energy {energy:.6e} lies outside every classical branch")]
    EnergyOutOfRange { energy: f64 },

    /// The root finder for one quantized level failed to converge.
    #[error("quantization of level {n} failed: {reason}")]
    QuantizeFailed { n: usize, reason: String },

    /// Grid parameters do not describe a usable grid.
    #[error("invalid phase-space grid: {0}")]
    InvalidGrid(String),

    /// Two fields were compared that do not live on the same grid.
    #[error("fields live on different grids: {0}")]
    GridMismatch(String),

    /// Normalization of a field with no positive values.
    #[error("cannot normalize a field with no positive values")]
    AllZeroField,

    /// A semiclassical field was requested for a level whose orbit
    /// functionals cannot support one.
    #[error("level {n}: semiclassical field needs finite positive T + dI_SK/dE, got {value:.6e}")]
    MissingFunctionals { n: usize, value: f64 },

    /// A state index beyond the Hilbert-space dimension.
    #[error("state index {state} out of range for dimension {dim}")]
    StateOutOfRange { state: usize, dim: usize },
}
