use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("tensor slot {slot} out of range (space has {factors} factors)")]
    SlotOutOfRange { slot: usize, factors: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max |H - H^dagger| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error(
        "Fock truncation too small: |xi|^2 = {mean:.3} needs fock_dim >= {required}, have {dim}"
    )]
    TruncationGuard {
        mean: f64,
        dim: usize,
        required: usize,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {x} outside supported range {range}")]
    OutOfRange { x: f64, range: &'static str },

    #[error("quadrature did not converge on [{a}, {b}] (error estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("norm drift {drift:e} exceeds 1e-7")]
    NormDrift { drift: f64 },

    #[error("propagation failed in arm {arm}: {source}")]
    Arm {
        arm: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "calibration bracket [{lo}, {hi}] does not reach target phase {target} (max {reached})"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        target: f64,
        reached: f64,
    },

    #[error("degenerate parity fit: {0}")]
    DegenerateFit(String),

    #[error("unknown mode label '{0}'")]
    UnknownMode(String),

    #[error("regime violation: {0}")]
    Regime(String),
}
