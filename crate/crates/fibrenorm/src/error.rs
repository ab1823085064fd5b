use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are shared across modules because a renormalization run threads
/// through most of them: an inversion failure deep in a cascade surfaces at
/// the trajectory driver, which may restart at doubled precision.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Root target not bracketed by the supplied interval.
    #[error("target {target} not bracketed by f on [{lo}, {hi}]")]
    Bracket { target: String, lo: String, hi: String },

    /// Requested tolerance unreachable at the working precision.
    #[error("tolerance {tol} unreachable at {bits} bits")]
    Tolerance { tol: String, bits: u32 },

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Interval too short (or empty) for the requested operation.
    #[error("degenerate interval [{a}, {b}]")]
    DegenerateInterval { a: String, b: String },

    /// Catastrophic cancellation detected; caller should restart at higher
    /// precision.
    #[error("precision exhausted at {bits} bits ({context})")]
    PrecisionExhausted { bits: u32, context: &'static str },

    /// Restart cascade hit the precision ceiling.
    #[error("precision ceiling: {max_bits} bits insufficient")]
    PrecisionCeiling { max_bits: u32 },

    /// Coordinates violate the simplex constraints.
    #[error("simplex violation: {0}")]
    SimplexViolation(String),

    /// Orbit failed to return to the base interval within the iteration cap.
    #[error("no return to the base interval within {max_iter} iterations")]
    NonReturn { max_iter: usize },

    /// An orbit segment hit the flat interval before the final step.
    #[error("orbit of the interval met the flat interval at step {step}")]
    FlatHit { step: usize },

    /// Point is not renormalizable.
    #[error("point not renormalizable: {0}")]
    NotRenormalizable(String),

    /// Inversion bracket failed inside the renormalization step, which
    /// signals an inconsistent state rather than a user error.
    #[error("inversion bracket failed in renormalization step: {0}")]
    InversionBracket(String),

    /// Invariant estimators disagree beyond the reported tolerance.
    #[error("invariant extraction did not converge: {0}")]
    NotConverged(String),

    /// Eigenbasis is numerically singular.
    #[error("singular eigenbasis")]
    SingularBasis,

    /// Finite-difference step too large for the local scale.
    #[error("finite-difference step {step} exceeds S1/8 = {limit}")]
    StepTooLarge { step: String, limit: String },

    /// The two trajectories do not reach a common depth.
    #[error("trajectory depth mismatch: {0} vs {1}")]
    DepthMismatch(usize, usize),

    /// Both bracket endpoints fail on the same side.
    #[error("bracket endpoints fail with the same orientation: {0}")]
    SameSideBracket(String),

    /// Classification landed in the gray zone between tolerances.
    #[error("inconclusive classification: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
