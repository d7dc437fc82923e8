//! Error taxonomy shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A special-function evaluation could not reach the requested
    /// accuracy. The best available value and its error bound are kept so
    /// callers can decide whether the result is still usable.
    #[error("accuracy failure: requested {requested:.3e}, achieved {achieved:.3e} (value {value:.17e})")]
    AccuracyFailure {
        value: f64,
        achieved: f64,
        requested: f64,
    },

    /// The implicit per-step solve for the neutral term did not contract.
    #[error("neutral term too stiff: implicit iteration at step {step} stalled at residual {residual:.3e}")]
    NeutralStiffness { step: usize, residual: f64 },

    /// Every singular value of the steering matrix fell below the rank
    /// threshold: the discretized control operator reaches nothing.
    #[error("uncontrollable discretization: largest singular value {sigma_max:.3e} below rank threshold")]
    UncontrollableDiscretization { sigma_max: f64 },

    /// The requested target has components outside the numerically
    /// controllable subspace.
    #[error("target unreachable: least-squares residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    TargetUnreachable { residual: f64, tolerance: f64 },

    /// The fixed-point sweep ran out of iterations. The ratio history is
    /// attached so callers can report the observed contraction behaviour.
    #[error("fixed-point iteration did not converge in {iterations} sweeps (last delta {last_delta:.3e})")]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        ratios: Vec<f64>,
    },

    /// Endpoint-projection iterations stopped making progress.
    #[error("feasibility projection stalled: defect {defect:.3e} above tolerance {tolerance:.3e} after {iterations} corrections")]
    ProjectionFailure {
        defect: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// A scenario file violated one or more of its invariants.
    #[error("invalid scenario: {}", violations.join("; "))]
    InvalidScenario { violations: Vec<String> },

    /// A scenario file could not be parsed.
    #[error("scenario parse error in {path}: {message}")]
    ScenarioParse { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
