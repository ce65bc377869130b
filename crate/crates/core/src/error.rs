use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are split into two families: input problems (schema, validation,
/// dimensions, geometry of the description) and numerical failures raised
/// while solving or integrating. [`Error::is_numerical`] tells them apart, which
/// the CLI uses to choose its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mass-fraction system has no solution: {0}")]
    NoSolution(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("compile error: {0}")]
    Compile(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("mass matrix is singular (condition estimate {0:.3e})")]
    SingularMass(f64),
    #[error("actuation matrix is rank deficient at the requested pose")]
    SingularActuation,
    #[error("integrator step failure at t = {t}: step size {h:.3e} below minimum")]
    StepFailure { t: f64, h: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("constraint saddle-point system is singular at t = {0}")]
    SolverSingular(f64),
    #[error("constraint drift {drift:.3e} exceeds tolerance {tol:.3e} at t = {t}")]
    DriftExceeded { t: f64, drift: f64, tol: f64 },
    #[error("regression design matrix is rank deficient")]
    RankDeficient,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("trajectory time grids do not overlap")]
    GridMismatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("name collision: {0}")]
    NameCollision(String),
    #[error("golden mismatch:\n{0}")]
    Mismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoSolution(_)
                | Error::SingularSystem(_)
                | Error::SingularMass(_)
                | Error::SingularActuation
                | Error::StepFailure { .. }
                | Error::NonFinite(_)
                | Error::SolverSingular(_)
                | Error::DriftExceeded { .. }
                | Error::RankDeficient
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
