use thiserror::Error;

/// Errors raised while configuring or running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid preset: {0}")]
    Preset(String),

    #[error("invalid potential: {0}")]
    Potential(String),

    #[error("time step {dt} exceeds stability budget {budget}")]
    StepTooLarge { dt: f64, budget: f64 },

    /// The center-of-mass frame energy in the rate denominator is not positive.
    #[error("rate denominator {denominator} is not positive (E0 = {e0} exceeds state energy)")]
    Denominator { denominator: f64, e0: f64 },

    #[error("invalid walk parameters: {0}")]
    Walk(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    Mismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("audit error: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
