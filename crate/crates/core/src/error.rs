use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wavelength {wavelength_m:.4e} m outside table span [{min_m:.4e}, {max_m:.4e}] m")]
    WavelengthOutOfRange {
        wavelength_m: f64,
        min_m: f64,
        max_m: f64,
    },

    #[error("invalid permittivity table: {0}")]
    InvalidTable(String),

    #[error("mode solver failed: {0}")]
    SolverFailure(String),

    #[error("polarizability denominator |eps_p/eps_m + 2| = {0:.3e} is at a resonance singularity")]
    ResonanceSingularity(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
