use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain [{lo}, {hi}] excludes {excluded:.4} of the mass (limit {limit})")]
    Coverage {
        lo: f64,
        hi: f64,
        excluded: f64,
        limit: f64,
    },

    #[error("time step {dt:e} violates the stability bound; admissible dt <= {admissible:e}")]
    Stability { dt: f64, admissible: f64 },

    #[error("particle {particle} left the safety box at t = {time} (|x| = {magnitude:e}); reduce dt")]
    Divergence {
        particle: usize,
        time: f64,
        magnitude: f64,
    },

    #[error("point {x} lies outside the grid domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("unsupported dimension {0}; only {1} supported here")]
    Dimension(usize, &'static str),

    #[error("missing snapshots: {0}")]
    MissingSnapshots(String),

    #[error("inapplicable: {0}")]
    Inapplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
