use thiserror::Error;

/// Errors reported by the simulation library.
#[derive(Debug, Error)]
pub enum OrhcError {
    /// Geometry that does not line up with the mesh (misaligned
    /// rectangles, invalid subdivision counts, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A vector or matrix with the wrong dimension was passed in.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Breakdown of a numerical procedure (singular pivot, eigensolver
    /// stagnation, non-finite data, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Linear-solver failure inside a time-stepping loop.
    #[error("linear solve failed at step {step} (t = {time}): {reason}")]
    StepSolve {
        step: usize,
        time: f64,
        reason: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl OrhcError {
    pub fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        OrhcError::Dimension {
            context,
            expected,
            got,
        }
    }
}
