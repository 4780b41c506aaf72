use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The (velocity-displaced) user device sits on top of a base station.
    #[error("degenerate geometry: user device within {distance:e} m of base station {bs_index}")]
    DegenerateGeometry { bs_index: usize, distance: f64 },

    #[error("rank deficient system ({detail})")]
    RankDeficient { detail: String },

    /// The iteration budget ran out. `last` is the final iterate, flattened.
    #[error("not converged after {iterations} iterations (last step norm {step_norm:e})")]
    NotConverged {
        iterations: usize,
        step_norm: f64,
        last: Box<DVector<f64>>,
    },

    #[error("diverged at iteration {iteration}: step norm {step_norm:e} exceeds guard")]
    Diverged { iteration: usize, step_norm: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

impl Error {
    pub(crate) fn rank(detail: impl Into<String>) -> Self {
        Error::RankDeficient { detail: detail.into() }
    }
}
