use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("solution diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("forward pass diverged after layer {layer}")]
    LayerDivergence { layer: usize },

    #[error("{} grid point(s) failed; first at index {}: {}", .0.len(), .0[0].0, .0[0].1)]
    PointFailures(Vec<(usize, Error)>),

    #[error("normal equations are singular or ill-conditioned (ridge = {ridge}); use ridge > 0")]
    IllConditioned { ridge: f64 },

    #[error("approximation target {target:e} not met; best sup error {best:e}")]
    ApproximationFailure { best: f64, target: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} search exhausted at {limit}: achieved {achieved:e}, required {required:e}")]
    SearchExhausted {
        what: &'static str,
        limit: f64,
        achieved: f64,
        required: f64,
    },

    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_slice(self, slice: usize) -> Self {
        Error::Slice {
            slice,
            source: Box::new(self),
        }
    }
}
