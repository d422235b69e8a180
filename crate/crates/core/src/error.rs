use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("invalid segment weights: {0}")]
    InvalidWeights(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter {name} = {value} outside domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("accumulator is empty")]
    EmptyAccumulator,

    #[error("rank deficient: needed {needed} eigenvalues above floor, spectrum {spectrum:?}")]
    RankDeficient { needed: usize, spectrum: Vec<f64> },

    #[error("power iteration did not converge after {restarts} restarts (best movement {best_movement:e})")]
    NoConvergence { restarts: usize, best_movement: f64 },

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("degenerate iterate: {0}")]
    Degenerate(String),

    #[error("empty local cloud around {center:?} with radius {radius}")]
    EmptyLocalCloud { center: Vec<f64>, radius: f64 },

    #[error("ambiguous elbow: {0}")]
    AmbiguousElbow(String),

    #[error("trace failed in {direction} pass after {completed} vertices: {source}")]
    Trace {
        direction: &'static str,
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
