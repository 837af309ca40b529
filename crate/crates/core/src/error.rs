use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("recipe error: {0}")]
    Recipe(String),

    #[error("structural error at grid point {point:?}: {message}")]
    Structural { point: Vec<usize>, message: String },

    #[error("degree error: {0}")]
    Degree(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("frame error at grid point {point:?}: {message}")]
    Frame { point: Vec<usize>, message: String },

    #[error("frame discontinuity at grid point {point:?}: neighbour jump {jump:.3e} exceeds {threshold:.3e}")]
    FrameDiscontinuity {
        point: Vec<usize>,
        jump: f64,
        threshold: f64,
    },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("positivity amplitude unbounded: no loss of positivity up to s = {s_max:e}")]
    UnboundedAmplitude { s_max: f64 },

    #[error("ellipticity lost: taming margin {margin:.3e} is not above {threshold:e}")]
    EllipticityLoss { margin: f64, threshold: f64 },

    #[error("no seed potential exists: {0}")]
    NoSeed(String),

    #[error("seed search failed: {0}")]
    SeedSearch(String),

    #[error("resolution error: {message} (need at least {required})")]
    Resolution { message: String, required: usize },

    #[error("bump amplitude {amplitude} exceeds 1 for R = {radius}: the bump cannot reach the taming boundary")]
    AmplitudeExceedsOne { amplitude: f64, radius: f64 },

    #[error("R search failed: {0}")]
    RSearch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
