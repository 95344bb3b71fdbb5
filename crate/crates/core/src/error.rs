use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-norm vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite activation at layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unknown camera id {0}")]
    UnknownCamera(u32),

    #[error("unknown tracklet (camera {camera_id}, tracklet {tracklet_id})")]
    UnknownTracklet { camera_id: u32, tracklet_id: u32 },

    #[error("unknown image id {0}")]
    UnknownImage(usize),

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
