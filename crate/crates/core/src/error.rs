use thiserror::Error;

/// Errors raised by tree construction, operator setup and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmmError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite coordinate at particle {index}")]
    NonFinite { index: usize },

    #[error("coordinate {coord} out of range for depth {depth}")]
    CoordinateOutOfRange { coord: u64, depth: u32 },

    #[error("depth {depth} exceeds the supported maximum {max}")]
    DepthTooLarge { depth: u32, max: u32 },

    #[error("point {index} lies outside the root box")]
    PointOutsideBox { index: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("direction level {level} out of range (tree holds {available} refinements)")]
    DirectionLevelOutOfRange { level: usize, available: usize },

    #[error("direction at refinement 0 has no father")]
    NoFatherDirection,

    #[error("zero translation vector cannot be canonicalized")]
    ZeroTranslation,

    #[error("unknown rotation id {0}")]
    UnknownRotation(usize),

    #[error("kernel singularity on the M2L stencil for translation {0:?}")]
    SingularStencil([i64; 3]),

    #[error("missing M2L entry for level {level}, translation {translation:?}")]
    MissingSymbol { level: u32, translation: [i64; 3] },

    #[error("missing expansion for cell {cell} (direction {direction:?})")]
    MissingExpansion { cell: usize, direction: Option<u32> },

    #[error("high-frequency expansion requested without a direction")]
    MissingDirection,

    #[error("reference vector is identically zero")]
    ZeroReference,

    #[error("unknown distribution `{0}`")]
    UnknownDistribution(String),

    #[error("unknown strategy `{0}` (expected t, t+s or t+s+r)")]
    UnknownStrategy(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, FmmError>;
