use thiserror::Error;

use crate::geometry::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point {0} lies outside the mesh")]
    PointOutsideMesh(Point),

    #[error("field on level {found} used where level {expected} was required")]
    LevelMismatch { expected: usize, found: usize },

    #[error("alpha must lie in (0, 2), got {0}")]
    AlphaOutOfRange(f64),

    #[error("walk step requested at a point with zero boundary distance: {0}")]
    DegenerateDistance(Point),

    #[error("walk from {start} did not exit after {max_steps} steps")]
    MaxStepsExceeded { start: Point, max_steps: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("projected cost {projected} steps exceeds the budget of {budget}")]
    BudgetExceeded { projected: f64, budget: f64 },

    #[error("exact solution has zero norm; relative error is undefined")]
    ZeroReferenceNorm,

    #[error("start points must be distinct, both are {0}")]
    CoincidentPoints(Point),

    #[error("no spectral gap: the Hessenberg matrix has a single Ritz value")]
    NoSpectralGap,

    #[error("leading Ritz value is complex: {re} + {im}i")]
    ComplexRitzValue { re: f64, im: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error in `{expr}`: {message}")]
    Expression { expr: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
