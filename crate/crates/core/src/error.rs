use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("malformed potential: {0}")]
    MalformedPotential(String),
    #[error("point {x} lies on a partition boundary")]
    Boundary { x: f64 },
    #[error("orbit of {x} hits a partition boundary at step {step}")]
    OrbitHitsBoundary { x: f64, step: usize },
    #[error("point {y} is not in the image of branch {branch}")]
    NotInImage { branch: usize, y: f64 },
    #[error("root finding did not converge for word {word:?}")]
    RootFinding { word: Vec<u8> },
    #[error("level {requested} exceeds the built levels (max {built})")]
    LevelNotBuilt { requested: usize, built: usize },
    #[error("level {level} would hold {count} cylinders, above the memory guard {limit}")]
    TooManyCylinders { level: usize, count: usize, limit: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("too many censored samples: {censored} of {samples}")]
    ExcessiveCensoring { censored: usize, samples: usize },
    #[error("asymptotic variance vanishes ({sigma2:e}); observable is cohomologous to a constant")]
    SigmaZero { sigma2: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
