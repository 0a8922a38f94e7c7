use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("level window [{k_min}, {k_max}] is empty; need k_min < K")]
    EmptyWindow { k_min: i32, k_max: i32 },
    #[error("non-positive or non-finite mass: {0}")]
    NonPositiveMass(String),
    #[error("inconsistent child weights at node '{node}': fractions sum to {sum}")]
    InconsistentWeights { node: String, sum: f64 },
    #[error("invalid branching: {0}")]
    InvalidBranching(String),
    #[error("tree too large: {leaves} leaves exceeds the limit of {limit}")]
    TooLarge { leaves: usize, limit: usize },
    #[error("level {level} outside window [{k_min}, {k_max}]")]
    LevelOutOfWindow { level: i32, k_min: i32, k_max: i32 },
    #[error("level order violation: cannot map level {from} to level {to}")]
    LevelOrderViolation { from: i32, to: i32 },
    #[error("level mismatch: expected level {expected}, found {found}")]
    LevelMismatch { expected: i32, found: i32 },
    #[error("addresses or objects come from different tree spaces")]
    MixedSpaces,
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("kernel evaluated on the diagonal")]
    DiagonalQuery,
    #[error("invalid lambda profile: {0}")]
    InvalidLambda(String),
    #[error("kernel is not symmetric: J({x},{y}) = {forward} but J({y},{x}) = {backward}")]
    AsymmetricKernel {
        x: String,
        y: String,
        forward: f64,
        backward: f64,
    },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("gamma references component {index} but {count} components were supplied")]
    ComponentCountMismatch { index: usize, count: usize },
    #[error("inconsistent gamma assignment: {0}")]
    InconsistentGamma(String),
    #[error("negative or non-finite rate {rate} at ({i}, {j})")]
    NegativeRate { i: usize, j: usize, rate: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("resolvent parameter must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("linear system is singular or indefinite")]
    SingularSystem,
    #[error("k0 = {k0} is below m(g) = {m}")]
    K0BelowM { k0: i32, m: i32 },
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("initial density has zero mass")]
    ZeroDensity,
    #[error("insufficient samples: {got} paths, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
