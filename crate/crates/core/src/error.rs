use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KaemError {
    #[error("non-finite latent value {0}")]
    NonFiniteInput(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density is not normalized; call normalize() first")]
    NotNormalized,
    #[error("partition function is degenerate: log Z = {0}")]
    DegeneratePartition(f64),
    #[error("uniform variate {0} outside [0, 1]")]
    UniformOutOfRange(f64),
    #[error("weights are not normalized (sum = {0})")]
    UnnormalizedWeights(f64),
    #[error("all importance weights vanished; prior and posterior are mismatched")]
    WeightAnnihilation,
    #[error("non-finite gradient at Langevin iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("replica log-likelihood cache is stale")]
    StaleCache,
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("non-finite objective at update {update}: {detail}")]
    NonFiniteObjective { update: usize, detail: String },
    #[error("grid model too large: {0} nodes")]
    GridTooLarge(usize),
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, KaemError>;
