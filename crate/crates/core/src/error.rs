use thiserror::Error;

/// Errors raised across the library. The variant name is part of the
/// `Display` output so CLI users can grep for it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("UnstableDrift: eigenvalue with real part {real} (must be > 0)")]
    UnstableDrift { real: f64 },
    #[error("SingularNoise: smallest singular value {smallest} vs largest {largest}")]
    SingularNoise { smallest: f64, largest: f64 },
    #[error("NumericalFailure: {0}")]
    NumericalFailure(String),
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("EmptySample")]
    EmptySample,
    #[error("ZeroRadius: r = {0}")]
    ZeroRadius(f64),
    #[error("UnstableStep: dt*|A|_2 = {0} >= 0.5 for the Euler scheme")]
    UnstableStep(f64),
    #[error("InvalidInit: {0}")]
    InvalidInit(String),
    #[error("TooShort: {0}")]
    TooShort(String),
    #[error("SingularEstimate: {0}")]
    SingularEstimate(String),
    #[error("ZeroObservable")]
    ZeroObservable,
    #[error("OriginHit: sample {0} is at the origin")]
    OriginHit(usize),
    #[error("InvalidBlock: block length {block_len} for {n_steps} steps")]
    InvalidBlock { block_len: usize, n_steps: usize },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("Parse: {0}")]
    Parse(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
