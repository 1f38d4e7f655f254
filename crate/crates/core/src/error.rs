use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // cloud-io
    #[error("PLY vertex element lacks property `{0}`")]
    MissingProperty(String),
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("PLY body truncated: {0}")]
    TruncatedBody(String),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("degenerate cloud: all points coincide")]
    DegenerateCloud,
    #[error("unknown split `{0}` (expected train or test)")]
    UnknownSplit(String),
    #[error("mos {mos} outside scale [{lo}, {hi}]")]
    MosOutOfRange { mos: f64, lo: f64, hi: f64 },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    // geometry-kernels
    #[error("k = {k} exceeds point count {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("n = {n} exceeds point count {m}")]
    NTooLarge { n: usize, m: usize },
    #[error("no point within radius {0}")]
    EmptyBall(f64),

    // key-cluster-extraction
    #[error("filter declares length {declared} but has {given} coefficients")]
    FilterLengthMismatch { declared: usize, given: usize },
    #[error("cloud has {n} points, fewer than beta = {beta}")]
    CloudTooSmall { n: usize, beta: usize },
    #[error("malformed key-cluster file: {0}")]
    MalformedKeyClusters(String),

    // distortion-lab
    #[error("distortion produced an empty cloud")]
    EmptyResult,
    #[error("invalid distortion spec: {0}")]
    InvalidDistortion(String),

    // qa-network
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("attention block needs an even channel count, got {0}")]
    OddChannelCount(usize),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    // progressive-trainer / metrics
    #[error("need at least three entries with distinct mos per source, `{0}` has too few")]
    TooFewEntries(String),
    #[error("correlation undefined: constant input vector")]
    ConstantVector,
    #[error("degenerate batch: constant targets or predictions")]
    DegenerateBatch,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
