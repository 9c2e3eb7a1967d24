//! Crate-wide error type.

/// Everything that can go wrong across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A gradient evaluation produced NaN or Inf — usually a diverged model.
    #[error("non-finite gradient entry at flat index {index}")]
    NonFiniteGradient { index: usize },

    /// An inner gradient had norm below the guard threshold, so a
    /// cosine-based functional of it is undefined.
    #[error("gradient norm {norm:e} below {limit:e}; cosine undefined")]
    DegenerateGradient { norm: f64, limit: f64 },

    /// Two flat vectors do not share a parameter layout.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// A model forward pass produced NaN or Inf.
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    /// A scalar loss came out NaN or Inf.
    #[error("non-finite loss value")]
    NonFiniteLoss,

    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("file truncated: needed {needed} bytes, got {got}")]
    TruncatedFile { needed: usize, got: usize },

    #[error("forget set is empty under the given label predicate")]
    EmptyForgetSet,

    #[error("retain set is empty under the given label predicate")]
    EmptyRetainSet,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("covariance is not positive semidefinite: min eigenvalue {min_eig:e}")]
    NonPsdCovariance { min_eig: f64 },

    /// `compare` was asked for a speed-up pair that one report lacks.
    #[error("no matching report entry for algorithm {0}")]
    MissingPair(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
