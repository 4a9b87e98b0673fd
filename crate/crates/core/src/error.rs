use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: empty input")]
    Empty { op: &'static str },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("non-finite gradient in parameter group `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss while perturbing `{name}`[{index}] (flat parameter index {flat_index})")]
    NonFiniteLoss {
        name: String,
        index: usize,
        flat_index: usize,
    },

    #[error("convolution input length {len} is shorter than kernel width {width}")]
    KernelTooWide { len: usize, width: usize },

    #[error("pool width must be at least 1, got {0}")]
    PoolWidth(usize),

    #[error("attention weight row {row} sums to {sum}, expected 1")]
    UnnormalizedWeights { row: usize, sum: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step} (epoch {epoch}); parameters restored to the last finite checkpoint")]
    Diverged { step: usize, epoch: usize },

    #[error("split `{split}` has {len} rows, fewer than the window size T = {window}")]
    SplitTooShort {
        split: String,
        len: usize,
        window: usize,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Strips any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
