use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: single-channel required, found {channels} channels")]
    NotSingleChannel { path: PathBuf, channels: u8 },

    #[error("frame data length {len} does not match {width}x{height}")]
    DataLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("frame contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("frame is {width}x{height}, at least {min}x{min} is required")]
    FrameTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("frame dimensions differ: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("empty frame stack")]
    EmptyStack,

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("unsupported patch size {size} for the {basis} basis")]
    UnsupportedPatchSize { size: usize, basis: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("zero aggregation weight at frame {frame}, pixel ({row}, {col})")]
    ZeroDenominator { frame: usize, row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing asset '{name}' (looked for {path})")]
    MissingAsset { name: String, path: PathBuf },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline itself rather than of
    /// inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroDenominator { .. } | Error::NonFinite { .. } | Error::Degenerate(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Decode { .. }
                | Error::NotSingleChannel { .. }
                | Error::MissingAsset { .. }
                | Error::Csv(_)
        )
    }
}
