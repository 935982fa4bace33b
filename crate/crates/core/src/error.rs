//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The CLI maps
//! errors to exit codes through [`Error::class`]: configuration problems,
//! bad or missing data, and numerical failures are distinct classes.

use thiserror::Error;

/// Coarse error classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration: unknown keys, invalid values, inconsistent setup.
    Config,
    /// Bad or missing data: unreadable files, malformed images, empty pools.
    Data,
    /// Numerical failure: divergence, degenerate statistics, non-convergence.
    Numerical,
}

impl ErrorClass {
    /// Process exit code for this class (success is 0).
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    // ---- shapes and tensor-level misuse ----
    #[error("dimension mismatch in {op}: {details}")]
    Dimension { op: &'static str, details: String },
    #[error("degenerate input in {op}: {details}")]
    DegenerateInput { op: &'static str, details: String },

    // ---- network construction and training ----
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("activation trace does not match the network: {0}")]
    TraceMismatch(String),
    #[error("concept channel {channel} out of range ({count} channels)")]
    ChannelOutOfRange { channel: usize, count: usize },

    // ---- weights file ----
    #[error("weights file: bad magic bytes")]
    WeightsBadMagic,
    #[error("weights file: unsupported format version {0}")]
    WeightsVersion(u8),
    #[error("weights file: truncated at byte {offset}")]
    WeightsTruncated { offset: usize },
    #[error("weights file declares zero tensors (empty model)")]
    WeightsEmptyModel,
    #[error("weights file does not fit the architecture: {0}")]
    WeightsMismatch(String),

    // ---- netpbm parsing ----
    #[error("unsupported netpbm format {found:?} (only binary P5/P6)")]
    PnmUnsupported { found: String },
    #[error("netpbm header error at byte {offset}: {details}")]
    PnmHeader { offset: usize, details: String },
    #[error("netpbm pixel data truncated at byte {offset}: expected {expected} bytes, found {found}")]
    PnmTruncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    // ---- datasets ----
    #[error("dataset layout error: {0}")]
    DatasetLayout(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("inconsistent image shapes in dataset: {0}")]
    InconsistentShapes(String),
    #[error("instance {id:?} has label {label}, expected 0 or 1")]
    InvalidLabel { id: String, label: usize },
    #[error("synthetic image size {size} too small (minimum {min})")]
    ImageTooSmall { size: usize, min: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("instance {0:?} not found in dataset")]
    UnknownInstance(String),

    // ---- explanation pipeline ----
    #[error("no contrast candidates: opposite-class pool is empty")]
    NoContrast,
    #[error("degenerate attribution: no strictly positive concept score")]
    DegenerateAttribution,
    #[error("instance {id:?} is misclassified (predicted {predicted:?}, labelled {actual:?}) and cannot be explained")]
    NotExplainable {
        id: String,
        predicted: String,
        actual: String,
    },

    // ---- statistics ----
    #[error("zero within-group variance: F statistic undefined")]
    ZeroWithinVariance,
    #[error("zero variance of paired differences: t statistic undefined")]
    ZeroVariance,
    #[error("domain error in {op}: {details}")]
    Domain { op: &'static str, details: String },
    #[error("{op} did not converge after {iterations} iterations")]
    NonConvergence { op: &'static str, iterations: usize },

    // ---- configuration ----
    #[error("config line {line}: {details}")]
    ConfigParse { line: usize, details: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownConfigKey { line: usize, key: String },
    #[error("config key {key:?}: {details}")]
    InvalidConfigValue { key: String, details: String },

    // ---- concept name map ----
    #[error("name map line {line}: {details}")]
    NameMap { line: usize, details: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class for this error (config = 2, data = 3, numerical = 4).
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Architecture(_)
            | ConfigParse { .. }
            | UnknownConfigKey { .. }
            | InvalidConfigValue { .. } => ErrorClass::Config,

            Dimension { .. }
            | DegenerateInput { .. }
            | TraceMismatch(_)
            | ChannelOutOfRange { .. }
            | WeightsBadMagic
            | WeightsVersion(_)
            | WeightsTruncated { .. }
            | WeightsEmptyModel
            | WeightsMismatch(_)
            | PnmUnsupported { .. }
            | PnmHeader { .. }
            | PnmTruncated { .. }
            | DatasetLayout(_)
            | EmptyDataset(_)
            | InconsistentShapes(_)
            | InvalidLabel { .. }
            | ImageTooSmall { .. }
            | InsufficientData(_)
            | UnknownInstance(_)
            | NoContrast
            | NotExplainable { .. }
            | NameMap { .. }
            | Io { .. } => ErrorClass::Data,

            Diverged { .. }
            | DegenerateAttribution
            | ZeroWithinVariance
            | ZeroVariance
            | Domain { .. }
            | NonConvergence { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
