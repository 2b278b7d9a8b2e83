use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed document: {message}")]
    Malformed { path: PathBuf, message: String },

    // corpus
    #[error("{0}: class list is empty")]
    EmptyClassList(PathBuf),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("class {0:?} has an empty descriptor list")]
    EmptyDescriptorList(String),
    #[error("class {0:?} has an empty descriptor string")]
    EmptyDescriptor(String),
    #[error("class {0:?} has no descriptors")]
    MissingDescriptors(String),
    #[error("manifest {name:?}: {labels} labels but {rows} image rows")]
    LabelCountMismatch {
        name: String,
        labels: usize,
        rows: usize,
    },
    #[error("label {label} at row {row} is not a valid class index (have {classes} classes)")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    // wafflegen
    #[error("wordlist has {available} words but {needed} are needed per descriptor")]
    WordlistTooSmall { needed: usize, available: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("requested {requested} items from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    // prompts
    #[error("template {0:?} must contain exactly one {{}} placeholder")]
    BadTemplate(String),

    // embedstore
    #[error("{0}: bad magic, not an embedding file")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported version {found}")]
    BadVersion { path: PathBuf, found: u16 },
    #[error("{path}: unknown dtype code {found}")]
    BadDtype { path: PathBuf, found: u8 },
    #[error("{path}: reserved header byte is {found}, expected 0")]
    BadReserved { path: PathBuf, found: u8 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {rows} rows but {keys} keys")]
    KeysMismatch {
        path: PathBuf,
        rows: usize,
        keys: usize,
    },
    #[error("key {0:?} contains a line break")]
    KeyWithLineBreak(String),
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{missing_count} prompt(s) missing from the text embedding cache, first: {first:?}")]
    CacheMiss {
        missing_count: usize,
        first: Vec<String>,
    },

    // classify
    #[error("class {0} has no descriptor embeddings")]
    EmptyClassEmbeddings(usize),
    #[error("vMF mean direction must be a unit vector (norm {0})")]
    NotUnit(f64),

    // concepts
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),
    #[error("concept is empty after normalization")]
    EmptyConcept,

    // eval
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit code: 2 for I/O and network failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Network(_) => 2,
            _ => 1,
        }
    }
}
