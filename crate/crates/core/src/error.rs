use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {0:?}, expected \"MSMX\"")]
    BadMagic([u8; 4]),
    #[error("unsupported matrix container version {0}")]
    BadVersion(u32),
    #[error("truncated matrix payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("subject {subject:?}: label {label:?} is not in the class set")]
    UnknownLabel { subject: String, label: String },
    #[error("subject {subject:?}: bold has {found} voxels, template has {expected}")]
    VoxelMismatch {
        subject: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate subject id {0:?}")]
    DuplicateId(String),
    #[error("zero-variance voxel at index {0}")]
    ZeroVarianceVoxel(usize),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("class {class:?} has {size} members, fewer than {k} folds; use fewer folds")]
    ClassTooSmall { class: String, size: usize, k: usize },
    #[error("class {0:?} is absent")]
    MissingClass(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Innermost error with all `Context` layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by a bad configuration rather than bad data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Json(_))
    }
}

pub trait ResultExt<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: context().into(),
            source: Box::new(e),
        })
    }
}
