use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised while reading a PLY file.
#[derive(Debug, Error)]
pub enum PlyError {
    #[error("malformed PLY header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unsupported PLY encoding `{format}` at header line {line}")]
    UnsupportedEncoding { line: usize, format: String },
    #[error("PLY body truncated at byte offset {offset}: {reason}")]
    Truncated { offset: u64, reason: String },
    #[error("invalid PLY value at byte offset {offset}: {reason}")]
    InvalidValue { offset: u64, reason: String },
}

/// Failures raised by the binary containers (MCOP images, patch banks, held-out maps).
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("size mismatch: header declares {expected} bytes of payload, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: PlyError,
    },
    #[error("{path}: {source}")]
    Container {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate polyline: total length is zero")]
    DegeneratePath,
    #[error("offset path self-intersects between segments {first} and {second}")]
    SelfIntersectingOffset { first: usize, second: usize },
    #[error("turn row {turn_row} at column {column} is out of range for {rows} rows")]
    TurnRowOutOfRange {
        column: usize,
        turn_row: usize,
        rows: usize,
    },
    #[error("window at ({x}, {y}) of size {w} exceeds {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        width: usize,
        height: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("patch bank is empty: {0}")]
    EmptyBank(String),
    #[error("point cloud is empty: {0}")]
    EmptyCloud(String),
    #[error("mask bank has no patch with completeness in [{lo}, {hi}]")]
    NoMaskInRange { lo: f64, hi: f64 },
    #[error("rotation column {column} sums to {sum} (|sum - pi| exceeds {tolerance})")]
    RotationSum {
        column: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("rotation column {column} has zero sum and cannot be normalized")]
    ZeroRotationColumn { column: usize },
    #[error("patch at ({x}, {y}) is incomplete (completeness {completeness})")]
    IncompletePatch { x: usize, y: usize, completeness: f64 },
    #[error("held-out map is empty")]
    HeldOutEmpty,
    #[error("need at least {needed} windows per side, got {got}")]
    TooFewWindows { needed: usize, got: usize },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Coarse failure class, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Config { .. } => ErrorKind::Config,
            Error::Ply { .. } | Error::Container { .. } => ErrorKind::Format,
            Error::Invariant(_)
            | Error::RotationSum { .. }
            | Error::IncompletePatch { .. }
            | Error::ZeroRotationColumn { .. } => ErrorKind::Invariant,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Format,
    Invariant,
    Input,
}
