use std::path::PathBuf;

/// Errors produced by the mapping, fusion and I/O routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),
    #[error("cell index ({i}, {j}) outside {width}x{height} grid")]
    CellOutOfBounds {
        i: usize,
        j: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate ground fit: {0}")]
    DegenerateFit(String),
    #[error("enumeration over {0} frames exceeds the limit of {max}", max = crate::fusion::BRUTE_FORCE_MAX_FRAMES)]
    EnumerationTooLarge(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("evaluation mask selects no cells")]
    EmptyMask,
    #[error("layer '{0}' not found")]
    MissingLayer(String),
    #[error("duplicate layer name '{0}'")]
    DuplicateLayer(String),
    #[error("fusion window contains no frame within {radius} m of the reference pose")]
    EmptyWindow { radius: f64 },
    #[error("unknown scene preset '{0}'")]
    UnknownPreset(String),
    #[error("unknown point cloud format '{0}'")]
    UnknownFormat(String),
    #[error("{path}: byte length {len} is not a multiple of the {stride}-byte record stride")]
    BadStride { path: PathBuf, len: usize, stride: usize },
    #[error("grid map format error: {0}")]
    Format(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("scene file error: {0}")]
    Scene(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
