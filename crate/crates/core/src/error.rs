use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{source_name}: malformed input at {location}: {message}")]
    Format {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("layer {layer} ({kind}) has no prunable weights")]
    InvalidTarget { layer: usize, kind: String },

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{cols} columns overflow 16-bit column indices; use IndexWidth::U32")]
    IndexOverflow { cols: usize },

    #[error("bundle version mismatch: found {found}, this build reads {expected}")]
    BundleVersion { found: u32, expected: u32 },

    #[error("bundle blob truncated: region `{region}` needs bytes {start}..{end}, blob has {len}")]
    BundleTruncated {
        region: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("bundle checksum failure in region `{region}`")]
    BundleChecksum { region: String },

    #[error("bundle manifest line {line}: {message}")]
    BundleParse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
