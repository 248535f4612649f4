use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Header or structure of an input file is not what we accept.
    #[error("format error: {0}")]
    Format(String),

    /// File header parsed but the payload is short or inconsistent.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    /// A presentation attack (or unlabeled) sample reached a bonafide-only stage.
    #[error("zero-PA violation: {0}")]
    ZeroPaViolation(String),

    #[error("empty model set: training requires at least one bonafide B-scan")]
    EmptyModelSet,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    /// A checkpoint or calibration a stage depends on does not exist yet.
    #[error("missing artifact {}: run the producing stage first", .0.display())]
    MissingArtifact(PathBuf),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("degenerate calibration: {0}")]
    CalibrationDegenerate(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// Evaluation needs both bonafide and PA samples.
    #[error("single-class input: {0}")]
    SingleClass(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
