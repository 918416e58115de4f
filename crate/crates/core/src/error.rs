use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lidar spec: {0}")]
    InvalidLidarSpec(String),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid attack config: {0}")]
    InvalidAttack(String),
    #[error("invalid icp config: {0}")]
    InvalidIcp(String),
    #[error("invalid detector config: {0}")]
    InvalidDetector(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestamps out of order: {previous} then {current}")]
    OutOfOrder { previous: f64, current: f64 },
    #[error("timestamp mismatch at frame {index}: {expected} vs {found}")]
    TimestampMismatch { index: usize, expected: f64, found: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labels contain a single class; need both attacked and clean frames")]
    SingleClass,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("scenario parse error in {path}: {message}")]
    ScenarioParse { path: PathBuf, message: String },
    #[error("replay data error: {0}")]
    Replay(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
