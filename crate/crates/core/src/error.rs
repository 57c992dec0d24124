use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("coordinate out of range: lon={lon}, lat={lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate polygon for street `{0}` (fewer than 3 vertices)")]
    DegeneratePolygon(String),
    #[error("zero variance in `{0}`")]
    ZeroVariance(String),
    #[error("spatial weights sum to zero")]
    ZeroWeights,
    #[error("exact collinearity involving column `{0}`")]
    Collinear(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("no residual treatment variation")]
    NoTreatmentVariation,
    #[error("fold too small: {n} observations for {folds} folds (need at least {needed}); use fewer folds")]
    FoldTooSmall { n: usize, folds: usize, needed: usize },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unit_id mismatch: {0}")]
    UnitMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by the caller's data or configuration, as
    /// opposed to numerical breakdowns inside an estimator.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Singular(_) | Error::Numerical(_))
    }
}
