use thiserror::Error;

/// Errors raised anywhere in the model, simulation and estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("positive assortative matching violated: {0}")]
    PamViolation(String),
    #[error("degenerate denominator: {0}")]
    DivisionDegenerate(String),
    #[error("argument outside the model domain: {0}")]
    DomainError(String),
    #[error("grid too small: {got} points, need at least {need}")]
    GridTooSmall { got: usize, need: usize },
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("worker-firm graph is not connected ({components} components)")]
    NotConnected { components: usize },
    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverNoConvergence { iterations: usize, residual: f64 },
    #[error("unknown worker id {0}")]
    UnknownWorker(u64),
    #[error("too few observations: {got}, need at least {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),
    #[error("insufficient panel: {0}")]
    InsufficientPanel(String),
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),
    #[error("missing coefficients for sector {0}")]
    MissingCoefficients(u32),
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("shares do not sum to one in year {year} (sum = {sum})")]
    SharesNotNormalized { year: i32, sum: f64 },
    #[error("window {start}-{end} outside the series")]
    WindowOutOfRange { start: i32, end: i32 },
    #[error("too few firms in year {year}: {got}")]
    TooFewFirms { year: i32, got: usize },
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("[{stage}] {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
