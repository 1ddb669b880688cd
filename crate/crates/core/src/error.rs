use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The simulator produced a trace that violates its own invariants.
    #[error("trace corruption: {0}")]
    TraceCorruption(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    /// Scenario cannot be simulated as given (oversubscribed source, unknown VC, bad wiring).
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    /// A cell-level latency reconstruction went negative: the monitor overhead is wrong.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("loss observed at the minimum probe rate ({0} bps): below measurement floor")]
    BelowMeasurementFloor(f64),

    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
