use thiserror::Error;

/// Errors raised across the pipeline. Variants are grouped so the CLI can map
/// them onto exit codes: usage/configuration, data, numeric.
#[derive(Debug, Error)]
pub enum ClpError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("schema conflict: node {node} appears with types {first} and {second}")]
    SchemaConflict {
        node: String,
        first: String,
        second: String,
    },

    #[error("insufficient temporal span: {0} nonempty snapshots, need at least 2")]
    InsufficientSpan(usize),

    #[error("unknown edge type {0} in snapshot")]
    UnknownEdgeType(String),

    #[error("negative sampling exhausted: requested {requested}, available {available}")]
    NegativeExhaustion { requested: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing embedding for node {0}")]
    MissingEmbedding(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient population: need at least 2 nodes in the last snapshot")]
    InsufficientPopulation,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint integrity error: {0}")]
    CheckpointIntegrity(String),

    #[error("unsupported checkpoint version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ClpError>;

impl ClpError {
    /// Process exit code class: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClpError::InvalidParameter(_) | ClpError::Config(_) => 1,
            ClpError::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
