use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("line {line}: unknown label {value:?}")]
    UnknownLabel { line: usize, value: String },

    #[error("line {line}: unknown split {value:?}")]
    UnknownSplit { line: usize, value: String },

    #[error("line {line}: duplicate comment id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("holdout of fraction {fraction} over {n} comments would be empty")]
    EmptyHoldout { fraction: f64, n: usize },

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("variant {variant} cannot use user context {context}")]
    VariantMismatch { variant: String, context: String },

    #[error("pca: {0}")]
    Pca(String),

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
