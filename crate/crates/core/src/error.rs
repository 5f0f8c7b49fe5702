//! Error types, one enum per pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {id:?} at record {line}")]
    DuplicateId { id: String, line: usize },
    #[error("{field} dimension mismatch at record {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("label {label} at record {line} is not 0 or 1")]
    InvalidLabel { label: i64, line: usize },
    #[error("embedding for {id:?} has dimension {found}, expected {expected}")]
    EmbeddingDimension {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in embedding for {id:?}")]
    NonFiniteEmbedding { id: String },
    #[error("embedding id {id:?} not present in the companion corpus")]
    UnknownId { id: String },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum NarrativeError {
    #[error("item {id:?} has no textual payload")]
    MissingText { id: String },
    #[error("narrative endpoint failed after {attempts} attempt(s): {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("narrative endpoint returned an empty narrative for {id:?}")]
    EmptyResponse { id: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("embedding dimension mismatch: store dimension is {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate narrative record for {id:?}")]
    DuplicateId { id: String },
    #[error("cannot normalize a zero-norm embedding for {id:?}")]
    ZeroNorm { id: String },
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unknown query id {id:?}")]
    UnknownQuery { id: String },
    #[error("no candidates available for query {id:?}")]
    EmptyPool { id: String },
    #[error("zero vector on item {id:?}")]
    ZeroVector { id: String },
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("missing narrative embedding for train item {id:?}")]
    MissingEmbedding { id: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value produced by {context} at layer {layer}")]
    NonFinite { context: &'static str, layer: usize },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("weights leave the probability simplex: sum = {sum}")]
    OffSimplex { sum: f64 },
    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("batch too small: need at least {need}, got {got}")]
    BatchTooSmall { need: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("train split has {got} items, smaller than batch size {batch}")]
    TrainSplitTooSmall { got: usize, batch: usize },
    #[error("evaluation split {split:?} is empty")]
    EmptySplit { split: String },
    #[error("narrative store does not cover train item {id:?}")]
    StoreGap { id: String },
    #[error("prediction/label length mismatch: {predictions} vs {labels}")]
    BatchMismatch { predictions: usize, labels: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
