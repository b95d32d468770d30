//! Error types shared across the crate, grouped by pipeline stage.

use std::path::PathBuf;
use thiserror::Error;

/// Problems with corpora on disk or with vocabulary construction.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing corpus file: {0}")]
    MissingCorpusFile(PathBuf),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("{path}:{line}: test pair is not two tab-separated fields")]
    MalformedTestPair { path: PathBuf, line: usize },
    #[error("split for side {side:?} is empty (need at least one support and one query sentence)")]
    EmptySplit { side: &'static str },
    #[error("task {0:?} not present in the dataset")]
    UnknownTask(String),
    #[error("unknown style label {0:?} (expected one of the task's two sides)")]
    UnknownStyle(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Violations of a model's input contract.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    VocabMismatch { id: usize, vocab: usize },
    #[error("batch is degenerate: {0}")]
    DegenerateBatch(String),
    #[error("sentence has no regular tokens")]
    DegenerateSentence,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameter {0:?} missing from the parameter set")]
    MissingParam(String),
    #[error("non-finite loss encountered")]
    NonFinite,
}

/// Failures raised by the meta-training loops.
#[derive(Debug, Error)]
pub enum MetaError {
    #[error("adaptation diverged on task {task_id:?} at step {step} (loss {loss})")]
    DivergedAdaptation {
        task_id: String,
        step: usize,
        loss: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Failures in the evaluation suite.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: every embedding is identical")]
    DegenerateGeometry,
    #[error("sentence {index} is empty after tokenization")]
    DegenerateSentence { index: usize },
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Checkpoint serialization and compatibility failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version {found} (this build reads {supported})")]
    FormatVersion { found: u32, supported: u32 },
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    KindMismatch { expected: String, found: String },
    #[error("tensor {name:?} has shape [{rows},{cols}], expected [{want_rows},{want_cols}]")]
    ShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("tensor {name:?} carries {got} values for shape [{rows},{cols}]")]
    DataLength {
        name: String,
        rows: usize,
        cols: usize,
        got: usize,
    },
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("checkpoint carries unknown tensor {0:?}")]
    UnknownTensor(String),
}

/// Run-configuration loading and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} does not parse: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("config field {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("missing dataset root: {0}")]
    MissingDatasetRoot(PathBuf),
}
