use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports. Data-file diagnostics carry the
/// 1-based data row (the header line is not counted).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("{path}: header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("row {row}: dimension mismatch: {detail}")]
    DimensionMismatch { row: usize, detail: String },
    #[error("row {row}: column `{column}` is not a finite real: `{value}`")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: unknown split `{value}` (expected train, val or test)")]
    BadSplit { row: usize, value: String },
    #[error("row {row}: label `{label}` is not in the label space")]
    UnknownClass { row: usize, label: String },
    #[error("row {row}: `{split}` record labeled unknown; unknown-class examples are removed from train and val")]
    UnknownInTraining { row: usize, split: String },
    #[error("row {row}: duplicate id `{id}` (first seen at row {first})")]
    DuplicateId { row: usize, id: String, first: usize },
    #[error("input vector has {found} entries, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{0}: record with unknown gold label where a known label is required")]
    UnknownGold(&'static str),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("invalid search bracket: need 0 < t_lo < t_hi and tol > 0 (t_lo={t_lo}, t_hi={t_hi}, tol={tol})")]
    Bracket { t_lo: f64, t_hi: f64, tol: f64 },
    #[error("bin count must be at least 1")]
    Bins,
    #[error("class `{0}` has no records in the statistics slice")]
    EmptyClass(String),
    #[error("need at least {need} training points for k = {k}, have {have}")]
    TooFewPoints { have: usize, need: usize, k: usize },
    #[error("method `{0}` needs the fused model; use the fusion predictor")]
    NeedsFusion(&'static str),
    #[error("inconsistent model: {0}")]
    Model(String),
    #[error("prediction ids do not match gold test ids: {0}")]
    IdMismatch(String),
    #[error("known-class ratio {ratio} selects {selected} of {total} classes; need a non-empty strict subset")]
    Ratio {
        ratio: f64,
        selected: usize,
        total: usize,
    },
    #[error("run manifest does not match bundle: {0}")]
    ManifestMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
