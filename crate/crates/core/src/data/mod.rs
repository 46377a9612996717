//! Persistent domain types and their on-disk formats.

mod manifest;
mod ratings;
mod trace;

use std::path::Path;

pub use manifest::{load_manifest, save_manifest, ChunkEncoding, VideoManifest};
pub use ratings::{
    load_ratings, read_sessions_csv, save_ratings, split_dataset, write_sessions_csv,
    DatasetCounts, Query, Rater, RatingDataset, ScoreRow, SessionRecord, SCORES_FILE,
    SESSIONS_FILE,
};
pub use trace::{load_trace, load_trace_dir, save_trace, NetworkTrace, TraceSample};

/// Bitrate ladder used throughout the evaluation setup, in Mbps.
pub const DEFAULT_LADDER_MBPS: [f64; 6] = [0.3, 0.75, 1.2, 1.85, 2.85, 4.3];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("line {line}: malformed ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: timestamp not strictly increasing")]
    NonMonotonicTimestamp { line: usize },
    #[error("line {line}: bandwidth must be positive")]
    NonPositiveBandwidth { line: usize },
    #[error("trace needs at least 2 samples, found {0}")]
    TooFewSamples(usize),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{what} decreases at level {level}{}", chunk.map(|c| format!(" of chunk {c}")).unwrap_or_default())]
    MonotonicityViolation {
        chunk: Option<usize>,
        level: usize,
        what: &'static str,
    },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("score references unknown session {session}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    DanglingSessionRef { session: String, line: Option<usize> },
    #[error("score {score} outside [0, 100]{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    ScoreOutOfRange { score: f64, line: Option<usize> },
    #[error("query {0} has fewer than 2 sessions")]
    EmptyQuery(String),
    #[error("split leaves one side empty")]
    DegenerateSplit,
    #[error("{path}: {source}")]
    InFile {
        path: String,
        source: Box<DataError>,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
