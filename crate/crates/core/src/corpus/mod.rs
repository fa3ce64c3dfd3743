//! Data model and persistence shared by every stage.

mod cache;
mod manifest;
mod record;
mod survey;

use std::path::PathBuf;

pub use cache::{EmbeddingCache, EmbeddingCacheEntry, CACHE_MAGIC};
pub use manifest::{load_manifest, ManifestStore};
pub use record::{GeneratedImageRef, Label, Record, Status};
pub use survey::{read_survey_ratings, SurveyRating};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate record_id {0:?}")]
    DuplicateId(String),
    #[error("unknown record_id {0:?}")]
    UnknownId(String),
    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("illegal status transition for {id:?}: {from} -> {to}")]
    StatusTransition { id: String, from: String, to: String },
    #[error("manifest {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("embedding dim mismatch: cache holds {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("non-finite value in embedding for key {0:?}")]
    NonFinite(String),
    #[error("embedding cache {path}: {message}")]
    CacheFormat { path: PathBuf, message: String },
    #[error("{path}:{line}: rating {rating} outside [1, 10]")]
    RatingBounds {
        path: PathBuf,
        line: usize,
        rating: i64,
    },
    #[error("storage failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}
