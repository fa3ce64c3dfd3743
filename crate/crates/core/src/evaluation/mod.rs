//! Scoring predictions against gold labels, survey analysis, and the
//! encoder x detector benchmark matrix.

pub mod fixture;
mod io;
mod matrix;
mod metrics;
mod survey;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use io::{read_gold, read_predictions, write_predictions, GoldLine};
pub use matrix::{run_matrix, CellOutcome, CellResult, MatrixCell, MatrixReport, MatrixSpec};
pub use metrics::{agreement, agreement_by_id, compute_metrics, ConfusionMatrix, MetricsReport};
pub use survey::{ingest_survey, ingest_survey_file, survey_predictions, SurveySummary, SURVEY_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for {0:?} has no gold label")]
    MissingGold(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("label sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("id sets differ: {0:?} present on one side only")]
    IdMismatch(String),
    #[error("no records to evaluate")]
    Empty,
    #[error("survey rating for unknown pair {0:?}")]
    UnknownPair(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An exact fraction, kept alongside its decimal value in machine output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn new(num: u64, den: u64) -> Option<Ratio> {
        (den > 0).then_some(Ratio { num, den })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}
