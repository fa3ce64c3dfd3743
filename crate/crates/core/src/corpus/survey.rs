use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One participant's similarity rating (1 = least similar, 10 = most) for a
/// generated image pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRating {
    pub pair_id: String,
    pub participant_id: String,
    pub rating: u8,
}

#[derive(Deserialize)]
struct RawRating {
    pair_id: String,
    participant_id: String,
    rating: i64,
}

/// Parse a `pair_id,participant_id,rating` CSV. Ratings outside 1..=10 are
/// rejected with the offending line number (header is line 1).
pub fn read_survey_ratings<R: Read>(reader: R, origin: &Path) -> Result<Vec<SurveyRating>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RawRating>().enumerate() {
        let line = i + 2;
        let raw = row.map_err(|e| CorpusError::Parse {
            path: origin.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !(1..=10).contains(&raw.rating) {
            return Err(CorpusError::RatingBounds {
                path: origin.to_path_buf(),
                line,
                rating: raw.rating,
            });
        }
        out.push(SurveyRating {
            pair_id: raw.pair_id,
            participant_id: raw.participant_id,
            rating: raw.rating as u8,
        });
    }
    Ok(out)
}
