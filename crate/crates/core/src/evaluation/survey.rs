use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{read_survey_ratings, Label, SurveyRating};
use crate::decision::Prediction;

/// Midpoint of the 1-10 rating scale. A mean equal to it counts as similar.
pub const SURVEY_THRESHOLD: f64 = 5.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub pair_id: String,
    pub mean_rating: f64,
    /// Population variance.
    pub variance: f64,
    pub n_raters: u32,
    pub label: Label,
}

/// Per-pair mean and variance, converted to a label: mean below 5.5 is OOC.
///
/// When `known_pairs` is given, ratings for any other pair are an error.
pub fn ingest_survey(
    ratings: &[SurveyRating],
    known_pairs: Option<&BTreeSet<String>>,
) -> Result<Vec<SurveySummary>, EvalError> {
    let mut by_pair: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in ratings {
        if let Some(known) = known_pairs {
            if !known.contains(&r.pair_id) {
                return Err(EvalError::UnknownPair(r.pair_id.clone()));
            }
        }
        by_pair.entry(r.pair_id.as_str()).or_default().push(r.rating);
    }
    Ok(by_pair
        .into_iter()
        .map(|(pair_id, rs)| {
            let n = rs.len() as u64;
            let sum: u64 = rs.iter().map(|&v| v as u64).sum();
            let mean = sum as f64 / n as f64;
            let variance = rs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            // mean < 5.5  <=>  2 * sum < 11 * n, decided in integers
            let label = if 2 * sum < 11 * n { Label::Ooc } else { Label::Nooc };
            SurveySummary {
                pair_id: pair_id.to_string(),
                mean_rating: mean,
                variance,
                n_raters: n as u32,
                label,
            }
        })
        .collect())
}

pub fn ingest_survey_file(
    path: &Path,
    known_pairs: Option<&BTreeSet<String>>,
) -> Result<Vec<SurveySummary>, EvalError> {
    let f = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ratings = read_survey_ratings(f, path)?;
    ingest_survey(&ratings, known_pairs)
}

/// Survey labels in prediction-line form, for scoring against gold.
pub fn survey_predictions(summaries: &[SurveySummary]) -> Vec<Prediction> {
    summaries
        .iter()
        .map(|s| Prediction::external(s.pair_id.clone(), s.label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratings(pair: &str, values: &[u8]) -> Vec<SurveyRating> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| SurveyRating {
                pair_id: pair.into(),
                participant_id: format!("p{i}"),
                rating: v,
            })
            .collect()
    }

    #[test]
    fn mean_at_threshold_is_nooc() {
        let s = ingest_survey(&ratings("a", &[5, 6]), None).unwrap();
        assert_eq!(s[0].mean_rating, 5.5);
        assert_eq!(s[0].label, Label::Nooc);
    }

    #[test]
    fn mean_just_below_is_ooc() {
        // 549 / 100 = 5.49
        let mut vals = vec![5u8; 51];
        vals.extend(vec![6u8; 49]);
        let s = ingest_survey(&ratings("a", &vals), None).unwrap();
        assert!((s[0].mean_rating - 5.49).abs() < 1e-12);
        assert_eq!(s[0].label, Label::Ooc);
    }

    #[test]
    fn constant_ratings() {
        let s = ingest_survey(&ratings("a", &[10, 10]), None).unwrap();
        assert_eq!((s[0].mean_rating, s[0].variance, s[0].n_raters), (10.0, 0.0, 2));
        assert_eq!(s[0].label, Label::Nooc);
    }

    #[test]
    fn population_variance() {
        let s = ingest_survey(&ratings("a", &[1, 3, 5, 7]), None).unwrap();
        assert_eq!(s[0].variance, 5.0);
    }

    #[test]
    fn unknown_pair_rejected() {
        let known: BTreeSet<String> = ["b".to_string()].into();
        assert!(matches!(
            ingest_survey(&ratings("a", &[4]), Some(&known)),
            Err(EvalError::UnknownPair(_))
        ));
    }

    #[test]
    fn reads_csv_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "pair_id,participant_id,rating\nx,p1,2\nx,p2,4\ny,p1,9\n").unwrap();
        let s = ingest_survey_file(&p, None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, Label::Ooc);
        assert_eq!(s[1].label, Label::Nooc);
    }
}
