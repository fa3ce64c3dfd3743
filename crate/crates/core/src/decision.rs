//! Turning similarity scores into OOC/NOOC labels.
//!
//! Both rules treat a score equal to the threshold as "above" (`s >= T`).

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// Recorded in every predictions file and report.
pub const TIE_RULE: &str = "score >= threshold counts as above";

pub const DEFAULT_THRESHOLD: f64 = 0.50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecisionError {
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("median of an empty score set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// Original image vs each generated image (sim1, sim2).
    OrigVsGen,
    /// Generated image 1 vs generated image 2.
    GenVsGen,
    /// Labels produced outside this pipeline (survey, published rows).
    External,
}

impl DecisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionMode::OrigVsGen => "orig-vs-gen",
            DecisionMode::GenVsGen => "gen-vs-gen",
            DecisionMode::External => "external",
        }
    }
}

impl std::str::FromStr for DecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "orig-vs-gen" => Ok(DecisionMode::OrigVsGen),
            "gen-vs-gen" => Ok(DecisionMode::GenVsGen),
            other => Err(format!("unknown mode {other:?} (orig-vs-gen | gen-vs-gen)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Median of all gen-vs-gen scores in the run.
    MedianOfRun,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    pub mode: DecisionMode,
    /// Threshold for orig-vs-gen.
    pub threshold: f64,
    pub gen_threshold_source: ThresholdSource,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            mode: DecisionMode::OrigVsGen,
            threshold: DEFAULT_THRESHOLD,
            gen_threshold_source: ThresholdSource::MedianOfRun,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub sim1: f64,
    pub sim2: f64,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub label: Label,
    pub mode: DecisionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_gg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Prediction {
    pub fn external(record_id: impl Into<String>, label: Label) -> Self {
        Prediction {
            record_id: record_id.into(),
            label,
            mode: DecisionMode::External,
            sim1: None,
            sim2: None,
            sim_gg: None,
            threshold: None,
        }
    }
}

fn finite(v: f64) -> Result<f64, DecisionError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DecisionError::NonFinite(v))
    }
}

/// Label from the two original-vs-generated scores: NOOC only when both reach
/// the threshold, OOC when either (or both) falls below it.
pub fn orig_gen_label(pair: SimilarityPair, threshold: f64) -> Result<Label, DecisionError> {
    let (s1, s2, t) = (finite(pair.sim1)?, finite(pair.sim2)?, finite(threshold)?);
    Ok(if s1 >= t && s2 >= t { Label::Nooc } else { Label::Ooc })
}

pub fn predict_orig_gen(
    record_id: &str,
    pair: SimilarityPair,
    threshold: f64,
) -> Result<Prediction, DecisionError> {
    Ok(Prediction {
        record_id: record_id.to_string(),
        label: orig_gen_label(pair, threshold)?,
        mode: DecisionMode::OrigVsGen,
        sim1: Some(pair.sim1),
        sim2: Some(pair.sim2),
        sim_gg: None,
        threshold: Some(threshold),
    })
}

/// Median; for even counts the midpoint of the central pair.
pub fn calibrate_median(scores: &[f64]) -> Result<f64, DecisionError> {
    if scores.is_empty() {
        return Err(DecisionError::Empty);
    }
    let mut sorted = scores.iter().map(|&s| finite(s)).collect::<Result<Vec<_>, _>>()?;
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

pub fn gen_gen_label(sim_gg: f64, threshold: f64) -> Result<Label, DecisionError> {
    Ok(if finite(sim_gg)? < finite(threshold)? {
        Label::Ooc
    } else {
        Label::Nooc
    })
}

pub fn predict_gen_gen(record_id: &str, sim_gg: f64, threshold: f64) -> Result<Prediction, DecisionError> {
    Ok(Prediction {
        record_id: record_id.to_string(),
        label: gen_gen_label(sim_gg, threshold)?,
        mode: DecisionMode::GenVsGen,
        sim1: None,
        sim2: None,
        sim_gg: Some(sim_gg),
        threshold: Some(threshold),
    })
}

/// Label a whole run of gen-vs-gen scores, calibrating the threshold over the
/// run when configured to. Returns the predictions and the threshold used.
pub fn predict_gen_gen_run(
    scores: &[(String, f64)],
    source: ThresholdSource,
) -> Result<(Vec<Prediction>, f64), DecisionError> {
    let threshold = match source {
        ThresholdSource::Fixed(t) => finite(t)?,
        ThresholdSource::MedianOfRun => {
            calibrate_median(&scores.iter().map(|(_, s)| *s).collect::<Vec<_>>())?
        }
    };
    let preds = scores
        .iter()
        .map(|(id, s)| predict_gen_gen(id, *s, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((preds, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lab(s1: f64, s2: f64) -> u8 {
        orig_gen_label(SimilarityPair { sim1: s1, sim2: s2 }, 0.5).unwrap().as_u8()
    }

    #[test]
    fn orig_gen_examples() {
        assert_eq!(lab(0.30, 0.40), 1);
        assert_eq!(lab(0.30, 0.70), 1);
        assert_eq!(lab(0.60, 0.90), 0);
        assert_eq!(lab(0.50, 0.50), 0);
    }

    #[test]
    fn non_finite_rejected() {
        let p = SimilarityPair { sim1: f64::NAN, sim2: 0.5 };
        assert!(matches!(orig_gen_label(p, 0.5), Err(DecisionError::NonFinite(_))));
        assert!(gen_gen_label(0.3, f64::INFINITY).is_err());
        assert!(calibrate_median(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(calibrate_median(&[0.9, 0.2, 0.6]).unwrap(), 0.6);
        assert!((calibrate_median(&[0.4, 0.8]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(calibrate_median(&[0.7, 0.7, 0.7]).unwrap(), 0.7);
        assert_eq!(calibrate_median(&[]), Err(DecisionError::Empty));
    }

    #[test]
    fn gen_gen_examples() {
        let scores: Vec<(String, f64)> = [0.2, 0.6, 0.9].iter().enumerate().map(|(i, s)| (i.to_string(), *s)).collect();
        let (preds, t) = predict_gen_gen_run(&scores, ThresholdSource::MedianOfRun).unwrap();
        assert_eq!(t, 0.6);
        let labels: Vec<u8> = preds.iter().map(|p| p.label.as_u8()).collect();
        assert_eq!(labels, vec![1, 0, 0]);
        assert_eq!(gen_gen_label(1.0, 1.0).unwrap(), Label::Nooc);
        let same: Vec<(String, f64)> = (0..5).map(|i| (i.to_string(), 0.42)).collect();
        let (preds, _) = predict_gen_gen_run(&same, ThresholdSource::MedianOfRun).unwrap();
        assert!(preds.iter().all(|p| p.label == Label::Nooc));
    }

    #[test]
    fn prediction_line_format() {
        let p = predict_orig_gen("r7", SimilarityPair { sim1: 0.25, sim2: 0.75 }, 0.5).unwrap();
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"record_id":"r7","label":1,"mode":"orig_vs_gen","sim1":0.25,"sim2":0.75,"threshold":0.5}"#
        );
    }

    proptest! {
        #[test]
        fn orig_gen_symmetric(a in -1.0f64..1.0, b in -1.0f64..1.0, t in -1.0f64..1.0) {
            let x = orig_gen_label(SimilarityPair { sim1: a, sim2: b }, t).unwrap();
            let y = orig_gen_label(SimilarityPair { sim1: b, sim2: a }, t).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn orig_gen_step_in_sim1(s1 in 0.0f64..1.0, s2 in 0.5f64..1.0) {
            let l = orig_gen_label(SimilarityPair { sim1: s1, sim2: s2 }, 0.5).unwrap();
            prop_assert_eq!(l, if s1 < 0.5 { Label::Ooc } else { Label::Nooc });
        }

        #[test]
        fn labels_invariant_under_increasing_transform(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..40),
            t in -1.0f64..1.0,
        ) {
            let f = |v: f64| (v * 3.0).exp() + 2.0;
            for w in scores.windows(2) {
                let a = orig_gen_label(SimilarityPair { sim1: w[0], sim2: w[1] }, t).unwrap();
                let b = orig_gen_label(SimilarityPair { sim1: f(w[0]), sim2: f(w[1]) }, f(t)).unwrap();
                prop_assert_eq!(a, b);
            }
            for &s in &scores {
                prop_assert_eq!(gen_gen_label(s, t).unwrap(), gen_gen_label(f(s), f(t)).unwrap());
            }
        }

        #[test]
        fn median_splits_distinct_scores(raw in proptest::collection::btree_set(0u32..1_000_000, 1..200)) {
            let scores: Vec<(String, f64)> = raw.iter().map(|&v| (v.to_string(), v as f64 / 1e6)).collect();
            let (preds, _) = predict_gen_gen_run(&scores, ThresholdSource::MedianOfRun).unwrap();
            let ooc = preds.iter().filter(|p| p.label == Label::Ooc).count();
            prop_assert_eq!(ooc, scores.len() / 2);
        }
    }
}
