use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, Ratio};
use crate::corpus::Label;
use crate::decision::Prediction;

/// Positive class is OOC (1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn add(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Ooc, Label::Ooc) => self.tp += 1,
            (Label::Ooc, Label::Nooc) => self.fp += 1,
            (Label::Nooc, Label::Nooc) => self.tn += 1,
            (Label::Nooc, Label::Ooc) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = ConfusionMatrix::default();
        for (p, g) in pairs {
            m.add(p, g);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub descriptor: String,
    pub n: u64,
    pub confusion: ConfusionMatrix,
    pub accuracy: Ratio,
    pub precision: Option<Ratio>,
    pub recall: Option<Ratio>,
    pub f1: Option<Ratio>,
    /// Names of metrics left undefined by a zero denominator.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_denominator: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(descriptor: impl Into<String>, m: ConfusionMatrix) -> Result<Self, EvalError> {
        let n = m.total();
        let accuracy = Ratio::new(m.tp + m.tn, n).ok_or(EvalError::Empty)?;
        let precision = Ratio::new(m.tp, m.tp + m.fp);
        let recall = Ratio::new(m.tp, m.tp + m.fn_);
        // harmonic mean of p and r, 2tp / (2tp + fp + fn), when both exist
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => Ratio::new(2 * m.tp, 2 * m.tp + m.fp + m.fn_),
            _ => None,
        };
        let mut zero_denominator = Vec::new();
        for (name, v) in [("precision", precision), ("recall", recall), ("f1", f1)] {
            if v.is_none() {
                zero_denominator.push(name.to_string());
            }
        }
        Ok(MetricsReport {
            descriptor: descriptor.into(),
            n,
            confusion: m,
            accuracy,
            precision,
            recall,
            f1,
            zero_denominator,
        })
    }

    pub fn accuracy_value(&self) -> f64 {
        self.accuracy.value()
    }
}

/// Score predictions against gold labels keyed by record id.
pub fn compute_metrics(
    descriptor: &str,
    preds: &[Prediction],
    gold: &BTreeMap<String, Label>,
) -> Result<MetricsReport, EvalError> {
    let mut seen = BTreeSet::new();
    let mut m = ConfusionMatrix::default();
    for p in preds {
        if !seen.insert(p.record_id.as_str()) {
            return Err(EvalError::DuplicateId(p.record_id.clone()));
        }
        let g = gold
            .get(&p.record_id)
            .ok_or_else(|| EvalError::MissingGold(p.record_id.clone()))?;
        m.add(p.label, *g);
    }
    MetricsReport::from_confusion(descriptor, m)
}

/// Fraction of positions where two aligned label sequences agree.
pub fn agreement(a: &[Label], b: &[Label]) -> Result<Ratio, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count() as u64;
    Ratio::new(matches, a.len() as u64).ok_or(EvalError::Empty)
}

/// Agreement between two prediction sets over the same ids.
pub fn agreement_by_id(a: &[Prediction], b: &[Prediction]) -> Result<Ratio, EvalError> {
    let map_b: BTreeMap<&str, Label> = b.iter().map(|p| (p.record_id.as_str(), p.label)).collect();
    if map_b.len() != a.len() {
        return Err(EvalError::LengthMismatch(a.len(), map_b.len()));
    }
    let mut left = Vec::with_capacity(a.len());
    let mut right = Vec::with_capacity(a.len());
    for p in a {
        let other = map_b
            .get(p.record_id.as_str())
            .ok_or_else(|| EvalError::IdMismatch(p.record_id.clone()))?;
        left.push(p.label);
        right.push(*other);
    }
    agreement(&left, &right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(labels: &[u8]) -> Vec<Prediction> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Prediction::external(i.to_string(), Label::from_u8(l).unwrap()))
            .collect()
    }

    fn gold(labels: &[u8]) -> BTreeMap<String, Label> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i.to_string(), Label::from_u8(l).unwrap()))
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let l = [1, 0, 1, 1, 0];
        let r = compute_metrics("x", &preds(&l), &gold(&l)).unwrap();
        assert_eq!(r.accuracy.value(), 1.0);
        assert_eq!(r.precision.unwrap().value(), 1.0);
        assert_eq!(r.recall.unwrap().value(), 1.0);
        assert_eq!(r.f1.unwrap().value(), 1.0);
    }

    #[test]
    fn zero_denominators_flagged() {
        let r = compute_metrics("x", &preds(&[0, 0]), &gold(&[0, 0])).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.recall, None);
        assert_eq!(r.zero_denominator, vec!["precision", "recall", "f1"]);
        assert_eq!(r.accuracy.value(), 1.0);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        // tp 3, fp 1, fn 2
        let r = compute_metrics("x", &preds(&[1, 1, 1, 1, 0, 0, 0]), &gold(&[1, 1, 1, 0, 1, 1, 0])).unwrap();
        let (p, rc) = (r.precision.unwrap().value(), r.recall.unwrap().value());
        assert!((r.f1.unwrap().value() - 2.0 * p * rc / (p + rc)).abs() < 1e-12);
    }

    #[test]
    fn missing_gold_and_duplicates() {
        let mut g = gold(&[1, 0]);
        g.remove("1");
        assert!(matches!(compute_metrics("x", &preds(&[1, 0]), &g), Err(EvalError::MissingGold(_))));
        let mut p = preds(&[1]);
        p.push(p[0].clone());
        assert!(matches!(compute_metrics("x", &p, &gold(&[1])), Err(EvalError::DuplicateId(_))));
    }

    #[test]
    fn agreement_examples() {
        let a = [Label::Ooc, Label::Nooc, Label::Ooc];
        let b = [Label::Nooc, Label::Ooc, Label::Nooc];
        assert_eq!(agreement(&a, &a).unwrap().value(), 1.0);
        assert_eq!(agreement(&a, &b).unwrap().value(), 0.0);
        assert!(matches!(agreement(&a, &b[..2]), Err(EvalError::LengthMismatch(3, 2))));
    }

    proptest! {
        #[test]
        fn invariant_under_permutation(labels in proptest::collection::vec((0u8..2, 0u8..2), 1..60), seed in any::<u64>()) {
            let p: Vec<u8> = labels.iter().map(|x| x.0).collect();
            let g: Vec<u8> = labels.iter().map(|x| x.1).collect();
            let mut shuffled = preds(&p);
            let n = shuffled.len();
            let mut s = seed | 1;
            for i in (1..n).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let a = compute_metrics("x", &preds(&p), &gold(&g)).unwrap();
            let b = compute_metrics("x", &shuffled, &gold(&g)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn accuracy_equals_agreement(labels in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let p: Vec<u8> = labels.iter().map(|x| x.0).collect();
            let g: Vec<u8> = labels.iter().map(|x| x.1).collect();
            let r = compute_metrics("x", &preds(&p), &gold(&g)).unwrap();
            let pl: Vec<Label> = p.iter().map(|&v| Label::from_u8(v).unwrap()).collect();
            let gl: Vec<Label> = g.iter().map(|&v| Label::from_u8(v).unwrap()).collect();
            prop_assert_eq!(r.accuracy, agreement(&pl, &gl).unwrap());
        }

        #[test]
        fn fixing_one_error_adds_one_over_n(labels in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let mut p: Vec<u8> = labels.iter().map(|x| x.0).collect();
            let g: Vec<u8> = labels.iter().map(|x| x.1).collect();
            if let Some(i) = (0..p.len()).find(|&i| p[i] != g[i]) {
                let before = compute_metrics("x", &preds(&p), &gold(&g)).unwrap().accuracy;
                p[i] = g[i];
                let after = compute_metrics("x", &preds(&p), &gold(&g)).unwrap().accuracy;
                prop_assert_eq!(after.num, before.num + 1);
                prop_assert_eq!(after.den, before.den);
            }
        }
    }
}
