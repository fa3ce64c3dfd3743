//! The 24 surveyed image pairs (ids 1676-1699) with five published label rows:
//! encoder predictions and survey-derived labels for both generators, plus
//! gold labels. Shipped as files under `fixtures/pairs24/`.

use std::collections::BTreeMap;

use crate::corpus::Label;
use crate::decision::Prediction;

const CLIP_SD: &str = include_str!("../../fixtures/pairs24/clip_sd.jsonl");
const SD_SURVEY: &str = include_str!("../../fixtures/pairs24/sd_survey.jsonl");
const CLIP_DALLE2: &str = include_str!("../../fixtures/pairs24/clip_dalle2.jsonl");
const DALLE2_SURVEY: &str = include_str!("../../fixtures/pairs24/dalle2_survey.jsonl");
const GOLD: &str = include_str!("../../fixtures/pairs24/gold.jsonl");

/// Fixture rows by name: `clip_sd`, `sd_survey`, `clip_dalle2`, `dalle2_survey`.
pub const ROWS: [&str; 4] = ["clip_sd", "sd_survey", "clip_dalle2", "dalle2_survey"];

fn parse(text: &str) -> Vec<Prediction> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled fixture parses"))
        .collect()
}

pub fn row(name: &str) -> Option<Vec<Prediction>> {
    let text = match name {
        "clip_sd" => CLIP_SD,
        "sd_survey" => SD_SURVEY,
        "clip_dalle2" => CLIP_DALLE2,
        "dalle2_survey" => DALLE2_SURVEY,
        _ => return None,
    };
    Some(parse(text))
}

pub fn gold() -> BTreeMap<String, Label> {
    GOLD.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let g: super::GoldLine = serde_json::from_str(l).expect("bundled fixture parses");
            (g.record_id, g.label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_cover_the_same_24_ids() {
        let g = gold();
        assert_eq!(g.len(), 24);
        assert_eq!(g.values().filter(|l| **l == Label::Ooc).count(), 12);
        for name in ROWS {
            let r = row(name).unwrap();
            assert_eq!(r.len(), 24);
            assert!(r.iter().all(|p| g.contains_key(&p.record_id)));
        }
        assert_eq!(g.keys().next().unwrap(), "1676");
        assert_eq!(g.keys().last().unwrap(), "1699");
    }
}
