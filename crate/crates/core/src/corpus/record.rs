use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CorpusError;

/// Binary OOC annotation. Serialized as the integers used in published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Not out of context (0).
    Nooc,
    /// Out of context (1).
    Ooc,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Nooc => 0,
            Label::Ooc => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Nooc),
            1 => Some(Label::Ooc),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Pipeline progress of a record. Transitions only move forward; `Rejected`
/// is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Sanitized,
    Generated,
    Embedded,
    Predicted,
    Rejected { reason: String },
}

impl Status {
    /// Position along pending -> predicted; `None` for rejected.
    pub fn rank(&self) -> Option<u8> {
        match self {
            Status::Pending => Some(0),
            Status::Sanitized => Some(1),
            Status::Generated => Some(2),
            Status::Embedded => Some(3),
            Status::Predicted => Some(4),
            Status::Rejected { .. } => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Status::Rejected { .. })
    }

    /// True when the record has reached `stage` (rejected records never have).
    pub fn reached(&self, stage: &Status) -> bool {
        match (self.rank(), stage.rank()) {
            (Some(a), Some(b)) => a >= b,
            _ => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Sanitized => "sanitized",
            Status::Generated => "generated",
            Status::Embedded => "embedded",
            Status::Predicted => "predicted",
            Status::Rejected { .. } => "rejected",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Rejected { reason } => write!(f, "rejected({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImageRef {
    pub path: PathBuf,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub width: u32,
    pub height: u32,
    pub created_at: DateTime<Utc>,
}

/// One evaluation unit: an original image with its two captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub original_image: PathBuf,
    pub caption1_raw: String,
    pub caption2_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption1_clean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption2_clean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen1: Option<GeneratedImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen2: Option<GeneratedImageRef>,
    #[serde(default = "default_status")]
    pub status: Status,
    /// Fields this version does not know about; written back unchanged.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn default_status() -> Status {
    Status::Pending
}

impl Record {
    pub fn new(
        record_id: impl Into<String>,
        original_image: impl Into<PathBuf>,
        caption1: impl Into<String>,
        caption2: impl Into<String>,
    ) -> Self {
        Record {
            record_id: record_id.into(),
            original_image: original_image.into(),
            caption1_raw: caption1.into(),
            caption2_raw: caption2.into(),
            caption1_clean: None,
            caption2_clean: None,
            gold_label: None,
            gen1: None,
            gen2: None,
            status: Status::Pending,
            extra: Map::new(),
        }
    }

    pub fn with_gold(mut self, label: Label) -> Self {
        self.gold_label = Some(label);
        self
    }

    pub fn clean_caption(&self, which: u8) -> Option<&str> {
        match which {
            1 => self.caption1_clean.as_deref(),
            _ => self.caption2_clean.as_deref(),
        }
    }

    pub fn gen_ref(&self, which: u8) -> Option<&GeneratedImageRef> {
        match which {
            1 => self.gen1.as_ref(),
            _ => self.gen2.as_ref(),
        }
    }

    pub fn set_gen_ref(&mut self, which: u8, r: GeneratedImageRef) {
        match which {
            1 => self.gen1 = Some(r),
            _ => self.gen2 = Some(r),
        }
    }

    /// Move the status forward. Staying put is allowed; moving backwards or
    /// leaving `Rejected` is not.
    pub fn advance(&mut self, to: Status) -> Result<(), CorpusError> {
        let legal = match (self.status.rank(), to.rank()) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(a), Some(b)) => b >= a,
        };
        if !legal {
            return Err(CorpusError::StatusTransition {
                id: self.record_id.clone(),
                from: self.status.to_string(),
                to: to.to_string(),
            });
        }
        self.status = to;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: &str| CorpusError::InvalidRecord {
            id: self.record_id.clone(),
            message: message.to_string(),
        };
        if self.record_id.is_empty() {
            return Err(bad("empty record_id"));
        }
        if self.gen1.is_some() && self.caption1_clean.is_none() {
            return Err(bad("gen1 present without caption1_clean"));
        }
        if self.gen2.is_some() && self.caption2_clean.is_none() {
            return Err(bad("gen2 present without caption2_clean"));
        }
        if self.status.reached(&Status::Generated) && (self.gen1.is_none() || self.gen2.is_none()) {
            return Err(bad("status generated or later requires gen1 and gen2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_serializes_flat_and_tagged() {
        assert_eq!(serde_json::to_string(&Status::Generated).unwrap(), "\"generated\"");
        let r = Status::Rejected {
            reason: "policy: nope".into(),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"rejected":{"reason":"policy: nope"}}"#);
        assert_eq!(serde_json::from_str::<Status>(&s).unwrap(), r);
    }

    #[test]
    fn transitions_are_monotone() {
        let mut r = Record::new("a", "x.png", "c1", "c2");
        r.advance(Status::Sanitized).unwrap();
        r.advance(Status::Sanitized).unwrap();
        assert!(r.advance(Status::Pending).is_err());
        r.advance(Status::Rejected { reason: "word".into() }).unwrap();
        assert!(r.advance(Status::Predicted).is_err());
    }

    #[test]
    fn gen_requires_clean_caption() {
        let mut r = Record::new("a", "x.png", "c1", "c2");
        r.gen1 = Some(GeneratedImageRef {
            path: "g.png".into(),
            backend: "mock".into(),
            seed: None,
            width: 512,
            height: 512,
            created_at: Utc::now(),
        });
        assert!(r.validate().is_err());
        r.caption1_clean = Some("c1".into());
        r.validate().unwrap();
    }

    #[test]
    fn label_rejects_out_of_range() {
        assert!(serde_json::from_str::<Label>("2").is_err());
        assert_eq!(serde_json::from_str::<Label>("1").unwrap(), Label::Ooc);
    }
}
