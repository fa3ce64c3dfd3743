//! Caption sanitization: replace named entities with class words, then screen
//! the result against blocked words and safety topics before it is used as a
//! generation prompt.

mod screen;
mod tagger;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use screen::{screen, RejectReason, ScreenOutcome};
pub use tagger::{
    second_pass_tag, GazetteerTagger, HeuristicTagger, NullTagger, Tagger, TaggerError, TaggerSpan,
};

#[derive(Debug, thiserror::Error)]
pub enum SanitizeError {
    #[error("span {start}..{end} out of bounds for caption of {len} chars")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("spans {0:?} and {1:?} overlap")]
    Overlap((usize, usize), (usize, usize)),
    #[error("no replacement for entity label {0:?}")]
    UnmappedLabel(String),
    #[error("invalid sanitizer config: {0}")]
    Config(String),
    #[error("record {record_id}: tagger failed: {source}")]
    Tagger {
        record_id: String,
        #[source]
        source: TaggerError,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanitizerConfig {
    /// Entity class -> replacement word.
    pub label_map: BTreeMap<String, String>,
    /// Classes whose text is left verbatim.
    pub keep_labels: BTreeSet<String>,
    pub blocked_words: BTreeSet<String>,
    pub blocked_topics: BTreeSet<String>,
    /// When true, spans with a label in neither map are left as-is instead of
    /// failing.
    pub drop_unmapped_labels: bool,
}

impl Default for SanitizerConfig {
    fn default() -> Self {
        let label_map = [
            ("PERSON", "Person"),
            ("GPE", "Location"),
            ("LOC", "Location"),
            ("ORG", "Organization"),
            ("NORP", "Group"),
            ("FAC", "Building"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let blocked_topics = [
            "covid",
            "covid-19",
            "coronavirus",
            "abortion",
            "pregnancy",
            "pregnant",
            "drug",
            "drugs",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        SanitizerConfig {
            label_map,
            keep_labels: ["DATE", "CARDINAL"].into_iter().map(String::from).collect(),
            blocked_words: BTreeSet::new(),
            blocked_topics,
            drop_unmapped_labels: false,
        }
    }
}

impl SanitizerConfig {
    pub fn validate(&self) -> Result<(), SanitizeError> {
        for (label, word) in &self.label_map {
            if word.trim().is_empty() || word.split_whitespace().count() != 1 {
                return Err(SanitizeError::Config(format!(
                    "replacement for {label} must be a single nonempty word, got {word:?}"
                )));
            }
            if self.blocked_words.contains(&word.to_lowercase()) {
                return Err(SanitizeError::Config(format!(
                    "replacement word {word:?} is itself blocked"
                )));
            }
        }
        for set in [&self.blocked_words, &self.blocked_topics] {
            if let Some(w) = set.iter().find(|w| w.to_lowercase() != **w) {
                return Err(SanitizeError::Config(format!("{w:?} is not lowercase")));
            }
        }
        Ok(())
    }

    /// Replacement words; taggers never report spans over these.
    pub fn replacement_words(&self) -> BTreeSet<&str> {
        self.label_map.values().map(String::as_str).collect()
    }

    /// Add every word from a one-word-per-line list to `blocked_words`.
    pub fn load_blocked_words(&mut self, path: &Path) -> Result<usize, SanitizeError> {
        let words = read_word_list(path)?;
        let n = words.len();
        self.blocked_words.extend(words.into_iter().map(|w| w.to_lowercase()));
        Ok(n)
    }
}

/// Nonempty trimmed lines of a UTF-8 list file.
pub fn read_word_list(path: &Path) -> Result<Vec<String>, SanitizeError> {
    let text = std::fs::read_to_string(path).map_err(|source| SanitizeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Resolve overlapping spans: longer spans win, ties go to the earlier start.
pub fn resolve_overlaps(mut spans: Vec<TaggerSpan>) -> Vec<TaggerSpan> {
    spans.sort_by(|a, b| (b.end - b.start).cmp(&(a.end - a.start)).then(a.start.cmp(&b.start)));
    let mut kept: Vec<TaggerSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        if kept.iter().all(|k| s.end <= k.start || s.start >= k.end) {
            kept.push(s);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Replace each span with its class word and collapse whitespace.
///
/// Offsets are in chars. Text outside the spans is copied unchanged apart from
/// whitespace runs becoming single spaces.
pub fn substitute_entities(
    caption: &str,
    spans: &[TaggerSpan],
    cfg: &SanitizerConfig,
) -> Result<String, SanitizeError> {
    let chars: Vec<char> = caption.chars().collect();
    let mut sorted: Vec<&TaggerSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.start >= s.end || s.end > chars.len() {
            return Err(SanitizeError::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len: chars.len(),
            });
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(SanitizeError::Overlap((w[0].start, w[0].end), (w[1].start, w[1].end)));
        }
    }

    let mut out = String::with_capacity(caption.len());
    let mut cursor = 0;
    for s in sorted {
        out.extend(&chars[cursor..s.start]);
        let original: String = chars[s.start..s.end].iter().collect();
        match cfg.label_map.get(&s.label) {
            Some(word) => {
                // keep the word from fusing with neighbouring text
                if out.chars().last().is_some_and(char::is_alphanumeric) {
                    out.push(' ');
                }
                out.push_str(word);
                if chars.get(s.end).is_some_and(|c| c.is_alphanumeric()) {
                    out.push(' ');
                }
            }
            None if cfg.keep_labels.contains(&s.label) || cfg.drop_unmapped_labels => {
                out.push_str(&original);
            }
            None => return Err(SanitizeError::UnmappedLabel(s.label.clone())),
        }
        cursor = s.end;
    }
    out.extend(&chars[cursor..]);
    Ok(collapse_whitespace(&out))
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First-pass substitution, second-pass tagging and substitution, then
/// screening: the full transformation of one raw caption.
pub fn sanitize_caption(
    record_id: &str,
    raw: &str,
    first: &dyn Tagger,
    second: &dyn Tagger,
    cfg: &SanitizerConfig,
) -> Result<ScreenOutcome, SanitizeError> {
    let tag_err = |source| SanitizeError::Tagger {
        record_id: record_id.to_string(),
        source,
    };
    let spans = resolve_overlaps(first.tag(raw).map_err(tag_err)?);
    let pass1 = substitute_entities(raw, &spans, cfg)?;
    let spans = resolve_overlaps(second_pass_tag(&pass1, second, cfg).map_err(tag_err)?);
    let pass2 = substitute_entities(&pass1, &spans, cfg)?;
    Ok(screen(&pass2, cfg))
}
