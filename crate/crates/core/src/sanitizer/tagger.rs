use std::collections::BTreeMap;
use std::path::Path;

use super::{read_word_list, SanitizeError, SanitizerConfig};

/// Entity mention in char offsets `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggerSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{tagger}: {message}")]
pub struct TaggerError {
    pub tagger: String,
    pub message: String,
}

/// Named-entity tagger used for both substitution passes.
pub trait Tagger: Send + Sync {
    fn name(&self) -> &str;
    fn tag(&self, caption: &str) -> Result<Vec<TaggerSpan>, TaggerError>;
}

/// Tags nothing. For corpora whose captions were substituted upstream.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullTagger;

impl Tagger for NullTagger {
    fn name(&self) -> &str {
        "null"
    }

    fn tag(&self, _caption: &str) -> Result<Vec<TaggerSpan>, TaggerError> {
        Ok(Vec::new())
    }
}

/// A whitespace token with surrounding punctuation trimmed off. Offsets are
/// chars into the caption and cover only the trimmed core.
#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub start: usize,
    pub end: usize,
    pub text: String,
    /// Trailing punctuation ended a sentence (". ! ?").
    pub ends_sentence: bool,
}

pub(crate) fn tokens(caption: &str) -> Vec<Token> {
    let chars: Vec<char> = caption.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let raw_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let raw_end = i;
        let mut s = raw_start;
        let mut e = raw_end;
        while s < e && !chars[s].is_alphanumeric() {
            s += 1;
        }
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
        }
        let ends_sentence = chars[e..raw_end].iter().any(|c| matches!(c, '.' | '!' | '?'));
        if s < e {
            out.push(Token {
                start: s,
                end: e,
                text: chars[s..e].iter().collect(),
                ends_sentence,
            });
        }
    }
    out
}

/// Looks up names from a list. Multi-word names match whole tokens; the
/// longest name wins at each position.
#[derive(Debug, Clone, Default)]
pub struct GazetteerTagger {
    // first token -> (name tokens, label), longest first
    entries: BTreeMap<String, Vec<(Vec<String>, String)>>,
}

impl GazetteerTagger {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut g = GazetteerTagger::default();
        for n in names {
            g.insert(n.as_ref(), "PERSON");
        }
        g
    }

    /// Load a list file: one name per line, optionally `name<TAB>LABEL`.
    pub fn from_file(path: &Path) -> Result<Self, SanitizeError> {
        let mut g = GazetteerTagger::default();
        for line in read_word_list(path)? {
            match line.split_once('\t') {
                Some((name, label)) => g.insert(name.trim(), label.trim()),
                None => g.insert(&line, "PERSON"),
            }
        }
        Ok(g)
    }

    pub fn insert(&mut self, name: &str, label: &str) {
        let toks: Vec<String> = tokens(name).into_iter().map(|t| t.text).collect();
        let Some(first) = toks.first().cloned() else {
            return;
        };
        let bucket = self.entries.entry(first).or_default();
        bucket.push((toks, label.to_string()));
        bucket.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Tagger for GazetteerTagger {
    fn name(&self) -> &str {
        "gazetteer"
    }

    fn tag(&self, caption: &str) -> Result<Vec<TaggerSpan>, TaggerError> {
        let toks = tokens(caption);
        let mut spans = Vec::new();
        let mut i = 0;
        'outer: while i < toks.len() {
            if let Some(candidates) = self.entries.get(&toks[i].text) {
                for (name, label) in candidates {
                    let n = name.len();
                    if i + n <= toks.len() && toks[i..i + n].iter().zip(name).all(|(t, w)| &t.text == w) {
                        spans.push(TaggerSpan {
                            start: toks[i].start,
                            end: toks[i + n - 1].end,
                            label: label.clone(),
                        });
                        i += n;
                        continue 'outer;
                    }
                }
            }
            i += 1;
        }
        Ok(spans)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "as", "at", "but", "by", "for", "from", "he", "her", "his", "i", "in", "it",
    "its", "my", "of", "on", "or", "our", "she", "that", "the", "their", "they", "this", "to", "we",
    "with", "you", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

/// Tags capitalized tokens that do not start a sentence as PERSON. Runs of
/// adjacent capitalized tokens form one span.
#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    stopwords: Vec<String>,
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        HeuristicTagger {
            stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl HeuristicTagger {
    pub fn with_stopwords<I: IntoIterator<Item = String>>(extra: I) -> Self {
        let mut t = HeuristicTagger::default();
        t.stopwords.extend(extra.into_iter().map(|w| w.to_lowercase()));
        t
    }

    fn candidate(&self, tok: &Token) -> bool {
        tok.text.chars().next().is_some_and(char::is_uppercase)
            && !self.stopwords.iter().any(|s| s.eq_ignore_ascii_case(&tok.text))
    }
}

impl Tagger for HeuristicTagger {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn tag(&self, caption: &str) -> Result<Vec<TaggerSpan>, TaggerError> {
        let toks = tokens(caption);
        let mut spans: Vec<TaggerSpan> = Vec::new();
        let mut prev_joinable = false;
        for (i, tok) in toks.iter().enumerate() {
            let sentence_start = i == 0 || toks[i - 1].ends_sentence;
            if !sentence_start && self.candidate(tok) {
                match spans.last_mut() {
                    Some(last) if prev_joinable => last.end = tok.end,
                    _ => spans.push(TaggerSpan {
                        start: tok.start,
                        end: tok.end,
                        label: "PERSON".into(),
                    }),
                }
                prev_joinable = !tok.ends_sentence;
            } else {
                prev_joinable = false;
            }
        }
        Ok(spans)
    }
}

/// Run `tagger` over already-substituted text, dropping any span that covers
/// only replacement words so class words are never re-tagged.
pub fn second_pass_tag(
    caption: &str,
    tagger: &dyn Tagger,
    cfg: &SanitizerConfig,
) -> Result<Vec<TaggerSpan>, TaggerError> {
    let whitelist = cfg.replacement_words();
    let chars: Vec<char> = caption.chars().collect();
    let spans = tagger.tag(caption)?;
    let mut out = Vec::with_capacity(spans.len());
    for span in spans {
        if span.start >= span.end || span.end > chars.len() {
            return Err(TaggerError {
                tagger: tagger.name().to_string(),
                message: format!("span {}..{} outside caption", span.start, span.end),
            });
        }
        let text: String = chars[span.start..span.end].iter().collect();
        let all_whitelisted = tokens(&text).iter().all(|t| whitelist.contains(t.text.as_str()));
        if !all_whitelisted {
            out.push(span);
        }
    }
    Ok(out)
}
