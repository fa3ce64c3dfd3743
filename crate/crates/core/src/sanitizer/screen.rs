use std::fmt;

use super::tagger::tokens;
use super::SanitizerConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Word(String),
    Topic(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Word(w) => write!(f, "word={w}"),
            RejectReason::Topic(t) => write!(f, "topic={t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScreenOutcome {
    Accepted(String),
    Rejected(RejectReason),
}

/// Check a substituted caption against the blocked word list and safety
/// topics. Words match whole lowercased tokens (multi-word list entries match
/// token sequences); topics match anywhere as substrings.
pub fn screen(caption: &str, cfg: &SanitizerConfig) -> ScreenOutcome {
    let words: Vec<String> = tokens(caption).into_iter().map(|t| t.text.to_lowercase()).collect();
    let joined = format!(" {} ", words.join(" "));
    for w in &words {
        if cfg.blocked_words.contains(w) {
            return ScreenOutcome::Rejected(RejectReason::Word(w.clone()));
        }
    }
    for entry in cfg.blocked_words.iter().filter(|e| e.contains(' ')) {
        if joined.contains(&format!(" {entry} ")) {
            return ScreenOutcome::Rejected(RejectReason::Word(entry.clone()));
        }
    }
    let lower = caption.to_lowercase();
    for topic in &cfg.blocked_topics {
        if lower.contains(topic.as_str()) {
            return ScreenOutcome::Rejected(RejectReason::Topic(topic.clone()));
        }
    }
    ScreenOutcome::Accepted(caption.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(words: &[&str]) -> SanitizerConfig {
        let mut cfg = SanitizerConfig::default();
        cfg.blocked_words.extend(words.iter().map(|w| w.to_string()));
        cfg
    }

    #[test]
    fn blocked_token_rejects() {
        let cfg = cfg_with(&["damn"]);
        assert_eq!(
            screen("Person said Damn! loudly", &cfg),
            ScreenOutcome::Rejected(RejectReason::Word("damn".into()))
        );
    }

    #[test]
    fn topic_substring_rejects() {
        let cfg = SanitizerConfig::default();
        assert_eq!(
            screen("COVID-19 lockdown begins", &cfg),
            ScreenOutcome::Rejected(RejectReason::Topic("covid".into()))
        );
    }

    #[test]
    fn clean_caption_accepted_unchanged() {
        let cfg = cfg_with(&["damn"]);
        assert_eq!(
            screen("A bird sits on a branch", &cfg),
            ScreenOutcome::Accepted("A bird sits on a branch".into())
        );
    }

    #[test]
    fn phrase_entries_match_token_runs() {
        let cfg = cfg_with(&["two words"]);
        assert!(matches!(screen("just two words here", &cfg), ScreenOutcome::Rejected(_)));
        assert!(matches!(screen("two-words here", &cfg), ScreenOutcome::Accepted(_)));
    }

    #[test]
    fn word_matching_is_whole_token() {
        let cfg = cfg_with(&["ass"]);
        assert!(matches!(screen("a class assembly", &cfg), ScreenOutcome::Accepted(_)));
    }
}
