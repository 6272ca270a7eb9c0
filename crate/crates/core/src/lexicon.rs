//! Phrase lists used by the text extractors.
//!
//! File format: UTF-8 text, one phrase per line. Blank lines and lines whose
//! first non-space character is `#` are ignored. Phrases are matched
//! case-insensitively.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    phrases: Vec<String>,
}

impl Lexicon {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases = phrases.into_iter().map(|p| p.as_ref().trim().to_lowercase()).filter(|p| !p.is_empty()).collect();
        Lexicon { phrases }
    }

    pub fn parse(text: &str) -> Self {
        Lexicon::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Lexicon::parse(&std::fs::read_to_string(path)?))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn contains_phrase(&self, phrase: &str) -> bool {
        let p = phrase.to_lowercase();
        self.phrases.contains(&p)
    }

    /// True when any phrase occurs in `text` (case-insensitive substring).
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.phrases.iter().any(|p| lower.contains(p.as_str()))
    }

    /// Byte offset just past the last occurrence of any phrase in the
    /// lowercased `lower` text, requiring a word boundary before the match.
    pub fn last_match_end(&self, lower: &str) -> Option<usize> {
        self.phrases
            .iter()
            .flat_map(|p| {
                lower
                    .match_indices(p.as_str())
                    .filter(|(i, _)| starts_at_word_boundary(lower, *i))
                    .map(|(i, m)| i + m.len())
                    .collect::<Vec<_>>()
            })
            .max()
    }
}

pub(crate) fn starts_at_word_boundary(text: &str, idx: usize) -> bool {
    text[..idx].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
}

pub(crate) fn ends_at_word_boundary(text: &str, idx: usize) -> bool {
    text[idx..].chars().next().is_none_or(|c| !c.is_alphanumeric())
}

/// True when `phrase` occurs in `text` delimited by non-alphanumeric characters
/// on both sides. Both arguments are expected to be lowercased already.
pub(crate) fn contains_token_phrase(text: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    text.match_indices(phrase)
        .any(|(i, m)| starts_at_word_boundary(text, i) && ends_at_word_boundary(text, i + m.len()))
}
