//! Heuristic detection of stage directions in generated dialogue.
//!
//! An utterance carries a stage direction when a segment enclosed in
//! parentheses, square brackets or asterisks contains an action word from the
//! lexicon (`(sighs)`, `*laughs*`, `[walks away]`), or when it is narrated in
//! the third person: it opens with a role name or a third-person subject and
//! an action word follows within the next three words.

use std::collections::HashSet;
use std::path::Path;

const DEFAULT_LEXICON: &str = include_str!("../../data/action_lexicon.txt");

const THIRD_PERSON_SUBJECTS: &[&str] = &["he", "she", "they", "both", "everyone", "the"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDirectionDetector {
    lexicon: HashSet<String>,
}

impl Default for StageDirectionDetector {
    fn default() -> Self {
        Self::from_lexicon_text(DEFAULT_LEXICON)
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl StageDirectionDetector {
    pub fn new<I, S>(lexicon: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            lexicon: lexicon
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Parses a lexicon file: one word per line, `#` comments.
    pub fn from_lexicon_text(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_lexicon_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_lexicon_text(&std::fs::read_to_string(path)?))
    }

    pub fn lexicon_size(&self) -> usize {
        self.lexicon.len()
    }

    fn has_action_word(&self, text: &str) -> bool {
        words(text).iter().any(|w| self.lexicon.contains(w))
    }

    /// Enclosed segment containing an action word.
    pub fn has_enclosed_action(&self, text: &str) -> bool {
        enclosed_segments(text)
            .iter()
            .any(|segment| self.has_action_word(segment))
    }

    /// Third-person narration: a subject word (role-name word or pronoun)
    /// followed by an action word within three words.
    pub fn is_narration(&self, text: &str, role_names: &[&str]) -> bool {
        let tokens = words(text);
        let Some(first) = tokens.first() else {
            return false;
        };
        let role_words: HashSet<String> = role_names
            .iter()
            .flat_map(|r| words(r))
            .filter(|w| w.chars().count() > 1)
            .collect();
        let subject = THIRD_PERSON_SUBJECTS.contains(&first.as_str()) || role_words.contains(first);
        subject && tokens.iter().skip(1).take(3).any(|w| self.lexicon.contains(w))
    }

    /// Text of a line carrying no speaker marker: true when the whole line
    /// is enclosed, or is narration or an enclosed action.
    pub fn is_direction_line(&self, line: &str, role_names: &[&str]) -> bool {
        let trimmed = line.trim();
        is_fully_enclosed(trimmed)
            || self.has_enclosed_action(trimmed)
            || self.is_narration(trimmed, role_names)
    }

    /// True when the segment text (e.g. the inside of a bracket marker) reads
    /// as an action rather than a name.
    pub fn is_action_phrase(&self, text: &str) -> bool {
        self.has_action_word(text)
    }

    /// Applies the utterance heuristics to every turn.
    pub fn detect(&self, turns: &[super::Turn]) -> bool {
        if self.lexicon.is_empty() {
            return false;
        }
        let roles: Vec<&str> = turns.iter().map(|t| t.role_name.as_str()).collect();
        turns
            .iter()
            .any(|t| self.has_enclosed_action(&t.utterance) || self.is_narration(&t.utterance, &roles))
    }
}

/// Contents of `( … )`, `[ … ]` and `* … *` segments, outermost level only.
fn enclosed_segments(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let close = match bytes[i] {
            b'(' => b')',
            b'[' => b']',
            b'*' => b'*',
            _ => {
                i += 1;
                continue;
            }
        };
        match text[i + 1..].bytes().position(|b| b == close) {
            Some(rel) => {
                let end = i + 1 + rel;
                out.push(&text[i + 1..end]);
                i = end + 1;
            }
            None => i += 1,
        }
    }
    out
}

fn is_fully_enclosed(text: &str) -> bool {
    let pairs = [('(', ')'), ('[', ']'), ('*', '*')];
    text.len() >= 2
        && pairs.iter().any(|(open, close)| {
            text.starts_with(*open) && text.ends_with(*close) && {
                let inner = &text[1..text.len() - 1];
                !inner.contains(*close) && !inner.trim().is_empty()
            }
        })
}

/// Turn-level check with the default lexicon.
pub fn detect_stage_directions(turns: &[super::Turn]) -> bool {
    StageDirectionDetector::default().detect(turns)
}
