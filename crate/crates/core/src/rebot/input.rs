//! Serialized generator input: relationship, summary memory, the interval
//! into the current session, then the current session's turns.
//!
//! ```text
//! <relationship> LABEL ( <first meeting> S | <PHRASE> S )* ( <PHRASE> )? ( <user> U ( <bot> B )? )*
//! ```
//!
//! Elements are joined by single spaces. No text field may contain a marker,
//! so the output parses back unambiguously.

use serde::{Deserialize, Serialize};

use super::{ChatError, ChatRole, ChatTurn, MemoryEntry};
use crate::chronology::{Relationship, TimeInterval};

pub const RELATIONSHIP_MARKER: &str = "<relationship>";
pub const FIRST_MEETING_MARKER: &str = "<first meeting>";
pub const USER_MARKER: &str = "<user>";
pub const BOT_MARKER: &str = "<bot>";

pub fn interval_marker(interval: TimeInterval) -> String {
    format!("<{}>", interval.display_text())
}

fn all_markers() -> Vec<String> {
    let mut m = vec![
        RELATIONSHIP_MARKER.to_string(),
        FIRST_MEETING_MARKER.to_string(),
        USER_MARKER.to_string(),
        BOT_MARKER.to_string(),
    ];
    m.extend(TimeInterval::ALL.iter().map(|t| interval_marker(*t)));
    m
}

/// True when `text` contains a marker literal.
pub fn contains_marker(text: &str) -> bool {
    all_markers().iter().any(|m| text.contains(m.as_str()))
}

/// Removes marker literals and flattens whitespace.
pub fn sanitize_text(text: &str) -> String {
    let mut out = text.to_string();
    loop {
        let before = out.len();
        for m in all_markers() {
            out = out.replace(&m, " ");
        }
        if out.len() == before {
            break;
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub relationship: Relationship,
    /// Interval into the current session; absent in session 1.
    pub interval: Option<TimeInterval>,
    pub memory: Vec<MemoryEntry>,
    pub history: Vec<ChatTurn>,
}

fn check_text(what: &str, text: &str) -> Result<(), ChatError> {
    if text.trim().is_empty() {
        return Err(ChatError::Format(format!("{what} is empty")));
    }
    if text != text.trim() || text.contains(['\n', '\r']) {
        return Err(ChatError::Format(format!("{what} must be a single trimmed line")));
    }
    if contains_marker(text) {
        return Err(ChatError::Format(format!("{what} contains a reserved marker")));
    }
    Ok(())
}

impl GenerationInput {
    pub fn validate(&self) -> Result<(), ChatError> {
        for (i, entry) in self.memory.iter().enumerate() {
            check_text("summary", &entry.summary)?;
            if i > 0 && entry.session_index <= self.memory[i - 1].session_index {
                return Err(ChatError::Format("memory entries out of order".into()));
            }
            if (entry.session_index == 1) != entry.interval_before.is_none() {
                return Err(ChatError::Format(format!(
                    "memory entry {} interval does not match its position",
                    entry.session_index
                )));
            }
        }
        for (i, turn) in self.history.iter().enumerate() {
            check_text("utterance", &turn.text)?;
            let expected = if i % 2 == 0 { ChatRole::User } else { ChatRole::Bot };
            if turn.role != expected {
                return Err(ChatError::Format(format!(
                    "history turn {i} is {:?}, expected {:?}",
                    turn.role, expected
                )));
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> Result<String, ChatError> {
        self.validate()?;
        let mut parts: Vec<String> = vec![RELATIONSHIP_MARKER.into(), self.relationship.label().into()];
        for entry in &self.memory {
            parts.push(match entry.interval_before {
                None => FIRST_MEETING_MARKER.into(),
                Some(t) => interval_marker(t),
            });
            parts.push(entry.summary.clone());
        }
        if let Some(t) = self.interval {
            parts.push(interval_marker(t));
        }
        for turn in &self.history {
            parts.push(match turn.role {
                ChatRole::User => USER_MARKER.into(),
                ChatRole::Bot => BOT_MARKER.into(),
            });
            parts.push(turn.text.clone());
        }
        Ok(parts.join(" "))
    }

    /// Serializes, dropping the oldest memory entries until the text fits in
    /// `max_chars`. Returns the text and how many entries were dropped.
    pub fn serialize_within(&self, max_chars: Option<usize>) -> Result<(String, usize), ChatError> {
        let mut trimmed = self.clone();
        let mut dropped = 0;
        loop {
            let text = trimmed.serialize()?;
            let fits = max_chars.is_none_or(|m| text.chars().count() <= m);
            if fits || trimmed.memory.is_empty() {
                return Ok((text, dropped));
            }
            trimmed.memory.remove(0);
            dropped += 1;
        }
    }
}

enum Token<'a> {
    Marker(&'a str),
    Text(&'a str),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let markers = all_markers();
    let mut out = Vec::new();
    let mut rest = text;
    let mut pending = 0;
    while pending < rest.len() {
        let here = &rest[pending..];
        let found = here
            .starts_with('<')
            .then(|| markers.iter().find(|m| here.starts_with(m.as_str())))
            .flatten();
        match found {
            Some(m) => {
                let before = rest[..pending].trim();
                if !before.is_empty() {
                    out.push(Token::Text(before));
                }
                let (marker, after) = rest[pending..].split_at(m.len());
                out.push(Token::Marker(marker));
                rest = after;
                pending = 0;
            }
            None => pending += here.chars().next().map_or(1, char::len_utf8),
        }
    }
    let tail = rest.trim();
    if !tail.is_empty() {
        out.push(Token::Text(tail));
    }
    out
}

fn marker_interval(marker: &str) -> Option<TimeInterval> {
    TimeInterval::ALL
        .into_iter()
        .find(|t| interval_marker(*t) == marker)
}

/// Parses serialized input back into its fields. Inverse of
/// [`GenerationInput::serialize`]; intended for debugging and tests.
pub fn parse_input(text: &str) -> Result<GenerationInput, ChatError> {
    let bad = |d: &str| ChatError::Format(d.to_string());
    let tokens = tokenize(text);
    let mut it = tokens.into_iter().peekable();
    match (it.next(), it.next()) {
        (Some(Token::Marker(RELATIONSHIP_MARKER)), Some(Token::Text(label))) => {
            let relationship =
                Relationship::from_label(label).map_err(|e| ChatError::Format(e.to_string()))?;
            let mut memory: Vec<MemoryEntry> = Vec::new();
            let mut interval = None;
            let mut history = Vec::new();
            while let Some(tok) = it.next() {
                let Token::Marker(m) = tok else {
                    return Err(bad("text without a preceding marker"));
                };
                let is_turn = m == USER_MARKER || m == BOT_MARKER;
                if !is_turn && (interval.is_some() || !history.is_empty()) {
                    return Err(bad("memory marker after the current interval or turns"));
                }
                let next_text = match it.peek() {
                    Some(Token::Text(t)) => {
                        let t = t.to_string();
                        it.next();
                        Some(t)
                    }
                    _ => None,
                };
                if is_turn {
                    let text = next_text.ok_or_else(|| bad("turn marker without utterance"))?;
                    let role = if m == USER_MARKER {
                        ChatRole::User
                    } else {
                        ChatRole::Bot
                    };
                    history.push(ChatTurn { role, text });
                } else if m == FIRST_MEETING_MARKER {
                    let summary = next_text.ok_or_else(|| bad("first meeting marker without summary"))?;
                    memory.push(MemoryEntry {
                        session_index: 1,
                        interval_before: None,
                        summary,
                    });
                } else {
                    let t = marker_interval(m).ok_or_else(|| bad("unknown marker"))?;
                    match next_text {
                        Some(summary) => {
                            // Session numbers are not serialized; later entries
                            // are numbered consecutively after the previous one.
                            let index = memory.last().map_or(2, |e| e.session_index + 1);
                            memory.push(MemoryEntry {
                                session_index: index,
                                interval_before: Some(t),
                                summary,
                            });
                        }
                        None => interval = Some(t),
                    }
                }
            }
            let parsed = GenerationInput {
                relationship,
                interval,
                memory,
                history,
            };
            parsed.validate()?;
            Ok(parsed)
        }
        _ => Err(bad("input must start with the relationship marker and label")),
    }
}
