//! Multi-session chat orchestration with chronological summary memory.
//!
//! The response generator sees the relationship, one summary per closed
//! session (each tagged with the interval that preceded it), the interval
//! into the current session, and the current session's turns. A session
//! closes when the generator emits `[END]`; its summary then joins the
//! memory and the operator picks the interval to the next session.

mod input;
mod log;
mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chronology::{Relationship, TimeInterval};
use crate::episode_pipeline::{Speaker, Turn};
use crate::llm_backend::{BackendError, CompletionRequest, LlmBackend};
use crate::prompting::{self, normalize_inline};

pub use input::{
    contains_marker, interval_marker, parse_input, sanitize_text, GenerationInput, BOT_MARKER,
    FIRST_MEETING_MARKER, RELATIONSHIP_MARKER, USER_MARKER,
};
pub use log::{read_events, read_events_from, EventLog};
pub use state::{BotOutcome, ChatEpisodeState, ChatEvent, ChatSession, ChatStatus};

/// Literal session terminator; case-sensitive.
pub const END_TOKEN: &str = "[END]";
pub const TRUNCATION_MARKER: &str = " [truncated]";
pub const DEFAULT_MAX_SUMMARY_CHARS: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
}

/// Summary of one closed session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub session_index: usize,
    /// Interval from the previous session; absent for session 1.
    pub interval_before: Option<TimeInterval>,
    pub summary: String,
}

/// Closed-session summaries in chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SummaryMemory {
    entries: Vec<MemoryEntry>,
}

impl SummaryMemory {
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends, enforcing strictly increasing indices, no interval on
    /// session 1 and a non-empty summary.
    pub fn push(&mut self, entry: MemoryEntry) -> Result<(), ChatError> {
        if entry.summary.trim().is_empty() {
            return Err(ChatError::Format("empty summary".into()));
        }
        if let Some(last) = self.entries.last() {
            if entry.session_index <= last.session_index {
                return Err(ChatError::Format(format!(
                    "memory index {} after {}",
                    entry.session_index, last.session_index
                )));
            }
        }
        if (entry.session_index == 1) != entry.interval_before.is_none() {
            return Err(ChatError::Format("only session 1 lacks an interval".into()));
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Which summaries the generator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    #[default]
    All,
    LatestOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub memory_mode: MemoryMode,
    /// Character budget for the serialized input; oldest summaries are
    /// dropped first when it is exceeded.
    pub max_input_chars: Option<usize>,
    pub max_summary_chars: usize,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            memory_mode: MemoryMode::All,
            max_input_chars: None,
            max_summary_chars: DEFAULT_MAX_SUMMARY_CHARS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("cannot {op} while {status}")]
    Lifecycle { op: &'static str, status: ChatStatus },
    #[error("turn order: {0}")]
    TurnOrder(String),
    #[error("episode already has all of its sessions")]
    EpisodeComplete,
    #[error("input format: {0}")]
    Format(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("summarization failed: {0}")]
    Summarization(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("state changed during the request (version {expected} became {actual})")]
    Conflict { expected: u64, actual: u64 },
    #[error("event log line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error("event log io: {0}")]
    Io(#[from] std::io::Error),
}

impl ChatError {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            ChatError::Lifecycle { .. } => "lifecycle",
            ChatError::TurnOrder(_) => "turn_order",
            ChatError::EpisodeComplete => "episode_complete",
            ChatError::Format(_) => "format",
            ChatError::InvalidInput(_) => "invalid_input",
            ChatError::Summarization(_) => "summarization",
            ChatError::Backend(_) => "backend",
            ChatError::Conflict { .. } => "conflict",
            ChatError::CorruptLog { .. } => "corrupt_log",
            ChatError::Io(_) => "io",
        }
    }
}

/// Shortens `text` to at most `max_chars`, cutting after the last complete
/// sentence that fits and appending [`TRUNCATION_MARKER`].
pub fn truncate_summary(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let budget = max_chars.saturating_sub(TRUNCATION_MARKER.chars().count());
    let prefix: String = text.chars().take(budget).collect();
    let chars: Vec<char> = prefix.chars().collect();
    let sentence_end = (0..chars.len()).rev().find(|&i| {
        matches!(chars[i], '.' | '!' | '?') && text.chars().nth(i + 1).is_none_or(char::is_whitespace)
    });
    let cut = match sentence_end {
        Some(i) => chars[..=i].iter().collect::<String>(),
        None => match prefix.rfind(char::is_whitespace) {
            Some(pos) => prefix[..pos].to_string(),
            None => prefix.clone(),
        },
    };
    format!("{}{TRUNCATION_MARKER}", cut.trim_end())
}

/// Cleans a raw summary reply: flattens it to one line, strips markers and
/// applies the length policy.
pub fn clean_summary(raw: &str, max_chars: usize) -> Result<String, ChatError> {
    let text = sanitize_text(&normalize_inline(raw));
    if text.is_empty() {
        return Err(ChatError::Summarization(
            "backend returned an empty summary".into(),
        ));
    }
    Ok(truncate_summary(&text, max_chars))
}

/// Summarizes speaker-tagged turns with the two-sentence summary prompt.
pub fn summarize_turns(
    turns: &[Turn],
    backend: &dyn LlmBackend,
    max_chars: usize,
) -> Result<String, ChatError> {
    if turns.len() < 2 {
        return Err(ChatError::Summarization(format!(
            "a session needs at least 2 turns to summarize, got {}",
            turns.len()
        )));
    }
    let prompt =
        prompting::render_summary_prompt(turns).map_err(|e| ChatError::Summarization(e.to_string()))?;
    let reply = backend
        .complete(&CompletionRequest::generation(prompt.text))?
        .into_text()?;
    clean_summary(&reply, max_chars)
}

/// Chat turns as relationship-role turns: the user speaks as role A.
pub fn chat_turns_as_dialogue(turns: &[ChatTurn], relationship: Relationship) -> Vec<Turn> {
    let (a, b) = relationship.roles();
    turns
        .iter()
        .map(|t| match t.role {
            ChatRole::User => Turn {
                speaker: Speaker::A,
                role_name: a.clone(),
                utterance: t.text.clone(),
            },
            ChatRole::Bot => Turn {
                speaker: Speaker::B,
                role_name: b.clone(),
                utterance: t.text.clone(),
            },
        })
        .collect()
}

pub fn summarize_session(
    session: &ChatSession,
    relationship: Relationship,
    backend: &dyn LlmBackend,
    max_chars: usize,
) -> Result<String, ChatError> {
    summarize_turns(
        &chat_turns_as_dialogue(&session.turns, relationship),
        backend,
        max_chars,
    )
}
