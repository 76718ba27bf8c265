//! Chat lifecycle as a reducer over [`ChatEvent`]s.
//!
//! Every operation validates against the current state, produces events and
//! applies them to a copy that replaces the state only on success, so a
//! failed operation never mutates anything. Replaying the events of a log
//! rebuilds the same state.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::input::{contains_marker, sanitize_text, GenerationInput};
use super::{
    summarize_session, ChatConfig, ChatError, ChatRole, ChatTurn, MemoryEntry, MemoryMode, SummaryMemory,
    END_TOKEN,
};
use crate::chronology::{Relationship, TimeInterval, SESSIONS_PER_EPISODE};
use crate::llm_backend::{BackendError, CompletionRequest, LlmBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatStatus {
    Open,
    BetweenSessions,
    Ended,
}

impl fmt::Display for ChatStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChatStatus::Open => "open",
            ChatStatus::BetweenSessions => "between_sessions",
            ChatStatus::Ended => "ended",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub index: usize,
    pub interval: Option<TimeInterval>,
    pub turns: Vec<ChatTurn>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChatEvent {
    Created {
        episode_id: String,
        relationship: Relationship,
    },
    UserTurn {
        text: String,
    },
    BotTurn {
        text: String,
    },
    SessionClosed {
        summary: String,
    },
    Advanced {
        interval: TimeInterval,
    },
    Ended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatEpisodeState {
    episode_id: String,
    relationship: Relationship,
    completed: Vec<ChatSession>,
    current: Option<ChatSession>,
    status: ChatStatus,
    memory: SummaryMemory,
    /// Number of events applied, creation included.
    version: u64,
}

/// Result of one generator call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotOutcome {
    /// Absent when the reply was only the terminator.
    pub utterance: Option<String>,
    pub session_ended: bool,
    pub summary: Option<String>,
    pub events: Vec<ChatEvent>,
    /// Exactly what the generator was given.
    pub serialized_input: String,
}

impl ChatEpisodeState {
    pub fn create(episode_id: impl Into<String>, relationship: Relationship) -> (Self, ChatEvent) {
        let event = ChatEvent::Created {
            episode_id: episode_id.into(),
            relationship,
        };
        let state = Self::from_events(std::slice::from_ref(&event)).expect("creation event is always valid");
        (state, event)
    }

    /// Rebuilds a state from its event log.
    pub fn from_events(events: &[ChatEvent]) -> Result<Self, ChatError> {
        let Some(ChatEvent::Created {
            episode_id,
            relationship,
        }) = events.first()
        else {
            return Err(ChatError::CorruptLog {
                line: 1,
                detail: "log must start with a created event".into(),
            });
        };
        let mut state = Self {
            episode_id: episode_id.clone(),
            relationship: *relationship,
            completed: Vec::new(),
            current: Some(ChatSession {
                index: 1,
                interval: None,
                turns: Vec::new(),
                summary: None,
            }),
            status: ChatStatus::Open,
            memory: SummaryMemory::default(),
            version: 1,
        };
        for (i, event) in events.iter().enumerate().skip(1) {
            state.apply(event).map_err(|e| ChatError::CorruptLog {
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(state)
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    pub fn relationship(&self) -> Relationship {
        self.relationship
    }

    pub fn status(&self) -> ChatStatus {
        self.status
    }

    pub fn completed_sessions(&self) -> &[ChatSession] {
        &self.completed
    }

    pub fn current_session(&self) -> Option<&ChatSession> {
        self.current.as_ref()
    }

    pub fn memory(&self) -> &SummaryMemory {
        &self.memory
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Intervals between sessions so far, including the one into the open
    /// session.
    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.completed
            .iter()
            .chain(self.current.as_ref())
            .filter_map(|s| s.interval)
            .collect()
    }

    fn open_session(&self, op: &'static str) -> Result<&ChatSession, ChatError> {
        match (&self.current, self.status) {
            (Some(s), ChatStatus::Open) => Ok(s),
            _ => Err(ChatError::Lifecycle {
                op,
                status: self.status,
            }),
        }
    }

    /// Applies one event after checking it is legal here.
    pub fn apply(&mut self, event: &ChatEvent) -> Result<(), ChatError> {
        match event {
            ChatEvent::Created { .. } => {
                return Err(ChatError::Format("episode already created".into()));
            }
            ChatEvent::UserTurn { text } | ChatEvent::BotTurn { text } => {
                let role = if matches!(event, ChatEvent::UserTurn { .. }) {
                    ChatRole::User
                } else {
                    ChatRole::Bot
                };
                let session = self.open_session(if role == ChatRole::User {
                    "post a user turn"
                } else {
                    "add a bot turn"
                })?;
                let last = session.turns.last().map(|t| t.role);
                let in_turn = match role {
                    ChatRole::User => last != Some(ChatRole::User),
                    ChatRole::Bot => last == Some(ChatRole::User),
                };
                if !in_turn {
                    return Err(ChatError::TurnOrder(match role {
                        ChatRole::User => "waiting for the bot's reply".into(),
                        ChatRole::Bot => "the bot replies only after a user turn".into(),
                    }));
                }
                if text.trim().is_empty()
                    || text != text.trim()
                    || text.contains('\n')
                    || contains_marker(text)
                {
                    return Err(ChatError::InvalidInput(
                        "turn text must be one clean, non-empty line".into(),
                    ));
                }
                self.current.as_mut().expect("open session").turns.push(ChatTurn {
                    role,
                    text: text.clone(),
                });
            }
            ChatEvent::SessionClosed { summary } => {
                let session = self.open_session("close the session")?;
                if session.turns.len() < 2 {
                    return Err(ChatError::Summarization(format!(
                        "session {} has {} turn(s), need at least 2",
                        session.index,
                        session.turns.len()
                    )));
                }
                let entry = MemoryEntry {
                    session_index: session.index,
                    interval_before: session.interval,
                    summary: summary.clone(),
                };
                let mut memory = self.memory.clone();
                memory.push(entry)?;
                let mut closed = self.current.take().expect("open session");
                closed.summary = Some(summary.clone());
                self.completed.push(closed);
                self.memory = memory;
                self.status = ChatStatus::BetweenSessions;
            }
            ChatEvent::Advanced { interval } => {
                if self.status != ChatStatus::BetweenSessions {
                    return Err(ChatError::Lifecycle {
                        op: "advance time",
                        status: self.status,
                    });
                }
                if self.completed.len() >= SESSIONS_PER_EPISODE {
                    return Err(ChatError::EpisodeComplete);
                }
                self.current = Some(ChatSession {
                    index: self.completed.len() + 1,
                    interval: Some(*interval),
                    turns: Vec::new(),
                    summary: None,
                });
                self.status = ChatStatus::Open;
            }
            ChatEvent::Ended => {
                if self.status != ChatStatus::BetweenSessions || self.completed.len() < SESSIONS_PER_EPISODE {
                    return Err(ChatError::Lifecycle {
                        op: "end the episode",
                        status: self.status,
                    });
                }
                self.status = ChatStatus::Ended;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Applies all events or none.
    pub fn apply_all(&mut self, events: &[ChatEvent]) -> Result<(), ChatError> {
        let mut next = self.clone();
        for e in events {
            next.apply(e)?;
        }
        *self = next;
        Ok(())
    }

    /// Applies events computed against `expected_version`, refusing if the
    /// state moved on in the meantime.
    pub fn commit(&mut self, expected_version: u64, events: &[ChatEvent]) -> Result<(), ChatError> {
        if self.version != expected_version {
            return Err(ChatError::Conflict {
                expected: expected_version,
                actual: self.version,
            });
        }
        self.apply_all(events)
    }

    pub fn post_user_turn(&mut self, text: &str) -> Result<Vec<ChatEvent>, ChatError> {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(ChatError::InvalidInput("empty message".into()));
        }
        if contains_marker(&text) {
            return Err(ChatError::InvalidInput(
                "message contains a reserved marker".into(),
            ));
        }
        let events = vec![ChatEvent::UserTurn { text }];
        self.apply_all(&events)?;
        Ok(events)
    }

    /// Generator input for the next bot turn.
    pub fn generation_input(&self) -> Result<GenerationInput, ChatError> {
        let session = self.open_session("generate a bot turn")?;
        if session.turns.last().map(|t| t.role) != Some(ChatRole::User) {
            return Err(ChatError::TurnOrder(
                "the bot replies only after a user turn".into(),
            ));
        }
        Ok(self.input_for(session))
    }

    fn input_for(&self, session: &ChatSession) -> GenerationInput {
        GenerationInput {
            relationship: self.relationship,
            interval: session.interval,
            memory: self.memory.entries().to_vec(),
            history: session.turns.clone(),
        }
    }

    fn memory_view(&self, input: GenerationInput, mode: MemoryMode) -> GenerationInput {
        match mode {
            MemoryMode::All => input,
            MemoryMode::LatestOnly => {
                let memory = input.memory.last().cloned().into_iter().collect();
                GenerationInput { memory, ..input }
            }
        }
    }

    /// The serialized text the generator would receive now.
    pub fn serialized_input(&self, cfg: &ChatConfig) -> Result<String, ChatError> {
        let input = self.memory_view(self.generation_input()?, cfg.memory_mode);
        Ok(input.serialize_within(cfg.max_input_chars)?.0)
    }

    /// Asks the generator for the next turn. A reply containing `[END]`
    /// closes the session: the text before it becomes the final bot turn
    /// and the session is summarized before anything is applied.
    pub fn generate_bot_turn(
        &mut self,
        backend: &dyn LlmBackend,
        cfg: &ChatConfig,
    ) -> Result<BotOutcome, ChatError> {
        let serialized_input = self.serialized_input(cfg)?;
        let reply = backend
            .complete(&CompletionRequest::generation(serialized_input.clone()))?
            .into_text()?;
        let (before, ended) = match reply.find(END_TOKEN) {
            Some(pos) => (&reply[..pos], true),
            None => (reply.as_str(), false),
        };
        let utterance = Some(sanitize_text(before)).filter(|t| !t.is_empty());
        if utterance.is_none() && !ended {
            return Err(ChatError::Backend(BackendError::Protocol {
                field: "text".into(),
                detail: "empty reply".into(),
            }));
        }
        let mut events: Vec<ChatEvent> = utterance
            .iter()
            .map(|text| ChatEvent::BotTurn { text: text.clone() })
            .collect();
        let mut summary = None;
        if ended {
            let mut preview = self.clone();
            preview.apply_all(&events)?;
            let session = preview.current.as_ref().expect("open session");
            let text = summarize_session(session, self.relationship, backend, cfg.max_summary_chars)?;
            events.push(ChatEvent::SessionClosed {
                summary: text.clone(),
            });
            summary = Some(text);
        }
        self.apply_all(&events)?;
        Ok(BotOutcome {
            utterance,
            session_ended: ended,
            summary,
            events,
            serialized_input,
        })
    }

    /// Closes the open session without waiting for the terminator.
    pub fn close_session(
        &mut self,
        backend: &dyn LlmBackend,
        cfg: &ChatConfig,
    ) -> Result<Vec<ChatEvent>, ChatError> {
        let session = self.open_session("close the session")?;
        let summary = summarize_session(session, self.relationship, backend, cfg.max_summary_chars)?;
        let events = vec![ChatEvent::SessionClosed { summary }];
        self.apply_all(&events)?;
        Ok(events)
    }

    pub fn advance_time(&mut self, interval: TimeInterval) -> Result<Vec<ChatEvent>, ChatError> {
        let events = vec![ChatEvent::Advanced { interval }];
        self.apply_all(&events)?;
        Ok(events)
    }

    /// Ends the episode; legal only once all five sessions are closed.
    pub fn end_episode(&mut self) -> Result<Vec<ChatEvent>, ChatError> {
        if self.status == ChatStatus::BetweenSessions && self.completed.len() < SESSIONS_PER_EPISODE {
            return Err(ChatError::Lifecycle {
                op: "end the episode before its last session",
                status: self.status,
            });
        }
        let events = vec![ChatEvent::Ended];
        self.apply_all(&events)?;
        Ok(events)
    }

    /// Structural invariants; used by tests and after replay.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.memory.len() != self.completed.len() {
            return Err(format!(
                "{} memory entries for {} closed sessions",
                self.memory.len(),
                self.completed.len()
            ));
        }
        for (i, (s, m)) in self.completed.iter().zip(self.memory.entries()).enumerate() {
            if s.index != i + 1 || m.session_index != s.index {
                return Err(format!("session {i} index mismatch"));
            }
            if s.summary.as_deref() != Some(m.summary.as_str()) {
                return Err(format!("session {} summary does not match memory", s.index));
            }
            if m.interval_before != s.interval {
                return Err(format!("session {} interval does not match memory", s.index));
            }
        }
        let all = self.completed.iter().chain(self.current.as_ref());
        for s in all {
            if (s.index == 1) != s.interval.is_none() {
                return Err(format!("session {} interval presence", s.index));
            }
            for (i, t) in s.turns.iter().enumerate() {
                let expected = if i % 2 == 0 { ChatRole::User } else { ChatRole::Bot };
                if t.role != expected {
                    return Err(format!("session {} turn {i} out of order", s.index));
                }
            }
        }
        let n = self.completed.len();
        match self.status {
            ChatStatus::Open => {
                let Some(cur) = &self.current else {
                    return Err("open without a current session".into());
                };
                if cur.index != n + 1 || n >= SESSIONS_PER_EPISODE {
                    return Err(format!("open session {} after {n} closed", cur.index));
                }
            }
            ChatStatus::BetweenSessions if self.current.is_some() || n == 0 => {
                return Err("between sessions with an open session or none closed".into());
            }
            ChatStatus::Ended if self.current.is_some() || n != SESSIONS_PER_EPISODE => {
                return Err("ended early".into());
            }
            _ => {}
        }
        let open_later = self.current.as_ref().is_some_and(|s| s.index >= 2);
        if self.intervals().len() != n.saturating_sub(1) + usize::from(open_later) {
            return Err("interval bookkeeping".into());
        }
        Ok(())
    }
}
