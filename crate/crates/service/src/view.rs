use forge_core::rebot::{ChatEpisodeState, ChatRole, ChatStatus};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiTurn {
    pub role: ChatRole,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMemoryEntry {
    pub index: usize,
    /// Canonical phrase; absent for session 1.
    pub interval: Option<String>,
    pub summary: String,
}

/// Read-only projection of one chat episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSessionView {
    pub episode_id: String,
    pub relationship: String,
    pub roles: [String; 2],
    pub status: ChatStatus,
    /// Open session index, or the last closed one between sessions.
    pub session_index: usize,
    pub current_interval: Option<String>,
    pub current_turns: Vec<ApiTurn>,
    pub memory: Vec<ApiMemoryEntry>,
    pub sessions_completed: usize,
    /// Whether a user message is accepted right now.
    pub awaiting_user: bool,
}

impl ApiSessionView {
    pub fn from_state(state: &ChatEpisodeState) -> Self {
        let (a, b) = state.relationship().roles();
        let current = state.current_session();
        Self {
            episode_id: state.episode_id().to_string(),
            relationship: state.relationship().label().to_string(),
            roles: [a, b],
            status: state.status(),
            session_index: current.map_or(state.completed_sessions().len(), |s| s.index),
            current_interval: current
                .and_then(|s| s.interval)
                .map(|t| t.display_text().to_string()),
            current_turns: current
                .map(|s| {
                    s.turns
                        .iter()
                        .map(|t| ApiTurn {
                            role: t.role,
                            text: t.text.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
            memory: state
                .memory()
                .entries()
                .iter()
                .map(|m| ApiMemoryEntry {
                    index: m.session_index,
                    interval: m.interval_before.map(|t| t.display_text().to_string()),
                    summary: m.summary.clone(),
                })
                .collect(),
            sessions_completed: state.completed_sessions().len(),
            awaiting_user: state.status() == ChatStatus::Open
                && current.is_some_and(|s| s.turns.last().map(|t| t.role) != Some(ChatRole::User)),
        }
    }
}
