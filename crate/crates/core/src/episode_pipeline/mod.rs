//! Session-by-session episode generation, transcript parsing and the
//! quality filters applied to every generated episode.

mod generate;
mod runner;
mod stage;
mod transcript;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chronology::{Relationship, TimeInterval, SESSIONS_PER_EPISODE};

pub use generate::{generate_episode, moderate_episode, EpisodeFailure, PipelineConfig};
pub use runner::{run_pipeline, AbandonedRecord, PipelineRun, RejectedRecord, YieldReport};
pub use stage::{detect_stage_directions, StageDirectionDetector};
pub use transcript::{parse_transcript, parse_transcript_with, SpeakerMap, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    #[serde(rename = "role")]
    pub role_name: String,
    #[serde(rename = "text")]
    pub utterance: String,
}

/// The event a session talks about, as stored in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub index: usize,
    pub event: SessionEvent,
    /// Absent exactly for session 1.
    pub interval: Option<TimeInterval>,
    pub turns: Vec<Turn>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub relationship: Relationship,
    pub sessions: Vec<Session>,
    pub provenance: Provenance,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("schema violation at `{field}`: {detail}")]
pub struct SchemaError {
    pub field: String,
    pub detail: String,
}

fn violation(field: impl Into<String>, detail: impl Into<String>) -> SchemaError {
    SchemaError {
        field: field.into(),
        detail: detail.into(),
    }
}

impl Episode {
    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.sessions.iter().filter_map(|s| s.interval).collect()
    }

    /// Checks every structural invariant of an accepted episode.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.id.trim().is_empty() {
            return Err(violation("id", "empty"));
        }
        if self.sessions.len() != SESSIONS_PER_EPISODE {
            return Err(violation(
                "sessions",
                format!(
                    "expected {SESSIONS_PER_EPISODE} sessions, got {}",
                    self.sessions.len()
                ),
            ));
        }
        let (role_a, role_b) = self.relationship.roles();
        for (pos, session) in self.sessions.iter().enumerate() {
            let at = |field: &str| format!("sessions[{pos}].{field}");
            if session.index != pos + 1 {
                return Err(violation(
                    at("index"),
                    format!("expected {}, got {}", pos + 1, session.index),
                ));
            }
            match (session.index, session.interval) {
                (1, Some(_)) => return Err(violation(at("interval"), "session 1 has an interval")),
                (n, None) if n > 1 => return Err(violation(at("interval"), "missing")),
                _ => {}
            }
            if session.event.text.trim().is_empty() {
                return Err(violation(at("event.text"), "empty"));
            }
            if session.turns.len() < 2 {
                return Err(violation(
                    at("turns"),
                    format!("{} turn(s), need at least 2", session.turns.len()),
                ));
            }
            for (ti, turn) in session.turns.iter().enumerate() {
                let tat = |field: &str| format!("sessions[{pos}].turns[{ti}].{field}");
                if turn.utterance.trim().is_empty() {
                    return Err(violation(tat("text"), "empty utterance"));
                }
                let expected = match turn.speaker {
                    Speaker::A => &role_a,
                    Speaker::B => &role_b,
                };
                if &turn.role_name != expected {
                    return Err(violation(
                        tat("role"),
                        format!(
                            "{:?} does not match relationship role {expected:?}",
                            turn.role_name
                        ),
                    ));
                }
                if ti > 0 && session.turns[ti - 1].speaker == turn.speaker {
                    return Err(violation(tat("speaker"), "same speaker as previous turn"));
                }
            }
            if let Some(summary) = &session.summary {
                if summary.trim().is_empty() {
                    return Err(violation(at("summary"), "empty"));
                }
            }
        }
        Ok(())
    }
}

/// Why a generated episode was filtered out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    TooManySpeakers,
    UnclearAlignment,
    OutOfRelationshipSpeaker,
    StageDirections,
    ModerationFlagged,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterReason::TooManySpeakers => "too_many_speakers",
            FilterReason::UnclearAlignment => "unclear_alignment",
            FilterReason::OutOfRelationshipSpeaker => "out_of_relationship_speaker",
            FilterReason::StageDirections => "stage_directions",
            FilterReason::ModerationFlagged => "moderation_flagged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub passed: bool,
    pub reasons: Vec<FilterReason>,
}

impl FilterVerdict {
    pub fn pass() -> Self {
        Self {
            passed: true,
            reasons: Vec::new(),
        }
    }

    /// Verdict from a reason set; passes iff the set is empty.
    pub fn from_reasons(reasons: impl IntoIterator<Item = FilterReason>) -> Self {
        let reasons: Vec<FilterReason> = reasons.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        Self {
            passed: reasons.is_empty(),
            reasons,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A schema-valid episode with `turns` alternating turns per session.
    pub fn episode(id: &str, relationship: Relationship, turns: usize, words: usize) -> Episode {
        let (a, b) = relationship.roles();
        let intervals = [
            TimeInterval::Hours,
            TimeInterval::Days,
            TimeInterval::Weeks,
            TimeInterval::Months,
        ];
        let sessions = (1..=SESSIONS_PER_EPISODE)
            .map(|index| Session {
                index,
                event: SessionEvent {
                    id: format!("{id}-ev{index}"),
                    text: format!("Event {index} of {id}."),
                },
                interval: (index > 1).then(|| intervals[index - 2]),
                turns: (0..turns)
                    .map(|t| Turn {
                        speaker: if t % 2 == 0 { Speaker::A } else { Speaker::B },
                        role_name: if t % 2 == 0 { a.clone() } else { b.clone() },
                        utterance: vec!["word"; words].join(" "),
                    })
                    .collect(),
                summary: None,
            })
            .collect();
        Episode {
            id: id.into(),
            relationship,
            sessions,
            provenance: Provenance {
                backend: "fixture".into(),
                seed: 0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_episode_is_valid() {
        let ep = fixtures::episode("x", Relationship::PatientAndDoctor, 4, 3);
        ep.validate().unwrap();
        assert_eq!(ep.intervals().len(), 4);
    }

    #[test]
    fn validation_names_the_failing_field() {
        let mut ep = fixtures::episode("x", Relationship::PatientAndDoctor, 4, 3);
        ep.sessions[2].turns[1].role_name = "Nurse".into();
        assert_eq!(ep.validate().unwrap_err().field, "sessions[2].turns[1].role");

        let mut ep = fixtures::episode("x", Relationship::PatientAndDoctor, 4, 3);
        ep.sessions[0].interval = Some(TimeInterval::Days);
        assert_eq!(ep.validate().unwrap_err().field, "sessions[0].interval");

        let mut ep = fixtures::episode("x", Relationship::PatientAndDoctor, 4, 3);
        ep.sessions.pop();
        assert_eq!(ep.validate().unwrap_err().field, "sessions");

        let mut ep = fixtures::episode("x", Relationship::PatientAndDoctor, 4, 3);
        ep.sessions[4].turns[2].speaker = Speaker::B;
        ep.sessions[4].turns[2].role_name = "Doctor".into();
        assert_eq!(ep.validate().unwrap_err().field, "sessions[4].turns[2].speaker");
    }

    #[test]
    fn verdict_invariant() {
        assert!(FilterVerdict::pass().passed);
        let v = FilterVerdict::from_reasons([FilterReason::StageDirections, FilterReason::StageDirections]);
        assert!(!v.passed);
        assert_eq!(v.reasons, vec![FilterReason::StageDirections]);
        assert!(FilterVerdict::from_reasons([]).passed);
    }

    #[test]
    fn canonical_turn_keys() {
        let t = Turn {
            speaker: Speaker::B,
            role_name: "Doctor".into(),
            utterance: "Hello.".into(),
        };
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"speaker":"B","role":"Doctor","text":"Hello."}"#
        );
    }
}
