//! Field-mapping shim for the public release of the reference corpus.
//!
//! A release record keeps each session as parallel `<ordinal>_session_dialogue`
//! and `<ordinal>_session_speakers` arrays, with intervals and summaries as
//! top-level lists. Events are not part of the release; each session's event
//! text falls back to its summary.

use std::io::BufRead;

use serde::Deserialize;

use super::{parse_line, CorpusError, LineError};
use crate::chronology::{Relationship, TimeInterval, SESSIONS_PER_EPISODE};
use crate::episode_pipeline::{Episode, Provenance, Session, SessionEvent, Speaker, SpeakerMap, Turn};

const ORDINALS: [&str; SESSIONS_PER_EPISODE] = ["first", "second", "third", "fourth", "fifth"];

/// Text used when a session has neither event nor summary.
pub const MISSING_EVENT_TEXT: &str = "(event not included in release)";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ReleaseRecord {
    #[serde(rename = "dataID")]
    pub data_id: String,
    pub relationship: String,
    pub time_interval: Vec<String>,
    pub summary: Vec<String>,
    pub first_session_dialogue: Vec<String>,
    pub first_session_speakers: Vec<String>,
    pub second_session_dialogue: Vec<String>,
    pub second_session_speakers: Vec<String>,
    pub third_session_dialogue: Vec<String>,
    pub third_session_speakers: Vec<String>,
    pub fourth_session_dialogue: Vec<String>,
    pub fourth_session_speakers: Vec<String>,
    pub fifth_session_dialogue: Vec<String>,
    pub fifth_session_speakers: Vec<String>,
}

impl ReleaseRecord {
    fn session(&self, pos: usize) -> (&[String], &[String]) {
        match pos {
            0 => (&self.first_session_dialogue, &self.first_session_speakers),
            1 => (&self.second_session_dialogue, &self.second_session_speakers),
            2 => (&self.third_session_dialogue, &self.third_session_speakers),
            3 => (&self.fourth_session_dialogue, &self.fourth_session_speakers),
            _ => (&self.fifth_session_dialogue, &self.fifth_session_speakers),
        }
    }
}

fn parse_relationship(text: &str) -> Option<Relationship> {
    let squash = |s: &str| s.to_lowercase().replace(['-', ' '], "");
    let wanted = squash(text);
    Relationship::ALL
        .into_iter()
        .find(|r| squash(r.label()) == wanted || squash(r.option_text()) == wanted)
}

/// Interval list entries: either four intervals, or five with a leading
/// placeholder for the first session.
fn parse_intervals(raw: &[String]) -> Result<Vec<TimeInterval>, String> {
    let tail = match raw.len() {
        4 => raw,
        5 => &raw[1..],
        n => return Err(format!("{n} time_interval entries, expected 4 or 5")),
    };
    tail.iter()
        .map(|t| TimeInterval::parse_lenient(t).map_err(|e| e.to_string()))
        .collect()
}

pub fn to_episode(record: &ReleaseRecord) -> Result<Episode, CorpusError> {
    let fail = |detail: String| CorpusError::Shim {
        id: record.data_id.clone(),
        detail,
    };
    let relationship = parse_relationship(&record.relationship)
        .ok_or_else(|| fail(format!("unknown relationship {:?}", record.relationship)))?;
    let intervals = parse_intervals(&record.time_interval).map_err(&fail)?;
    let (role_a, role_b) = relationship.roles();
    // Release tags sometimes use the plural label: "Classmates A".
    let mut speakers = SpeakerMap::new(&role_a, &role_b);
    if relationship.is_symmetric() {
        speakers = speakers
            .with_alias(&format!("{} A", relationship.label()), Speaker::A)
            .with_alias(&format!("{} B", relationship.label()), Speaker::B);
    }

    let mut sessions = Vec::with_capacity(SESSIONS_PER_EPISODE);
    for (pos, ordinal) in ORDINALS.iter().enumerate() {
        let (dialogue, names) = record.session(pos);
        if dialogue.len() != names.len() {
            return Err(fail(format!(
                "{}_session has {} utterances but {} speakers",
                ordinal,
                dialogue.len(),
                names.len()
            )));
        }
        // Unknown names take A then B in order of appearance.
        let mut seen: Vec<String> = Vec::new();
        let mut turns: Vec<Turn> = Vec::new();
        for (utterance, name) in dialogue.iter().zip(names) {
            let speaker = match speakers.resolve(name) {
                Some(s) => s,
                None => {
                    let key = name.trim().to_lowercase();
                    if !seen.contains(&key) {
                        seen.push(key.clone());
                    }
                    match seen.iter().position(|k| *k == key) {
                        Some(0) => Speaker::A,
                        Some(1) => Speaker::B,
                        _ => return Err(fail(format!("{}_session has a third speaker {name:?}", ordinal))),
                    }
                }
            };
            let text = utterance.trim();
            if text.is_empty() {
                continue;
            }
            match turns.last_mut() {
                Some(last) if last.speaker == speaker => {
                    last.utterance.push(' ');
                    last.utterance.push_str(text);
                }
                _ => turns.push(Turn {
                    speaker,
                    role_name: speakers.role(speaker).to_string(),
                    utterance: text.to_string(),
                }),
            }
        }
        let summary = record
            .summary
            .get(pos)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty());
        sessions.push(Session {
            index: pos + 1,
            event: SessionEvent {
                id: format!("{}:{}", record.data_id, pos + 1),
                text: summary.clone().unwrap_or_else(|| MISSING_EVENT_TEXT.to_string()),
            },
            interval: pos.checked_sub(1).map(|i| intervals[i]),
            turns,
            summary,
        });
    }
    let episode = Episode {
        id: record.data_id.clone(),
        relationship,
        sessions,
        provenance: Provenance {
            backend: "release".into(),
            seed: 0,
        },
    };
    episode.validate().map_err(|e| fail(e.to_string()))?;
    Ok(episode)
}

/// Converted episodes plus per-line failures.
#[derive(Debug, Default)]
pub struct ReleaseIngest {
    pub episodes: Vec<Episode>,
    pub errors: Vec<LineError>,
}

pub fn ingest_release<R: BufRead>(reader: R) -> Result<ReleaseIngest, CorpusError> {
    let mut out = ReleaseIngest::default();
    for (idx, line) in reader.lines().enumerate() {
        let text = line.map_err(|source| CorpusError::Io {
            path: Default::default(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let converted = parse_line::<ReleaseRecord>(&text, idx + 1).and_then(|r| {
            to_episode(&r).map_err(|e| LineError {
                line: idx + 1,
                field: "record".into(),
                message: e.to_string(),
            })
        });
        match converted {
            Ok(ep) => out.episodes.push(ep),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}
