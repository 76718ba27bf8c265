//! Raw LLM transcript to speaker-tagged turns.
//!
//! Accepted line forms are `[Name] utterance` and `Name: utterance`. Names
//! are matched through a per-episode [`SpeakerMap`]. When a transcript breaks
//! several rules, the reported reason follows a fixed precedence:
//! too many speakers, then out-of-relationship speaker, then unclear
//! alignment, then stage directions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::stage::StageDirectionDetector;
use super::{FilterReason, Speaker, Turn};

/// Longest `Name:` prefix, in words, read as a speaker marker.
const MAX_NAME_WORDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptError {
    pub reason: FilterReason,
    /// 1-based line number of the first offending line, when there is one.
    pub line: Option<usize>,
    pub detail: String,
}

impl fmt::Display for TranscriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} at line {line}: {}", self.reason, self.detail),
            None => write!(f, "{}: {}", self.reason, self.detail),
        }
    }
}

impl std::error::Error for TranscriptError {}

/// Case- and markup-insensitive speaker name table for one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerMap {
    role_a: String,
    role_b: String,
    aliases: BTreeMap<String, Speaker>,
}

fn normalize_name(name: &str) -> String {
    let cleaned: String = name.chars().filter(|c| !matches!(c, '*' | '_' | '`')).collect();
    let cleaned = cleaned.trim().trim_end_matches(':').trim();
    let lowered = cleaned.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .strip_prefix("the ")
        .map(str::to_string)
        .unwrap_or(collapsed)
}

impl SpeakerMap {
    pub fn new(role_a: &str, role_b: &str) -> Self {
        let mut map = Self {
            role_a: role_a.to_string(),
            role_b: role_b.to_string(),
            aliases: BTreeMap::new(),
        };
        map.add_alias(role_a, Speaker::A);
        map.add_alias(role_b, Speaker::B);
        map.add_alias("Speaker A", Speaker::A);
        map.add_alias("Speaker B", Speaker::B);
        map.add_alias("Speaker 1", Speaker::A);
        map.add_alias("Speaker 2", Speaker::B);
        // "Co-worker A" is also written "Coworker A" or "Co worker A".
        for (role, speaker) in [(role_a, Speaker::A), (role_b, Speaker::B)] {
            if role.contains('-') {
                map.add_alias(&role.replace('-', ""), speaker);
                map.add_alias(&role.replace('-', " "), speaker);
            }
        }
        map
    }

    /// Adds an extra accepted spelling, e.g. a first name the model invented.
    pub fn with_alias(mut self, name: &str, speaker: Speaker) -> Self {
        self.add_alias(name, speaker);
        self
    }

    fn add_alias(&mut self, name: &str, speaker: Speaker) {
        let key = normalize_name(name);
        if !key.is_empty() {
            self.aliases.entry(key).or_insert(speaker);
        }
    }

    pub fn resolve(&self, name: &str) -> Option<Speaker> {
        self.aliases.get(&normalize_name(name)).copied()
    }

    pub fn role(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::A => &self.role_a,
            Speaker::B => &self.role_b,
        }
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, Speaker)> {
        self.aliases.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

enum Line<'a> {
    Blank,
    Marked {
        name: &'a str,
        utterance: &'a str,
        bracketed: bool,
    },
    Unmarked(&'a str),
}

fn strip_list_bullet(line: &str) -> &str {
    let t = line.trim();
    for bullet in ["- ", "• ", "> "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    t
}

fn classify_line(raw: &str) -> Line<'_> {
    let line = strip_list_bullet(raw);
    if line.is_empty() {
        return Line::Blank;
    }
    if let Some(rest) = line.strip_prefix('[') {
        if let Some(close) = rest.find(']') {
            let name = &rest[..close];
            let after = rest[close + 1..].trim_start();
            let utterance = after.strip_prefix(':').unwrap_or(after).trim();
            return Line::Marked {
                name,
                utterance,
                bracketed: true,
            };
        }
        return Line::Unmarked(line);
    }
    if let Some(colon) = line.find(':') {
        let name = &line[..colon];
        let plausible = !name.trim().is_empty()
            && name.split_whitespace().count() <= MAX_NAME_WORDS
            && !name.contains(['.', '?', '!', '"', '[', ']']);
        if plausible {
            let mut utterance = line[colon + 1..].trim();
            // "**Patient:** Hi"
            if name.trim_start().starts_with("**") {
                utterance = utterance.strip_prefix("**").unwrap_or(utterance).trim();
            }
            return Line::Marked {
                name,
                utterance,
                bracketed: false,
            };
        }
    }
    Line::Unmarked(line)
}

/// Splits `Patient (smiling)` into the bare name and its enclosed remarks.
fn split_name_remarks(name: &str) -> (String, Vec<String>) {
    let mut bare = String::new();
    let mut remarks = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in name.chars() {
        match c {
            '(' => {
                if depth > 0 {
                    current.push(c);
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    remarks.push(std::mem::take(&mut current));
                } else {
                    current.push(c);
                }
            }
            _ if depth > 0 => current.push(c),
            _ => bare.push(c),
        }
    }
    if depth > 0 {
        remarks.push(current);
    }
    (bare.trim().to_string(), remarks)
}

#[derive(Default)]
struct Findings {
    unknown: BTreeMap<String, usize>,
    known: BTreeSet<Speaker>,
    first_out_of_relationship: Option<(usize, String)>,
    first_unclear: Option<(usize, String)>,
    first_direction: Option<(usize, String)>,
}

fn note(slot: &mut Option<(usize, String)>, line: usize, detail: String) {
    if slot.is_none() {
        *slot = Some((line, detail));
    }
}

/// Parses with the default speaker aliases and action lexicon.
pub fn parse_transcript(raw: &str, role_a: &str, role_b: &str) -> Result<Vec<Turn>, TranscriptError> {
    parse_transcript_with(
        raw,
        &SpeakerMap::new(role_a, role_b),
        &StageDirectionDetector::default(),
    )
}

pub fn parse_transcript_with(
    raw: &str,
    speakers: &SpeakerMap,
    detector: &StageDirectionDetector,
) -> Result<Vec<Turn>, TranscriptError> {
    let roles = [speakers.role(Speaker::A), speakers.role(Speaker::B)];
    let mut found = Findings::default();
    let mut turns: Vec<Turn> = Vec::new();

    for (idx, raw_line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        match classify_line(raw_line) {
            Line::Blank => {}
            Line::Unmarked(text) => {
                if detector.is_direction_line(text, &roles) {
                    note(
                        &mut found.first_direction,
                        line_no,
                        format!("narration line {text:?}"),
                    );
                } else {
                    note(
                        &mut found.first_unclear,
                        line_no,
                        format!("no speaker marker in {text:?}"),
                    );
                }
            }
            Line::Marked {
                name,
                utterance,
                bracketed,
            } => {
                let (bare, remarks) = split_name_remarks(name);
                if remarks.iter().any(|r| detector.is_action_phrase(r)) {
                    note(
                        &mut found.first_direction,
                        line_no,
                        format!("action in speaker tag {name:?}"),
                    );
                }
                let Some(speaker) = speakers.resolve(&bare) else {
                    if bracketed && detector.is_action_phrase(&bare) {
                        // "[walks away]" is a direction, not a speaker
                        note(
                            &mut found.first_direction,
                            line_no,
                            format!("bracketed action {name:?}"),
                        );
                        continue;
                    }
                    let key = normalize_name(&bare);
                    if key.is_empty() {
                        note(&mut found.first_unclear, line_no, "empty speaker tag".into());
                        continue;
                    }
                    if utterance.is_empty() {
                        note(
                            &mut found.first_unclear,
                            line_no,
                            format!("header-like line {name:?}"),
                        );
                        continue;
                    }
                    found.unknown.entry(key).or_insert(line_no);
                    note(
                        &mut found.first_out_of_relationship,
                        line_no,
                        format!("speaker {:?} is neither {:?} nor {:?}", bare, roles[0], roles[1]),
                    );
                    continue;
                };
                found.known.insert(speaker);
                if utterance.is_empty() {
                    note(
                        &mut found.first_unclear,
                        line_no,
                        format!("empty utterance for {name:?}"),
                    );
                    continue;
                }
                match turns.last_mut() {
                    Some(last) if last.speaker == speaker => {
                        last.utterance.push(' ');
                        last.utterance.push_str(utterance);
                    }
                    _ => turns.push(Turn {
                        speaker,
                        role_name: speakers.role(speaker).to_string(),
                        utterance: utterance.to_string(),
                    }),
                }
            }
        }
    }

    let distinct = found.known.len() + found.unknown.len();
    if distinct > 2 {
        let line = found.unknown.values().min().copied();
        return Err(TranscriptError {
            reason: FilterReason::TooManySpeakers,
            line,
            detail: format!("{distinct} distinct speakers"),
        });
    }
    if let Some((line, detail)) = found.first_out_of_relationship {
        return Err(TranscriptError {
            reason: FilterReason::OutOfRelationshipSpeaker,
            line: Some(line),
            detail,
        });
    }
    if let Some((line, detail)) = found.first_unclear {
        return Err(TranscriptError {
            reason: FilterReason::UnclearAlignment,
            line: Some(line),
            detail,
        });
    }
    if turns.len() < 2 {
        return Err(TranscriptError {
            reason: FilterReason::UnclearAlignment,
            line: None,
            detail: format!("{} turn(s) after merging, need both speakers", turns.len()),
        });
    }
    if let Some((line, detail)) = found.first_direction {
        return Err(TranscriptError {
            reason: FilterReason::StageDirections,
            line: Some(line),
            detail,
        });
    }
    Ok(turns)
}
