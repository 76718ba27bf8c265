//! Chronological metadata of an episode: the four time intervals between its
//! sessions and the relationship between its two speakers.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::event_graph::{Event, EventSequence, EPISODE_SEQUENCE_LEN};
use crate::llm_backend::{BackendError, CompletionRequest, LlmBackend};
use crate::prompting::{self, PromptError};

pub const SESSIONS_PER_EPISODE: usize = EPISODE_SEQUENCE_LEN;
pub const INTERVALS_PER_EPISODE: usize = SESSIONS_PER_EPISODE - 1;
/// Total classification attempts before giving up on an LLM reply.
pub const RELATIONSHIP_ATTEMPTS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChronologyError {
    #[error("unknown time interval {0:?}")]
    UnknownInterval(String),
    #[error("unknown relationship {0:?}")]
    UnknownRelationship(String),
    #[error("blueprint needs {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Approximate elapsed time between two consecutive sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimeInterval {
    Hours,
    Days,
    Weeks,
    Months,
    Years,
}

impl TimeInterval {
    pub const ALL: [TimeInterval; 5] = [
        TimeInterval::Hours,
        TimeInterval::Days,
        TimeInterval::Weeks,
        TimeInterval::Months,
        TimeInterval::Years,
    ];

    pub fn display_text(self) -> &'static str {
        match self {
            TimeInterval::Hours => "a few hours later",
            TimeInterval::Days => "a few days later",
            TimeInterval::Weeks => "a few weeks later",
            TimeInterval::Months => "a few months later",
            TimeInterval::Years => "a couple of years later",
        }
    }

    pub fn short_code(self) -> &'static str {
        match self {
            TimeInterval::Hours => "hours",
            TimeInterval::Days => "days",
            TimeInterval::Weeks => "weeks",
            TimeInterval::Months => "months",
            TimeInterval::Years => "years",
        }
    }

    /// Sentence-initial "… after" form used in the conversation prompt,
    /// e.g. "A few hours after".
    pub fn after_clause(self) -> String {
        let stem = self.display_text().trim_end_matches(" later");
        let mut chars = stem.chars();
        let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
        format!("{first}{} after", chars.as_str())
    }

    /// Parses the canonical phrase exactly.
    pub fn from_display_text(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.display_text() == text)
    }

    /// Lenient parse: canonical phrase, short code, or the "… after" form, any case.
    pub fn parse_lenient(text: &str) -> Result<Self, ChronologyError> {
        let norm = text.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| {
                norm == v.display_text()
                    || norm == v.short_code()
                    || norm == v.after_clause().to_lowercase()
                    || norm == v.display_text().trim_end_matches(" later")
            })
            .ok_or_else(|| ChronologyError::UnknownInterval(text.to_string()))
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_text())
    }
}

impl Serialize for TimeInterval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.display_text())
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        TimeInterval::from_display_text(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown time interval {text:?}")))
    }
}

/// The fixed relationship between the two speakers of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relationship {
    Classmates,
    Neighbors,
    CoWorkers,
    MenteeAndMentor,
    HusbandAndWife,
    PatientAndDoctor,
    ParentAndChild,
    StudentAndTeacher,
    EmployeeAndBoss,
    AthleteAndCoach,
}

/// Observed relationship counts over the reference 200,000-episode corpus,
/// in [`Relationship::ALL`] order. Used as sampling weights.
pub const RELATIONSHIP_REFERENCE_COUNTS: [u64; 10] = [
    66_090, 49_521, 28_856, 16_035, 13_486, 6_980, 6_514, 5_018, 4_811, 2_689,
];

impl Relationship {
    pub const ALL: [Relationship; 10] = [
        Relationship::Classmates,
        Relationship::Neighbors,
        Relationship::CoWorkers,
        Relationship::MenteeAndMentor,
        Relationship::HusbandAndWife,
        Relationship::PatientAndDoctor,
        Relationship::ParentAndChild,
        Relationship::StudentAndTeacher,
        Relationship::EmployeeAndBoss,
        Relationship::AthleteAndCoach,
    ];

    /// Option list of the relationship-selection prompt, numbered from 1.
    pub const PROMPT_OPTIONS: [Relationship; 10] = [
        Relationship::HusbandAndWife,
        Relationship::ParentAndChild,
        Relationship::CoWorkers,
        Relationship::Classmates,
        Relationship::StudentAndTeacher,
        Relationship::PatientAndDoctor,
        Relationship::EmployeeAndBoss,
        Relationship::AthleteAndCoach,
        Relationship::Neighbors,
        Relationship::MenteeAndMentor,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Relationship::Classmates => "Classmates",
            Relationship::Neighbors => "Neighbors",
            Relationship::CoWorkers => "Co-workers",
            Relationship::MenteeAndMentor => "Mentee and Mentor",
            Relationship::HusbandAndWife => "Husband and Wife",
            Relationship::PatientAndDoctor => "Patient and Doctor",
            Relationship::ParentAndChild => "Parent and Child",
            Relationship::StudentAndTeacher => "Student and Teacher",
            Relationship::EmployeeAndBoss => "Employee and Boss",
            Relationship::AthleteAndCoach => "Athlete and Coach",
        }
    }

    /// Wording used in the selection prompt's option list.
    pub fn option_text(self) -> &'static str {
        match self {
            Relationship::ParentAndChild => "Child and Parent",
            other => other.label(),
        }
    }

    /// True for relationships whose two roles share one name.
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            Relationship::Classmates | Relationship::Neighbors | Relationship::CoWorkers
        )
    }

    /// Role names of speaker A and speaker B.
    pub fn roles(self) -> (String, String) {
        let label = self.label();
        if let Some((a, b)) = label.split_once(" and ") {
            return (a.to_string(), b.to_string());
        }
        let singular = label.strip_suffix('s').unwrap_or(label);
        (format!("{singular} A"), format!("{singular} B"))
    }

    pub fn from_label(text: &str) -> Result<Self, ChronologyError> {
        let norm = text.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|r| norm == r.label().to_lowercase() || norm == r.option_text().to_lowercase())
            .ok_or_else(|| ChronologyError::UnknownRelationship(text.to_string()))
    }

    /// Reference probabilities derived from [`RELATIONSHIP_REFERENCE_COUNTS`].
    pub fn reference_probabilities() -> [f64; 10] {
        let total: u64 = RELATIONSHIP_REFERENCE_COUNTS.iter().sum();
        RELATIONSHIP_REFERENCE_COUNTS.map(|c| c as f64 / total as f64)
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Relationship {
    type Err = ChronologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_label(s)
    }
}

impl Serialize for Relationship {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Relationship {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Relationship::from_label(&text).map_err(serde::de::Error::custom)
    }
}

/// Result of reading one LLM reply to the selection prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyParse {
    Chosen(Relationship),
    Ambiguous(Vec<Relationship>),
    Unrecognized,
}

fn option_number_pattern() -> &'static Regex {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^\s*(?:option\s*)?(\d{1,2})\s*(?:[.):\-]|$|\s)").unwrap())
}

/// Reads a relationship out of a free-form reply: a leading option number
/// wins, otherwise exactly one label must occur as a case-insensitive substring.
pub fn parse_relationship_reply(reply: &str) -> ReplyParse {
    if let Some(caps) = option_number_pattern().captures(&reply.to_lowercase()) {
        if let Ok(n) = caps[1].parse::<usize>() {
            if (1..=Relationship::PROMPT_OPTIONS.len()).contains(&n) {
                return ReplyParse::Chosen(Relationship::PROMPT_OPTIONS[n - 1]);
            }
        }
    }
    let lower = reply.to_lowercase();
    let found: Vec<Relationship> = Relationship::PROMPT_OPTIONS
        .into_iter()
        .filter(|r| {
            lower.contains(&r.label().to_lowercase()) || lower.contains(&r.option_text().to_lowercase())
        })
        .collect();
    match found.len() {
        0 => ReplyParse::Unrecognized,
        1 => ReplyParse::Chosen(found[0]),
        _ => ReplyParse::Ambiguous(found),
    }
}

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("relationship reply unusable after {attempts} attempts; last reply {last_reply:?}")]
    ClassificationFailed { attempts: usize, last_reply: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl AssignError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, AssignError::Backend(e) if e.is_retriable())
    }
}

/// Asks the backend to pick the relationship best fitting the five events.
pub fn assign_relationship(events: &[Event], backend: &dyn LlmBackend) -> Result<Relationship, AssignError> {
    let prompt = prompting::render_relationship_prompt(events)?;
    let request = CompletionRequest::classification(prompt.text);
    let mut last_reply = String::new();
    for attempt in 1..=RELATIONSHIP_ATTEMPTS {
        let reply = backend.complete(&request)?.into_text()?;
        match parse_relationship_reply(&reply) {
            ReplyParse::Chosen(r) => return Ok(r),
            outcome => {
                log::debug!("relationship attempt {attempt}: {outcome:?} from {reply:?}");
                last_reply = reply;
            }
        }
    }
    Err(AssignError::ClassificationFailed {
        attempts: RELATIONSHIP_ATTEMPTS,
        last_reply,
    })
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Four independent uniform draws over the five interval categories.
pub fn sample_intervals_with<R: Rng + ?Sized>(rng: &mut R) -> [TimeInterval; INTERVALS_PER_EPISODE] {
    std::array::from_fn(|_| TimeInterval::ALL[rng.gen_range(0..TimeInterval::ALL.len())])
}

pub fn sample_intervals(seed: u64) -> [TimeInterval; INTERVALS_PER_EPISODE] {
    sample_intervals_with(&mut seeded_rng(seed))
}

/// Offline relationship draw weighted by the reference corpus frequencies.
pub fn sample_relationship_prior_with<R: Rng + ?Sized>(rng: &mut R) -> Relationship {
    static WEIGHTS: std::sync::OnceLock<WeightedIndex<u64>> = std::sync::OnceLock::new();
    let dist = WEIGHTS.get_or_init(|| WeightedIndex::new(RELATIONSHIP_REFERENCE_COUNTS).unwrap());
    Relationship::ALL[dist.sample(rng)]
}

pub fn sample_relationship_prior(seed: u64) -> Relationship {
    sample_relationship_prior_with(&mut seeded_rng(seed))
}

/// Everything needed to generate one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBlueprint {
    pub event_ids: Vec<String>,
    pub intervals: Vec<TimeInterval>,
    pub relationship: Relationship,
    /// The sequence's events, in order, so generation needs no side lookup.
    pub events: Vec<Event>,
}

impl EpisodeBlueprint {
    pub fn new(
        sequence: &EventSequence,
        events: Vec<Event>,
        intervals: [TimeInterval; INTERVALS_PER_EPISODE],
        relationship: Relationship,
    ) -> Result<Self, ChronologyError> {
        let bp = Self {
            event_ids: sequence.event_ids.clone(),
            intervals: intervals.to_vec(),
            relationship,
            events,
        };
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<(), ChronologyError> {
        let arity = |what, expected, got| {
            if got == expected {
                Ok(())
            } else {
                Err(ChronologyError::Arity { what, expected, got })
            }
        };
        arity("events", SESSIONS_PER_EPISODE, self.event_ids.len())?;
        arity("intervals", INTERVALS_PER_EPISODE, self.intervals.len())?;
        arity("event records", SESSIONS_PER_EPISODE, self.events.len())?;
        if self.events.iter().zip(&self.event_ids).any(|(e, id)| &e.id != id) {
            return Err(ChronologyError::Arity {
                what: "event records matching event_ids",
                expected: SESSIONS_PER_EPISODE,
                got: self
                    .events
                    .iter()
                    .zip(&self.event_ids)
                    .filter(|(e, id)| &e.id == *id)
                    .count(),
            });
        }
        Ok(())
    }

    pub fn sequence(&self) -> EventSequence {
        EventSequence {
            event_ids: self.event_ids.clone(),
        }
    }
}

/// Mixes a run seed with an item index into an independent per-item seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
