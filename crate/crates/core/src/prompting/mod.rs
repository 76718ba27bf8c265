//! Prompt rendering for relationship selection, session generation and
//! session summarization.
//!
//! Templates use `{Slot Name}` placeholders filled in a single pass, so text
//! substituted into one slot is never re-scanned for placeholders. Every
//! substituted value is first flattened to one line: line breaks and the
//! whitespace around them collapse to a single space.

mod templates;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chronology::{Relationship, TimeInterval, SESSIONS_PER_EPISODE};
use crate::episode_pipeline::Turn;
use crate::event_graph::Event;

pub use templates::{
    CONVERSATION_FIRST_SESSION_TEMPLATE, CONVERSATION_TEMPLATE, RELATIONSHIP_TEMPLATE, SUMMARY_TEMPLATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Relationship,
    Conversation,
    Summary,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Relationship => "relationship",
            PromptKind::Conversation => "conversation",
            PromptKind::Summary => "summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    /// Hex SHA-256 over the kind and the substituted slot values.
    pub inputs_digest: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{kind} prompt needs {expected}, got {got}")]
    Arity {
        kind: &'static str,
        expected: String,
        got: usize,
    },
    #[error("invalid conversation context: {0}")]
    Context(String),
    #[error("template slot {{{0}}} has no value")]
    UnboundSlot(String),
}

/// Flattens `text` onto one line.
pub fn normalize_inline(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn render(kind: PromptKind, template: &str, slots: &[(&str, String)]) -> Result<RenderedPrompt, PromptError> {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| PromptError::UnboundSlot(after.to_string()))?;
        let name = &after[..close];
        let value = slots
            .iter()
            .find(|(slot, _)| *slot == name)
            .map(|(_, v)| v)
            .ok_or_else(|| PromptError::UnboundSlot(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);

    let mut hasher = Sha256::new();
    hasher.update(kind.as_str().as_bytes());
    for (name, value) in slots {
        hasher.update([0x1f]);
        hasher.update(name.as_bytes());
        hasher.update([0x1e]);
        hasher.update(value.as_bytes());
    }
    Ok(RenderedPrompt {
        kind,
        text: out,
        inputs_digest: hex::encode(hasher.finalize()),
    })
}

/// Relationship-selection prompt over the five event texts of an episode.
pub fn render_relationship_prompt(events: &[Event]) -> Result<RenderedPrompt, PromptError> {
    let texts: Vec<&str> = events.iter().map(|e| e.text.as_str()).collect();
    render_relationship_prompt_texts(&texts)
}

pub fn render_relationship_prompt_texts(texts: &[&str]) -> Result<RenderedPrompt, PromptError> {
    if texts.len() != SESSIONS_PER_EPISODE {
        return Err(PromptError::Arity {
            kind: "relationship",
            expected: format!("{SESSIONS_PER_EPISODE} events"),
            got: texts.len(),
        });
    }
    let description = texts
        .iter()
        .map(|t| normalize_inline(t))
        .collect::<Vec<_>>()
        .join("\n");
    render(
        PromptKind::Relationship,
        RELATIONSHIP_TEMPLATE,
        &[("Episode Event Description", description)],
    )
}

/// Conditions for generating one session of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub relationship: Relationship,
    pub speaker_a: String,
    pub speaker_b: String,
    /// 1-based session number.
    pub session_index: usize,
    pub current_event: String,
    /// Event texts of sessions `1..session_index`, oldest first.
    pub prior_events: Vec<String>,
    /// Interval from the previous session; absent for session 1.
    pub interval: Option<TimeInterval>,
}

impl ConversationContext {
    /// Context with the relationship's default role names.
    pub fn new(
        relationship: Relationship,
        session_index: usize,
        current_event: impl Into<String>,
        prior_events: Vec<String>,
        interval: Option<TimeInterval>,
    ) -> Self {
        let (speaker_a, speaker_b) = relationship.roles();
        Self {
            relationship,
            speaker_a,
            speaker_b,
            session_index,
            current_event: current_event.into(),
            prior_events,
            interval,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !(1..=SESSIONS_PER_EPISODE).contains(&self.session_index) {
            return Err(PromptError::Context(format!(
                "session index {} outside 1..={SESSIONS_PER_EPISODE}",
                self.session_index
            )));
        }
        if self.prior_events.len() != self.session_index - 1 {
            return Err(PromptError::Context(format!(
                "session {} needs {} prior events, got {}",
                self.session_index,
                self.session_index - 1,
                self.prior_events.len()
            )));
        }
        match (self.session_index, self.interval) {
            (1, Some(_)) => Err(PromptError::Context("session 1 cannot have an interval".into())),
            (n, None) if n > 1 => Err(PromptError::Context(format!(
                "session {n} is missing its interval from session {}",
                n - 1
            ))),
            _ if self.current_event.trim().is_empty() => {
                Err(PromptError::Context("current event is empty".into()))
            }
            _ if self.speaker_a.trim().is_empty() || self.speaker_b.trim().is_empty() => Err(
                PromptError::Context("speaker role names must be non-empty".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Session-generation prompt. Session 1 uses the variant without the
/// previous-topic block and interval clause.
pub fn render_conversation_prompt(ctx: &ConversationContext) -> Result<RenderedPrompt, PromptError> {
    ctx.validate()?;
    let relationship = ctx.relationship.label().to_string();
    let speaker_a = normalize_inline(&ctx.speaker_a);
    let speaker_b = normalize_inline(&ctx.speaker_b);
    let current = normalize_inline(&ctx.current_event);
    match (ctx.prior_events.last(), ctx.interval) {
        (Some(previous), Some(interval)) => render(
            PromptKind::Conversation,
            CONVERSATION_TEMPLATE,
            &[
                ("Relationship", relationship),
                ("Session N-1 Event Description", normalize_inline(previous)),
                (
                    "Time Intervals Between Session N-1 and N",
                    interval.after_clause(),
                ),
                ("Session N Event Description", current),
                ("Speaker A", speaker_a),
                ("Speaker B", speaker_b),
            ],
        ),
        _ => render(
            PromptKind::Conversation,
            CONVERSATION_FIRST_SESSION_TEMPLATE,
            &[
                ("Relationship", relationship),
                ("Session N Event Description", current),
                ("Speaker A", speaker_a),
                ("Speaker B", speaker_b),
            ],
        ),
    }
}

/// Serializes turns as `[Role] utterance` lines.
pub fn dialogue_lines(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| {
            format!(
                "[{}] {}",
                normalize_inline(&t.role_name),
                normalize_inline(&t.utterance)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Two-sentence summarization prompt over one session's turns.
pub fn render_summary_prompt(turns: &[Turn]) -> Result<RenderedPrompt, PromptError> {
    if turns.is_empty() {
        return Err(PromptError::Arity {
            kind: "summary",
            expected: "at least 1 turn".into(),
            got: 0,
        });
    }
    render(
        PromptKind::Summary,
        SUMMARY_TEMPLATE,
        &[("Session Dialogues", dialogue_lines(turns))],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode_pipeline::Speaker;
    use proptest::prelude::*;

    fn events(texts: &[&str]) -> Vec<Event> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Event::new(format!("e{i}"), *t, "t"))
            .collect()
    }

    fn turn(speaker: Speaker, role: &str, text: &str) -> Turn {
        Turn {
            speaker,
            role_name: role.into(),
            utterance: text.into(),
        }
    }

    #[test]
    fn relationship_prompt_arity() {
        assert!(matches!(
            render_relationship_prompt(&[]),
            Err(PromptError::Arity { got: 0, .. })
        ));
        assert!(render_relationship_prompt(&events(&["a", "b", "c", "d"])).is_err());
    }

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let a = render_relationship_prompt(&events(&["a", "b", "c", "d", "e"])).unwrap();
        let b = render_relationship_prompt(&events(&["a", "b", "c", "d", "e"])).unwrap();
        let c = render_relationship_prompt(&events(&["a", "b", "c", "d", "f"])).unwrap();
        assert_eq!(a.inputs_digest, b.inputs_digest);
        assert_ne!(a.inputs_digest, c.inputs_digest);
        assert_eq!(a.inputs_digest.len(), 64);
    }

    #[test]
    fn first_session_has_no_interval_or_past_clause() {
        let ctx = ConversationContext::new(Relationship::Neighbors, 1, "A party next door.", vec![], None);
        let p = render_conversation_prompt(&ctx).unwrap();
        for interval in TimeInterval::ALL {
            assert!(!p.text.contains(interval.display_text()));
            assert!(!p.text.contains(&interval.after_clause()));
        }
        assert!(!p.text.contains("past"));
        assert!(!p.text.contains("last topic"));
        assert!(p.text.contains("[Neighbor A]"));
    }

    #[test]
    fn later_session_names_only_previous_event() {
        let prior: Vec<String> = (1..=4).map(|i| format!("Topic number {i}.")).collect();
        let ctx = ConversationContext::new(
            Relationship::AthleteAndCoach,
            5,
            "Topic number 5.",
            prior,
            Some(TimeInterval::Months),
        );
        let p = render_conversation_prompt(&ctx).unwrap();
        assert_eq!(p.text.matches("Topic number 4.").count(), 1);
        assert!(!p.text.contains("Topic number 3."));
        assert!(p.text.contains("A few months after the last topic"));
    }

    #[test]
    fn context_errors() {
        let missing = ConversationContext::new(Relationship::Neighbors, 2, "x", vec!["y".into()], None);
        assert!(matches!(
            render_conversation_prompt(&missing),
            Err(PromptError::Context(_))
        ));
        let extra =
            ConversationContext::new(Relationship::Neighbors, 1, "x", vec![], Some(TimeInterval::Days));
        assert!(render_conversation_prompt(&extra).is_err());
        let wrong_prior = ConversationContext::new(
            Relationship::Neighbors,
            3,
            "x",
            vec!["y".into()],
            Some(TimeInterval::Days),
        );
        assert!(render_conversation_prompt(&wrong_prior).is_err());
        let six = ConversationContext::new(
            Relationship::Neighbors,
            6,
            "x",
            vec!["y".into(); 5],
            Some(TimeInterval::Days),
        );
        assert!(render_conversation_prompt(&six).is_err());
    }

    #[test]
    fn summary_requires_turns_and_flattens_newlines() {
        assert!(render_summary_prompt(&[]).is_err());
        let p = render_summary_prompt(&[
            turn(Speaker::A, "Patient", "I feel\nbetter  \n today."),
            turn(Speaker::B, "Doctor", "Good."),
        ])
        .unwrap();
        assert!(p
            .text
            .contains("[Patient] I feel better today.\n[Doctor] Good.\n[Summary]"));
        assert!(p.text.contains("summarize them in two sentences"));
    }

    #[test]
    fn slot_values_are_not_rescanned() {
        let ctx = ConversationContext::new(
            Relationship::Classmates,
            1,
            "They discuss {Relationship} and {Speaker A}.",
            vec![],
            None,
        );
        let p = render_conversation_prompt(&ctx).unwrap();
        assert!(p.text.contains("They discuss {Relationship} and {Speaker A}."));
    }

    fn printable() -> impl Strategy<Value = String> {
        "[ -~\n]{1,80}".prop_filter("needs visible text", |s| !s.trim().is_empty())
    }

    fn slot_names() -> Vec<&'static str> {
        vec![
            "{Relationship}",
            "{Speaker A}",
            "{Speaker B}",
            "{Session N Event Description}",
            "{Session N-1 Event Description}",
            "{Time Intervals Between Session N-1 and N}",
            "{Episode Event Description}",
            "{Session Dialogues}",
        ]
    }

    proptest! {
        #[test]
        fn conversation_prompt_keeps_its_sections(
            prev in printable(),
            cur in printable(),
            rel in 0usize..10,
            iv in 0usize..5,
        ) {
            let relationship = Relationship::ALL[rel];
            let ctx = ConversationContext::new(relationship, 2, cur.clone(), vec![prev.clone()], Some(TimeInterval::ALL[iv]));
            let p = render_conversation_prompt(&ctx).unwrap();
            prop_assert_eq!(&p, &render_conversation_prompt(&ctx).unwrap());
            let sections: Vec<&str> = p.text.split("\n\n").collect();
            prop_assert_eq!(sections.len(), 4);
            let (header, past, today, instructions) = (sections[0], sections[1], sections[2], sections[3]);
            prop_assert_eq!(header, format!("The following is a next conversation between {}.", relationship.label()));
            let past_lines: Vec<&str> = past.split('\n').collect();
            prop_assert_eq!(past_lines.len(), 2);
            prop_assert_eq!(past_lines[1], normalize_inline(&prev));
            let today_lines: Vec<&str> = today.split('\n').collect();
            prop_assert_eq!(today_lines.len(), 2);
            prop_assert!(today_lines[0].starts_with(&TimeInterval::ALL[iv].after_clause()));
            prop_assert_eq!(today_lines[1], normalize_inline(&cur));
            prop_assert!(!instructions.contains('\n'));
        }

        #[test]
        fn summary_prompt_keeps_its_sections(texts in prop::collection::vec(printable(), 1..8)) {
            let turns: Vec<Turn> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| turn(if i % 2 == 0 { Speaker::A } else { Speaker::B }, if i % 2 == 0 { "Wife" } else { "Husband" }, t))
                .collect();
            let p = render_summary_prompt(&turns).unwrap();
            let body = p.text.split("[Conversation]\n\n").nth(1).unwrap();
            let body = body.strip_suffix("\n[Summary]").unwrap();
            let lines: Vec<&str> = body.split('\n').collect();
            prop_assert_eq!(lines.len(), turns.len());
            for (line, t) in lines.iter().zip(&turns) {
                prop_assert_eq!(*line, format!("[{}] {}", t.role_name, normalize_inline(&t.utterance)));
            }
        }

        #[test]
        fn brace_free_inputs_leave_no_placeholders(
            evs in prop::collection::vec("[a-zA-Z][a-zA-Z .,']{0,39}", 5),
        ) {
            let texts: Vec<&str> = evs.iter().map(String::as_str).collect();
            let rendered = [
                render_relationship_prompt_texts(&texts).unwrap(),
                render_conversation_prompt(&ConversationContext::new(
                    Relationship::PatientAndDoctor, 2, evs[1].clone(), vec![evs[0].clone()], Some(TimeInterval::Weeks))).unwrap(),
                render_conversation_prompt(&ConversationContext::new(
                    Relationship::PatientAndDoctor, 1, evs[0].clone(), vec![], None)).unwrap(),
            ];
            for p in rendered {
                prop_assert!(!p.text.contains('{') && !p.text.contains('}'), "unfilled slot");
                for slot in slot_names() {
                    prop_assert!(!p.text.contains(slot));
                }
            }
        }
    }
}
