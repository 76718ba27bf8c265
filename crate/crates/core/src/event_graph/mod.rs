//! Directed entailment graph over narrative events, and the extraction of
//! deduplicated five-event chains that seed dialogue episodes.
//!
//! The flow is: score every ordered pair of events with an [`NliScorer`],
//! keep the pairs labelled entailment above a threshold as directed edges
//! (premise → hypothesis), enumerate all simple paths of five nodes, then
//! greedily drop paths that overlap an earlier kept path in more than three
//! events.

mod dedup;
mod graph;
mod lexical;
mod paths;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_backend::{BackendError, NliDistribution, NliLabel, NliScorer};

pub use dedup::{dedup_sequences, dedup_sequences_with, MAX_SHARED_EVENTS};
pub use graph::{build_graph, EventGraph, DEFAULT_ENTAILMENT_THRESHOLD};
pub use lexical::{content_words, jaccard, LexicalScorer};
pub use paths::{extract_sequences, PathExtraction, DEFAULT_PATH_CAP, EPISODE_SEQUENCE_LEN};

/// A one-paragraph narrative used as the conversational seed of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

impl Event {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: source.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.id.trim().is_empty() {
            return Err(GraphError::EmptyEventId);
        }
        if self.text.trim().is_empty() {
            return Err(GraphError::EmptyEventText(self.id.clone()));
        }
        Ok(())
    }
}

/// Validates every event and checks that ids are unique within the slice.
pub fn validate_events(events: &[Event]) -> Result<(), GraphError> {
    let mut seen = std::collections::HashSet::with_capacity(events.len());
    for event in events {
        event.validate()?;
        if !seen.insert(event.id.as_str()) {
            return Err(GraphError::DuplicateEventId(event.id.clone()));
        }
    }
    Ok(())
}

/// A scored, labelled premise → hypothesis pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentEdge {
    pub premise_id: String,
    pub hypothesis_id: String,
    /// Probability mass of the entailment class.
    pub score: f64,
    pub label: NliLabel,
}

/// An ordered chain of distinct event ids, each consecutive pair an edge of
/// the graph it was extracted from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventSequence {
    pub event_ids: Vec<String>,
}

impl EventSequence {
    pub fn new(event_ids: Vec<String>) -> Result<Self, GraphError> {
        let mut seen = std::collections::HashSet::new();
        for id in &event_ids {
            if !seen.insert(id.as_str()) {
                return Err(GraphError::InvalidSequence(format!(
                    "event {id:?} appears more than once"
                )));
            }
        }
        Ok(Self { event_ids })
    }

    pub fn len(&self) -> usize {
        self.event_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_ids.is_empty()
    }

    /// Number of events the two sequences have in common, ignoring position.
    pub fn shared_events(&self, other: &EventSequence) -> usize {
        self.event_ids
            .iter()
            .filter(|id| other.event_ids.contains(id))
            .count()
    }

    /// True when the sequence is a simple path of `graph`.
    pub fn is_path_in(&self, graph: &EventGraph) -> bool {
        let distinct: std::collections::HashSet<_> = self.event_ids.iter().collect();
        distinct.len() == self.event_ids.len()
            && self.event_ids.iter().all(|id| graph.contains_node(id))
            && self
                .event_ids
                .windows(2)
                .all(|pair| graph.has_edge(&pair[0], &pair[1]))
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("event id is empty")]
    EmptyEventId,
    #[error("event {0:?} has empty text")]
    EmptyEventText(String),
    #[error("duplicate event id {0:?}")]
    DuplicateEventId(String),
    #[error("cannot score event {0:?} against itself")]
    SelfPair(String),
    #[error("edges reference unknown events: {}", .0.join(", "))]
    DanglingEdges(Vec<String>),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Scorer(#[from] BackendError),
}

impl GraphError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GraphError::Scorer(err) if err.is_retriable())
    }
}

/// Classifies one ordered event pair.
///
/// The label is the argmax class of the scorer's distribution (ties resolve in
/// the order entailment, neutral, contradiction) and the score is the
/// entailment probability.
pub fn score_pair(
    premise: &Event,
    hypothesis: &Event,
    scorer: &dyn NliScorer,
) -> Result<EntailmentEdge, GraphError> {
    premise.validate()?;
    hypothesis.validate()?;
    if premise.id == hypothesis.id {
        return Err(GraphError::SelfPair(premise.id.clone()));
    }
    let dist: NliDistribution = scorer.classify(&premise.text, &hypothesis.text)?;
    Ok(EntailmentEdge {
        premise_id: premise.id.clone(),
        hypothesis_id: hypothesis.id.clone(),
        score: dist.entailment,
        label: dist.label(),
    })
}

/// Scores every ordered pair of distinct events, in parallel.
///
/// Output order is deterministic: premise-major over the input order.
pub fn score_all_pairs(events: &[Event], scorer: &dyn NliScorer) -> Result<Vec<EntailmentEdge>, GraphError> {
    use rayon::prelude::*;

    validate_events(events)?;
    let rows: Vec<Result<Vec<EntailmentEdge>, GraphError>> = events
        .par_iter()
        .map(|premise| {
            events
                .iter()
                .filter(|h| h.id != premise.id)
                .map(|hypothesis| score_pair(premise, hypothesis, scorer))
                .collect()
        })
        .collect();
    let mut edges = Vec::with_capacity(events.len() * events.len().saturating_sub(1));
    for row in rows {
        edges.extend(row?);
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_entailment_under_lexical_scorer() {
        let a = Event::new("e1", "Ben broke his leg skiing", "t");
        let b = Event::new("e2", "Ben broke his leg skiing", "t");
        let edge = score_pair(&a, &b, &LexicalScorer).unwrap();
        assert_eq!(edge.label, NliLabel::Entailment);
        assert!(edge.score >= 0.5);
    }

    #[test]
    fn disjoint_content_is_neutral() {
        let a = Event::new("e1", "Ben broke his leg skiing", "t");
        let b = Event::new("e2", "Maria baked fresh bread today", "t");
        let edge = score_pair(&a, &b, &LexicalScorer).unwrap();
        assert_eq!(edge.label, NliLabel::Neutral);
        assert_eq!(edge.score, 0.0);
    }

    #[test]
    fn same_id_pair_is_rejected() {
        let a = Event::new("e1", "text", "t");
        assert!(matches!(
            score_pair(&a, &a, &LexicalScorer),
            Err(GraphError::SelfPair(_))
        ));
    }

    #[test]
    fn empty_text_is_rejected() {
        let a = Event::new("e1", "   ", "t");
        assert!(matches!(a.validate(), Err(GraphError::EmptyEventText(_))));
    }

    #[test]
    fn duplicate_ids_detected() {
        let events = vec![Event::new("a", "x", ""), Event::new("a", "y", "")];
        assert!(matches!(
            validate_events(&events),
            Err(GraphError::DuplicateEventId(_))
        ));
    }

    #[test]
    fn score_all_pairs_covers_ordered_pairs() {
        let events = vec![
            Event::new("a", "alpha beta", ""),
            Event::new("b", "alpha beta", ""),
            Event::new("c", "gamma", ""),
        ];
        let edges = score_all_pairs(&events, &LexicalScorer).unwrap();
        assert_eq!(edges.len(), 6);
        assert_eq!(edges[0].premise_id, "a");
        assert_eq!(edges[0].hypothesis_id, "b");
        assert_eq!(edges[0].label, NliLabel::Entailment);
    }
}
