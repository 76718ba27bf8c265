use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{EntailmentEdge, Event, GraphError};
use crate::llm_backend::NliLabel;

pub const DEFAULT_ENTAILMENT_THRESHOLD: f64 = 0.5;

/// Directed graph whose edges run premise → hypothesis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventGraph {
    nodes: BTreeSet<String>,
    adjacency: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EventGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    /// Inserts an edge, adding missing endpoints. Self-loops are ignored.
    /// A repeated edge keeps the higher score.
    pub fn add_edge(&mut self, premise: &str, hypothesis: &str, score: f64) {
        if premise == hypothesis {
            return;
        }
        self.nodes.insert(premise.to_string());
        self.nodes.insert(hypothesis.to_string());
        let slot = self
            .adjacency
            .entry(premise.to_string())
            .or_default()
            .entry(hypothesis.to_string())
            .or_insert(score);
        if score > *slot {
            *slot = score;
        }
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn has_edge(&self, premise: &str, hypothesis: &str) -> bool {
        self.adjacency
            .get(premise)
            .is_some_and(|succ| succ.contains_key(hypothesis))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeMap::len).sum()
    }

    /// Successors of `id` in ascending id order.
    pub fn successors<'a>(&'a self, id: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.adjacency
            .get(id)
            .into_iter()
            .flat_map(|succ| succ.keys().map(String::as_str))
    }

    /// All edges as retained entailment records, ordered by (premise, hypothesis).
    pub fn edges(&self) -> impl Iterator<Item = EntailmentEdge> + '_ {
        self.adjacency.iter().flat_map(|(premise, succ)| {
            succ.iter().map(move |(hypothesis, score)| EntailmentEdge {
                premise_id: premise.clone(),
                hypothesis_id: hypothesis.clone(),
                score: *score,
                label: NliLabel::Entailment,
            })
        })
    }

    /// Rebuilds a graph from a stored edge list; nodes are the edge endpoints.
    pub fn from_edges<'a>(edges: impl IntoIterator<Item = &'a EntailmentEdge>) -> Self {
        let mut graph = Self::new();
        for edge in edges {
            graph.add_edge(&edge.premise_id, &edge.hypothesis_id, edge.score);
        }
        graph
    }
}

/// Builds the event graph from scored pairs, keeping exactly the edges
/// labelled entailment with `score >= threshold`.
pub fn build_graph(
    events: &[Event],
    edges: &[EntailmentEdge],
    threshold: f64,
) -> Result<EventGraph, GraphError> {
    let known: HashSet<&str> = events.iter().map(|e| e.id.as_str()).collect();
    let dangling: BTreeSet<String> = edges
        .iter()
        .flat_map(|e| [&e.premise_id, &e.hypothesis_id])
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect();
    if !dangling.is_empty() {
        return Err(GraphError::DanglingEdges(dangling.into_iter().collect()));
    }

    let mut graph = EventGraph::new();
    for event in events {
        graph.add_node(event.id.clone());
    }
    for edge in edges {
        if edge.label == NliLabel::Entailment && edge.score >= threshold {
            graph.add_edge(&edge.premise_id, &edge.hypothesis_id, edge.score);
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn events(n: usize) -> Vec<Event> {
        (0..n)
            .map(|i| Event::new(format!("e{i:02}"), format!("event {i}"), "test"))
            .collect()
    }

    fn edge(p: &str, h: &str, score: f64, label: NliLabel) -> EntailmentEdge {
        EntailmentEdge {
            premise_id: p.into(),
            hypothesis_id: h.into(),
            score,
            label,
        }
    }

    #[test]
    fn empty_edge_set() {
        let g = build_graph(&events(3), &[], 0.5).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn filter_keeps_only_strong_entailment() {
        let edges = vec![
            edge("e00", "e01", 0.9, NliLabel::Entailment),
            edge("e01", "e02", 0.9, NliLabel::Neutral),
            edge("e00", "e02", 0.4, NliLabel::Entailment),
        ];
        let g = build_graph(&events(3), &edges, 0.5).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge("e00", "e01"));
        assert!(!g.has_edge("e01", "e00"), "direction must be preserved");
    }

    #[test]
    fn dangling_endpoints_are_listed() {
        let edges = vec![
            edge("e00", "zz", 0.9, NliLabel::Entailment),
            edge("yy", "e01", 0.9, NliLabel::Entailment),
        ];
        match build_graph(&events(2), &edges, 0.5) {
            Err(GraphError::DanglingEdges(ids)) => assert_eq!(ids, vec!["yy", "zz"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edges_roundtrip_through_record_list() {
        let edges = vec![
            edge("e00", "e01", 0.9, NliLabel::Entailment),
            edge("e01", "e02", 0.7, NliLabel::Entailment),
        ];
        let g = build_graph(&events(3), &edges, 0.5).unwrap();
        let stored: Vec<_> = g.edges().collect();
        assert_eq!(stored, edges);
        assert_eq!(EventGraph::from_edges(&stored).edge_count(), 2);
    }

    fn label_strategy() -> impl Strategy<Value = NliLabel> {
        prop_oneof![
            Just(NliLabel::Entailment),
            Just(NliLabel::Neutral),
            Just(NliLabel::Contradiction)
        ]
    }

    proptest! {
        #[test]
        fn retained_edges_match_naive_refilter(
            raw in prop::collection::vec((0usize..20, 0usize..20, 0.0f64..=1.0, label_strategy()), 0..120),
            threshold in 0.0f64..=1.0,
        ) {
            let evs = events(20);
            let edges: Vec<_> = raw
                .iter()
                .filter(|(p, h, _, _)| p != h)
                .map(|(p, h, s, l)| edge(&format!("e{p:02}"), &format!("e{h:02}"), *s, *l))
                .collect();
            let g = build_graph(&evs, &edges, threshold).unwrap();

            let mut expected = BTreeSet::new();
            for e in &edges {
                if e.label == NliLabel::Entailment && e.score >= threshold {
                    expected.insert((e.premise_id.clone(), e.hypothesis_id.clone()));
                }
            }
            let actual: BTreeSet<_> = g.edges().map(|e| (e.premise_id, e.hypothesis_id)).collect();
            prop_assert_eq!(actual, expected);
            for e in g.edges() {
                prop_assert!(e.score >= threshold);
                prop_assert_ne!(e.premise_id, e.hypothesis_id);
            }
        }
    }
}
