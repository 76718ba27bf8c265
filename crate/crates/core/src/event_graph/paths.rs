use std::num::NonZeroUsize;

use super::{EventGraph, EventSequence};

/// Sequence length consumed by episode generation (one event per session).
pub const EPISODE_SEQUENCE_LEN: usize = 5;

pub const DEFAULT_PATH_CAP: NonZeroUsize = match NonZeroUsize::new(1_000_000) {
    Some(cap) => cap,
    None => unreachable!(),
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathExtraction {
    pub sequences: Vec<EventSequence>,
    /// Set when the graph holds more than `cap` paths of the requested length.
    pub truncated: bool,
}

/// Enumerates every simple directed path with exactly `length` nodes.
///
/// Paths come out in lexicographic order of their id lists. At most `cap`
/// paths are returned.
pub fn extract_sequences(graph: &EventGraph, length: usize, cap: NonZeroUsize) -> PathExtraction {
    let mut walker = Walker {
        graph,
        length,
        cap: cap.get(),
        path: Vec::with_capacity(length),
        out: Vec::new(),
        truncated: false,
    };
    if length > 0 {
        for start in graph.nodes() {
            if walker.done() {
                break;
            }
            walker.descend(start);
        }
    }
    PathExtraction {
        sequences: walker.out,
        truncated: walker.truncated,
    }
}

struct Walker<'g> {
    graph: &'g EventGraph,
    length: usize,
    cap: usize,
    path: Vec<&'g str>,
    out: Vec<EventSequence>,
    truncated: bool,
}

impl<'g> Walker<'g> {
    fn done(&self) -> bool {
        self.truncated
    }

    fn descend(&mut self, node: &'g str) {
        self.path.push(node);
        if self.path.len() == self.length {
            if self.out.len() == self.cap {
                self.truncated = true;
            } else {
                self.out.push(EventSequence {
                    event_ids: self.path.iter().map(|s| s.to_string()).collect(),
                });
            }
        } else {
            let graph = self.graph;
            for next in graph.successors(node) {
                if self.done() {
                    break;
                }
                if !self.path.contains(&next) {
                    self.descend(next);
                }
            }
        }
        self.path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn cap(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    fn graph_from(edges: &[(&str, &str)]) -> EventGraph {
        let mut g = EventGraph::new();
        for (a, b) in edges {
            g.add_edge(a, b, 1.0);
        }
        g
    }

    /// Brute force: every ordered 5-tuple of distinct nodes whose consecutive
    /// pairs are edges.
    fn brute_force_five(g: &EventGraph) -> BTreeSet<Vec<String>> {
        let nodes: Vec<&str> = g.nodes().collect();
        let mut out = BTreeSet::new();
        fn rec<'a>(
            g: &EventGraph,
            nodes: &[&'a str],
            acc: &mut Vec<&'a str>,
            out: &mut BTreeSet<Vec<String>>,
        ) {
            if acc.len() == 5 {
                out.insert(acc.iter().map(|s| s.to_string()).collect());
                return;
            }
            for &n in nodes {
                if acc.contains(&n) {
                    continue;
                }
                if let Some(&last) = acc.last() {
                    if !g.has_edge(last, n) {
                        continue;
                    }
                }
                acc.push(n);
                rec(g, nodes, acc, out);
                acc.pop();
            }
        }
        rec(g, &nodes, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn empty_graph_yields_nothing() {
        let r = extract_sequences(&EventGraph::new(), 5, DEFAULT_PATH_CAP);
        assert!(r.sequences.is_empty());
        assert!(!r.truncated);
    }

    #[test]
    fn chain_yields_single_path() {
        let g = graph_from(&[("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")]);
        let r = extract_sequences(&g, 5, DEFAULT_PATH_CAP);
        assert_eq!(r.sequences.len(), 1);
        assert_eq!(r.sequences[0].event_ids, vec!["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn cycles_do_not_repeat_nodes() {
        let g = graph_from(&[("a", "b"), ("b", "c"), ("c", "a"), ("c", "d"), ("d", "e")]);
        let r = extract_sequences(&g, 5, DEFAULT_PATH_CAP);
        assert_eq!(r.sequences.len(), 1);
        assert_eq!(r.sequences[0].event_ids, vec!["a", "b", "c", "d", "e"]);
        for s in &r.sequences {
            assert!(s.is_path_in(&g));
        }
    }

    #[test]
    fn truncation_flag_only_when_exceeding_cap() {
        // complete digraph on 5 nodes: 5! = 120 Hamiltonian paths
        let ids = ["a", "b", "c", "d", "e"];
        let mut g = EventGraph::new();
        for x in ids {
            for y in ids {
                g.add_edge(x, y, 1.0);
            }
        }
        let exact = extract_sequences(&g, 5, cap(120));
        assert_eq!(exact.sequences.len(), 120);
        assert!(!exact.truncated);
        let cut = extract_sequences(&g, 5, cap(7));
        assert_eq!(cut.sequences.len(), 7);
        assert!(cut.truncated);
        assert_eq!(cut.sequences[..], exact.sequences[..7]);
    }

    #[test]
    fn other_lengths_are_supported() {
        let g = graph_from(&[("a", "b"), ("b", "c")]);
        assert_eq!(extract_sequences(&g, 1, DEFAULT_PATH_CAP).sequences.len(), 3);
        assert_eq!(extract_sequences(&g, 2, DEFAULT_PATH_CAP).sequences.len(), 2);
        assert!(extract_sequences(&g, 0, DEFAULT_PATH_CAP).sequences.is_empty());
    }

    fn graph_strategy() -> impl Strategy<Value = EventGraph> {
        (1usize..=30).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 0..=60).prop_map(move |pairs| {
                let mut g = EventGraph::new();
                for i in 0..n {
                    g.add_node(format!("n{i:02}"));
                }
                for (a, b) in pairs {
                    g.add_edge(&format!("n{a:02}"), &format!("n{b:02}"), 1.0);
                }
                g
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_brute_force(g in graph_strategy()) {
            let r = extract_sequences(&g, 5, DEFAULT_PATH_CAP);
            let got: Vec<Vec<String>> = r.sequences.iter().map(|s| s.event_ids.clone()).collect();
            let mut sorted = got.clone();
            sorted.sort();
            prop_assert_eq!(&got, &sorted, "output must be lexicographic");
            let expected: Vec<Vec<String>> = brute_force_five(&g).into_iter().collect();
            prop_assert_eq!(got, expected);
        }
    }
}
