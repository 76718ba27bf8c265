use std::collections::{HashMap, HashSet};

use super::EventSequence;

/// A kept sequence may share at most this many events with any other kept one.
pub const MAX_SHARED_EVENTS: usize = 3;

/// Greedy first-keep deduplication with the default overlap limit.
pub fn dedup_sequences(seqs: &[EventSequence]) -> Vec<EventSequence> {
    dedup_sequences_with(seqs, MAX_SHARED_EVENTS)
}

/// Walks `seqs` in order and keeps a sequence iff it shares at most
/// `max_shared` events (as unordered sets) with every sequence kept so far.
pub fn dedup_sequences_with(seqs: &[EventSequence], max_shared: usize) -> Vec<EventSequence> {
    // event id -> indices (into `kept`) of kept sequences containing it
    let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut kept: Vec<&EventSequence> = Vec::new();
    let mut overlap: HashMap<usize, usize> = HashMap::new();

    for seq in seqs {
        let members: HashSet<&str> = seq.event_ids.iter().map(String::as_str).collect();
        overlap.clear();
        let mut conflict = false;
        'scan: for id in &members {
            if let Some(holders) = index.get(id) {
                for &k in holders {
                    let count = overlap.entry(k).or_insert(0);
                    *count += 1;
                    if *count > max_shared {
                        conflict = true;
                        break 'scan;
                    }
                }
            }
        }
        if conflict {
            continue;
        }
        let slot = kept.len();
        kept.push(seq);
        for id in members {
            index.entry(id).or_default().push(slot);
        }
    }
    kept.into_iter().cloned().collect()
}
