//! Bounded worker pool over independent blueprints.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::generate::{generate_episode, EpisodeFailure, PipelineConfig};
use super::{Episode, FilterReason, FilterVerdict};
use crate::chronology::{derive_seed, EpisodeBlueprint, Relationship};
use crate::llm_backend::LlmBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    /// Position of the blueprint in the input.
    pub index: usize,
    pub event_ids: Vec<String>,
    pub relationship: Relationship,
    pub session: Option<usize>,
    pub verdict: FilterVerdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbandonedRecord {
    pub index: usize,
    pub event_ids: Vec<String>,
    pub session: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub abandoned: usize,
    /// accepted / total, 0 for an empty run.
    pub accept_rate: f64,
    pub rejection_histogram: BTreeMap<FilterReason, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub accepted: Vec<Episode>,
    pub rejected: Vec<RejectedRecord>,
    pub abandoned: Vec<AbandonedRecord>,
    pub report: YieldReport,
}

enum Outcome {
    Accepted(Episode),
    Rejected(RejectedRecord),
    Abandoned(AbandonedRecord),
}

fn run_one(
    index: usize,
    bp: &EpisodeBlueprint,
    backend: &dyn LlmBackend,
    cfg: &PipelineConfig,
    seed: u64,
) -> Outcome {
    match generate_episode(bp, backend, cfg, derive_seed(seed, index as u64)) {
        Ok(ep) => Outcome::Accepted(ep),
        Err(EpisodeFailure::Rejected {
            verdict,
            session,
            detail,
        }) => Outcome::Rejected(RejectedRecord {
            index,
            event_ids: bp.event_ids.clone(),
            relationship: bp.relationship,
            session,
            verdict,
            detail,
        }),
        Err(EpisodeFailure::Abandoned { session, error }) => {
            log::warn!("blueprint {index} abandoned at session {session}: {error}");
            Outcome::Abandoned(AbandonedRecord {
                index,
                event_ids: bp.event_ids.clone(),
                session,
                error,
            })
        }
    }
}

/// Generates every blueprint with `workers` threads. Outputs keep input
/// order regardless of completion order.
pub fn run_pipeline(
    blueprints: &[EpisodeBlueprint],
    backend: &dyn LlmBackend,
    cfg: &PipelineConfig,
    seed: u64,
    workers: usize,
) -> PipelineRun {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..blueprints.len()).map(|_| None).collect());
    let workers = workers.clamp(1, blueprints.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(bp) = blueprints.get(i) else { break };
                let outcome = run_one(i, bp, backend, cfg, seed);
                slots.lock().expect("result slots poisoned")[i] = Some(outcome);
            });
        }
    });

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut abandoned = Vec::new();
    for outcome in slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .flatten()
    {
        match outcome {
            Outcome::Accepted(e) => accepted.push(e),
            Outcome::Rejected(r) => rejected.push(r),
            Outcome::Abandoned(a) => abandoned.push(a),
        }
    }
    let mut rejection_histogram = BTreeMap::new();
    for r in &rejected {
        for reason in &r.verdict.reasons {
            *rejection_histogram.entry(*reason).or_insert(0) += 1;
        }
    }
    let total = blueprints.len();
    let report = YieldReport {
        total,
        accepted: accepted.len(),
        rejected: rejected.len(),
        abandoned: abandoned.len(),
        accept_rate: if total == 0 {
            0.0
        } else {
            accepted.len() as f64 / total as f64
        },
        rejection_histogram,
    };
    PipelineRun {
        accepted,
        rejected,
        abandoned,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chronology::TimeInterval;
    use crate::event_graph::{Event, EventSequence};
    use crate::llm_backend::{ApiBackend, BackendConfig, ScriptEntry, ScriptedTransport};

    fn blueprint(tag: usize) -> EpisodeBlueprint {
        let events: Vec<Event> = (1..=5)
            .map(|i| {
                Event::new(
                    format!("b{tag}e{i}"),
                    format!("Topic {i} for blueprint {tag}."),
                    "t",
                )
            })
            .collect();
        let seq = EventSequence::new(events.iter().map(|e| e.id.clone()).collect()).unwrap();
        EpisodeBlueprint::new(&seq, events, [TimeInterval::Days; 4], Relationship::Neighbors).unwrap()
    }

    #[test]
    fn ordered_accounting() {
        let mut entries = Vec::new();
        for tag in 0..12 {
            for i in 1..=5 {
                let text = if tag % 4 == 3 && i == 2 {
                    "[Neighbor A] Hi.\n[Landlord] Rent is due.".to_string()
                } else {
                    format!("[Neighbor A] Hello {tag}.\n[Neighbor B] Hi {i}.")
                };
                entries.push(
                    ScriptEntry::completion(text).matching(format!("today:\nTopic {i} for blueprint {tag}.")),
                );
            }
        }
        let cfg = BackendConfig {
            max_concurrency: 4,
            ..BackendConfig::mock()
        };
        let backend = ApiBackend::new(ScriptedTransport::new(entries), &cfg);
        let blueprints: Vec<_> = (0..12).map(blueprint).collect();
        let run = run_pipeline(&blueprints, &backend, &PipelineConfig::default(), 5, 4);
        assert_eq!(run.report.total, 12);
        assert_eq!(run.report.accepted, 9);
        assert_eq!(run.report.rejected, 3);
        assert_eq!(run.report.abandoned, 0);
        assert_eq!(
            run.report.rejection_histogram[&FilterReason::OutOfRelationshipSpeaker],
            3
        );
        let idx: Vec<usize> = run.rejected.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![3, 7, 11]);
        let sequential = run_pipeline(&blueprints, &backend, &PipelineConfig::default(), 5, 1);
        assert_eq!(sequential.report.accepted, 0, "script consumed by the first run");
        assert!((run.report.accept_rate - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_run() {
        let backend = ApiBackend::new(ScriptedTransport::new(vec![]), &BackendConfig::mock());
        let run = run_pipeline(&[], &backend, &PipelineConfig::default(), 0, 8);
        assert_eq!(run.report.total, 0);
        assert_eq!(run.report.accept_rate, 0.0);
    }
}
