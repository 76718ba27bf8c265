use sha2::{Digest, Sha256};
use thiserror::Error;

use super::stage::StageDirectionDetector;
use super::transcript::{parse_transcript_with, SpeakerMap};
use super::{Episode, FilterReason, FilterVerdict, Provenance, Session, SessionEvent, Turn};
use crate::chronology::{EpisodeBlueprint, SESSIONS_PER_EPISODE};
use crate::llm_backend::{BackendError, CompletionRequest, LlmBackend};
use crate::prompting::{self, ConversationContext, PromptError};
use crate::rebot;

/// Utterances per moderation request.
const MODERATION_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Extra attempts per session after a retriable backend failure.
    pub session_retry_budget: usize,
    pub detector: StageDirectionDetector,
    pub moderate: bool,
    /// Also request a summary for each generated session.
    pub summarize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            session_retry_budget: 2,
            detector: StageDirectionDetector::default(),
            moderate: true,
            summarize: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeFailure {
    /// A session or the moderation pass failed a quality filter.
    #[error("rejected at session {session:?}: {detail}")]
    Rejected {
        verdict: FilterVerdict,
        /// 1-based session, absent for episode-level moderation.
        session: Option<usize>,
        detail: String,
    },
    /// Backend kept failing; nothing was judged.
    #[error("abandoned at session {session}: {error}")]
    Abandoned { session: usize, error: String },
}

impl EpisodeFailure {
    fn reject(reason: FilterReason, session: Option<usize>, detail: impl Into<String>) -> Self {
        EpisodeFailure::Rejected {
            verdict: FilterVerdict::from_reasons([reason]),
            session,
            detail: detail.into(),
        }
    }

    fn abandon(session: usize, error: impl ToString) -> Self {
        EpisodeFailure::Abandoned {
            session,
            error: error.to_string(),
        }
    }
}

/// Stable id from the seed and the event sequence.
fn episode_id(blueprint: &EpisodeBlueprint, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for id in &blueprint.event_ids {
        h.update(id.as_bytes());
        h.update([0x1f]);
    }
    format!("ep-{}", &hex::encode(h.finalize())[..16])
}

fn complete_with_budget(
    backend: &dyn LlmBackend,
    request: &CompletionRequest,
    budget: usize,
) -> Result<String, BackendError> {
    let mut attempt = 0;
    loop {
        match backend.complete(request).and_then(|r| r.into_text()) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_retriable() && attempt < budget => {
                attempt += 1;
                log::warn!("session request failed, re-attempt {attempt}/{budget}: {e}");
            }
            Err(e) => return Err(e),
        }
    }
}

fn summarize(backend: &dyn LlmBackend, turns: &[Turn], budget: usize) -> Result<String, BackendError> {
    let prompt =
        prompting::render_summary_prompt(turns).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    let text = complete_with_budget(backend, &CompletionRequest::generation(prompt.text), budget)?;
    rebot::clean_summary(&text, rebot::DEFAULT_MAX_SUMMARY_CHARS).map_err(|e| BackendError::Protocol {
        field: "text".into(),
        detail: e.to_string(),
    })
}

/// Generates the five sessions of `blueprint` in order. The first failing
/// session fails the whole episode.
pub fn generate_episode(
    blueprint: &EpisodeBlueprint,
    backend: &dyn LlmBackend,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Episode, EpisodeFailure> {
    blueprint
        .validate()
        .map_err(|e| EpisodeFailure::abandon(1, format!("invalid blueprint: {e}")))?;
    let relationship = blueprint.relationship;
    let (role_a, role_b) = relationship.roles();
    let speakers = SpeakerMap::new(&role_a, &role_b);
    let mut sessions: Vec<Session> = Vec::with_capacity(blueprint.events.len());

    for (pos, event) in blueprint.events.iter().enumerate() {
        let index = pos + 1;
        let interval = pos.checked_sub(1).map(|i| blueprint.intervals[i]);
        let prior = blueprint.events[..pos].iter().map(|e| e.text.clone()).collect();
        let ctx = ConversationContext::new(relationship, index, event.text.clone(), prior, interval);
        let prompt = prompting::render_conversation_prompt(&ctx)
            .map_err(|e: PromptError| EpisodeFailure::abandon(index, e))?;
        let raw = complete_with_budget(
            backend,
            &CompletionRequest::generation(prompt.text),
            cfg.session_retry_budget,
        )
        .map_err(|e| EpisodeFailure::abandon(index, e))?;

        let turns = parse_transcript_with(&raw, &speakers, &cfg.detector)
            .map_err(|e| EpisodeFailure::reject(e.reason, Some(index), e.to_string()))?;
        if cfg.detector.detect(&turns) {
            return Err(EpisodeFailure::reject(
                FilterReason::StageDirections,
                Some(index),
                "stage direction inside an utterance",
            ));
        }
        let summary = if cfg.summarize {
            Some(
                summarize(backend, &turns, cfg.session_retry_budget)
                    .map_err(|e| EpisodeFailure::abandon(index, e))?,
            )
        } else {
            None
        };
        sessions.push(Session {
            index,
            event: SessionEvent {
                id: event.id.clone(),
                text: event.text.clone(),
            },
            interval,
            turns,
            summary,
        });
    }

    let episode = Episode {
        id: episode_id(blueprint, seed),
        relationship,
        sessions,
        provenance: Provenance {
            backend: backend.describe(),
            seed,
        },
    };

    if cfg.moderate {
        let verdict = moderate_episode(&episode, backend)
            .map_err(|e| EpisodeFailure::abandon(SESSIONS_PER_EPISODE, e))?;
        if !verdict.passed {
            return Err(EpisodeFailure::Rejected {
                verdict,
                session: None,
                detail: "moderation flagged at least one utterance".into(),
            });
        }
    }
    if let Err(e) = episode.validate() {
        return Err(EpisodeFailure::abandon(episode.sessions.len(), e));
    }
    Ok(episode)
}

/// Moderates every utterance; one flag fails the whole episode.
pub fn moderate_episode(episode: &Episode, backend: &dyn LlmBackend) -> Result<FilterVerdict, BackendError> {
    let texts: Vec<String> = episode
        .sessions
        .iter()
        .flat_map(|s| s.turns.iter().map(|t| t.utterance.clone()))
        .collect();
    for chunk in texts.chunks(MODERATION_BATCH) {
        let verdicts = backend.moderate_batch(chunk)?;
        if verdicts.len() != chunk.len() {
            return Err(BackendError::Protocol {
                field: "results".into(),
                detail: format!("{} verdicts for {} inputs", verdicts.len(), chunk.len()),
            });
        }
        if verdicts.iter().any(|v| v.flagged) {
            return Ok(FilterVerdict::from_reasons([FilterReason::ModerationFlagged]));
        }
    }
    Ok(FilterVerdict::pass())
}
