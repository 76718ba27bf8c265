//! Access to text-generation, moderation and NLI services.
//!
//! Everything funnels through [`ApiBackend`], which speaks the OpenAI
//! chat-completions wire schema over a pluggable [`Transport`] and owns the
//! retry, rate-limit and concurrency policy. Two transports ship: a blocking
//! HTTP client and [`ScriptedTransport`], a deterministic replayable mock.

mod api;
mod config;
mod http;
mod limiter;
mod mock;
mod retry;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::{ApiBackend, SharedBackend};
pub use config::{BackendConfig, BackendKind, MockConfig, DEFAULT_API_KEY_ENV, DEFAULT_MODEL};
pub use http::HttpTransport;
pub use limiter::{Clock, ConcurrencyLimiter, ManualClock, Permit, RateLimiter, SystemClock};
pub use mock::{ScriptEntry, ScriptedTransport};
pub use retry::{AttemptRecord, Exchange, RetryPolicy, Transport, TransportFailure};

pub const GENERATION_TEMPERATURE: f64 = 1.0;
pub const CLASSIFICATION_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Model name; `None` defers to the backend's configured model.
    pub model_hint: Option<String>,
}

impl CompletionRequest {
    /// Request for open-ended generation (dialogues, bot turns, summaries).
    pub fn generation(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: GENERATION_TEMPERATURE,
            model_hint: None,
        }
    }

    /// Request for selection tasks such as relationship classification.
    pub fn classification(prompt: impl Into<String>) -> Self {
        Self {
            temperature: CLASSIFICATION_TEMPERATURE,
            max_tokens: 32,
            ..Self::generation(prompt)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} is not a finite non-negative number",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Present iff `finish_reason` is not [`FinishReason::Error`].
    pub text: Option<String>,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>, finish_reason: FinishReason, usage: Usage) -> Self {
        debug_assert_ne!(finish_reason, FinishReason::Error);
        Self {
            text: Some(text.into()),
            finish_reason,
            usage,
        }
    }

    pub fn into_text(self) -> Result<String, BackendError> {
        match (self.finish_reason, self.text) {
            (FinishReason::Error, _) | (_, None) => Err(BackendError::Protocol {
                field: "choices[0].message.content".into(),
                detail: "backend reported an error completion".into(),
            }),
            (_, Some(text)) => Ok(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationVerdict {
    pub flagged: bool,
    pub categories: Vec<String>,
}

impl ModerationVerdict {
    /// Builds a verdict that satisfies `flagged == !categories.is_empty()`.
    pub fn from_categories(mut categories: Vec<String>) -> Self {
        categories.sort();
        categories.dedup();
        Self {
            flagged: !categories.is_empty(),
            categories,
        }
    }

    pub fn clean() -> Self {
        Self::from_categories(Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        })
    }
}

/// Three-way NLI class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliDistribution {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

pub const NLI_SUM_TOLERANCE: f64 = 1e-6;

impl NliDistribution {
    /// Each probability must lie in [0, 1] and the three must sum to 1 ± 1e-6.
    pub fn validate(&self) -> Result<(), BackendError> {
        for (field, p) in [
            ("entailment", self.entailment),
            ("neutral", self.neutral),
            ("contradiction", self.contradiction),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Protocol {
                    field: format!("probabilities.{field}"),
                    detail: format!("{p} is not a probability"),
                });
            }
        }
        let sum = self.entailment + self.neutral + self.contradiction;
        if (sum - 1.0).abs() > NLI_SUM_TOLERANCE {
            return Err(BackendError::Protocol {
                field: "probabilities".into(),
                detail: format!("class probabilities sum to {sum}"),
            });
        }
        Ok(())
    }

    /// Argmax class; ties prefer entailment, then neutral.
    pub fn label(&self) -> NliLabel {
        if self.entailment >= self.neutral && self.entailment >= self.contradiction {
            NliLabel::Entailment
        } else if self.neutral >= self.contradiction {
            NliLabel::Neutral
        } else {
            NliLabel::Contradiction
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transient failures persisted past the retry budget.
    #[error("transport failed after {} attempt(s); last: {}", .attempts.len(), last_outcome(.attempts))]
    Transport { attempts: Vec<AttemptRecord> },
    /// The service rejected the request outright (4xx other than 429).
    #[error("request rejected with status {status}: {message}")]
    Request { status: u16, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("protocol error in field `{field}`: {detail}")]
    Protocol { field: String, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

fn last_outcome(attempts: &[AttemptRecord]) -> String {
    attempts
        .last()
        .map(|a| a.outcome.clone())
        .unwrap_or_else(|| "none".into())
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// Text generation plus moderation.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Verdicts are returned in input order.
    fn moderate_batch(&self, texts: &[String]) -> Result<Vec<ModerationVerdict>, BackendError>;

    fn moderate(&self, text: &str) -> Result<ModerationVerdict, BackendError> {
        let mut verdicts = self.moderate_batch(&[text.to_string()])?;
        verdicts.pop().ok_or_else(|| BackendError::Protocol {
            field: "results".into(),
            detail: "empty moderation result".into(),
        })
    }

    /// Short label recorded in provenance metadata, e.g. the model name.
    fn describe(&self) -> String;
}

/// Premise/hypothesis classifier. Implementations must be stateless and
/// idempotent so they can be shared across worker threads.
pub trait NliScorer: Send + Sync {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
    fn moderate_batch(&self, texts: &[String]) -> Result<Vec<ModerationVerdict>, BackendError> {
        (**self).moderate_batch(texts)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: NliScorer + ?Sized> NliScorer for std::sync::Arc<T> {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        (**self).classify(premise, hypothesis)
    }
}

/// One row of a side-by-side scorer comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityRow {
    pub premise: String,
    pub hypothesis: String,
    pub left: NliLabel,
    pub right: NliLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityReport {
    pub rows: Vec<ParityRow>,
    pub divergent: usize,
}

/// Runs two scorers over the same pairs and reports where their labels differ.
pub fn parity_report(
    pairs: &[(String, String)],
    left: &dyn NliScorer,
    right: &dyn NliScorer,
) -> Result<ParityReport, BackendError> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (premise, hypothesis) in pairs {
        let l = left.classify(premise, hypothesis)?.label();
        let r = right.classify(premise, hypothesis)?.label();
        if l != r {
            log::info!("nli divergence: {l} vs {r} for {premise:?} => {hypothesis:?}");
        }
        rows.push(ParityRow {
            premise: premise.clone(),
            hypothesis: hypothesis.clone(),
            left: l,
            right: r,
        });
    }
    let divergent = rows.iter().filter(|r| r.left != r.right).count();
    Ok(ParityReport { rows, divergent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_must_normalize() {
        let ok = NliDistribution {
            entailment: 0.7,
            neutral: 0.2,
            contradiction: 0.1,
        };
        assert!(ok.validate().is_ok());
        let bad = NliDistribution {
            entailment: 0.7,
            neutral: 0.2,
            contradiction: 0.2,
        };
        match bad.validate() {
            Err(BackendError::Protocol { field, .. }) => assert_eq!(field, "probabilities"),
            other => panic!("{other:?}"),
        }
        let negative = NliDistribution {
            entailment: 1.1,
            neutral: -0.1,
            contradiction: 0.0,
        };
        assert!(matches!(
            negative.validate(),
            Err(BackendError::Protocol { field, .. }) if field == "probabilities.entailment"
        ));
    }

    #[test]
    fn argmax_tie_break() {
        let tie = NliDistribution {
            entailment: 0.5,
            neutral: 0.5,
            contradiction: 0.0,
        };
        assert_eq!(tie.label(), NliLabel::Entailment);
        let c = NliDistribution {
            entailment: 0.1,
            neutral: 0.2,
            contradiction: 0.7,
        };
        assert_eq!(c.label(), NliLabel::Contradiction);
    }

    #[test]
    fn verdict_flag_tracks_categories() {
        assert!(!ModerationVerdict::clean().flagged);
        let v = ModerationVerdict::from_categories(vec!["hate".into(), "hate".into()]);
        assert!(v.flagged);
        assert_eq!(v.categories, vec!["hate"]);
    }

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::generation("hi").validate().is_ok());
        assert!(CompletionRequest::generation("  ").validate().is_err());
        let mut r = CompletionRequest::generation("hi");
        r.max_tokens = 0;
        assert!(r.validate().is_err());
        assert_eq!(CompletionRequest::classification("x").temperature, 0.0);
        assert_eq!(CompletionRequest::generation("x").temperature, 1.0);
    }
}
