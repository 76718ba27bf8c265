use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::limiter::{Clock, ConcurrencyLimiter, RateLimiter, SystemClock};
use super::retry::{Exchange, RetryPolicy, Transport};
use super::{
    BackendConfig, BackendError, CompletionRequest, CompletionResponse, FinishReason, LlmBackend,
    ModerationVerdict, NliDistribution, NliScorer, Usage, DEFAULT_MODEL,
};

const CHAT_PATH: &str = "/chat/completions";
const MODERATION_PATH: &str = "/moderations";
const NLI_PATH: &str = "/nli";

/// Backend speaking the OpenAI chat-completions and moderation schema, plus a
/// small `/nli` extension, over any [`Transport`].
pub struct ApiBackend<T> {
    transport: T,
    model: String,
    moderation_model: Option<String>,
    retry: RetryPolicy,
    rate: RateLimiter,
    concurrency: ConcurrencyLimiter,
    clock: Arc<dyn Clock>,
}

pub type SharedBackend = ApiBackend<Arc<dyn Transport>>;

impl<T: Transport> ApiBackend<T> {
    pub fn new(transport: T, cfg: &BackendConfig) -> Self {
        Self::with_clock(transport, cfg, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(transport: T, cfg: &BackendConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            transport,
            model: cfg.model.clone(),
            moderation_model: cfg.moderation_model.clone(),
            retry: RetryPolicy {
                retry_limit: cfg.retry_limit,
                backoff_base: Duration::from_millis(cfg.backoff_base_ms),
                max_backoff: Duration::from_millis(cfg.max_backoff_ms),
            },
            rate: RateLimiter::new(cfg.requests_per_minute, clock.clone()),
            concurrency: ConcurrencyLimiter::new(cfg.max_concurrency),
            clock,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn max_concurrency(&self) -> usize {
        self.concurrency.max()
    }

    /// Sends one JSON request with pacing, the in-flight ceiling and retries.
    pub fn execute(&self, path: &str, body: &Value) -> Result<Exchange, BackendError> {
        self.retry.run(self.clock.as_ref(), || {
            self.rate.acquire();
            let _permit = self.concurrency.acquire();
            self.transport.post_json(path, body)
        })
    }

    /// Like [`LlmBackend::complete`] but also returns the attempt log.
    pub fn complete_logged(
        &self,
        req: &CompletionRequest,
    ) -> Result<(CompletionResponse, Exchange), BackendError> {
        req.validate()?;
        let model = req.model_hint.as_deref().unwrap_or(&self.model);
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        let exchange = self.execute(CHAT_PATH, &body)?;
        let response = decode_completion(&exchange.body)?;
        Ok((response, exchange))
    }

    /// Three-way NLI distribution for a premise/hypothesis pair.
    pub fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::InvalidRequest("nli texts must be non-empty".into()));
        }
        let body = json!({"premise": premise, "hypothesis": hypothesis});
        let exchange = self.execute(NLI_PATH, &body)?;
        decode_nli(&exchange.body)
    }
}

fn protocol(field: &str, detail: impl Into<String>) -> BackendError {
    BackendError::Protocol {
        field: field.into(),
        detail: detail.into(),
    }
}

fn decode_completion(body: &Value) -> Result<CompletionResponse, BackendError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("choices", "missing or not an array"))?
        .first()
        .ok_or_else(|| protocol("choices", "empty"))?;
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Complete,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let usage = body
        .get("usage")
        .map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
            total_tokens: u.get("total_tokens").and_then(Value::as_u64).unwrap_or(0),
        })
        .unwrap_or_default();
    if finish == FinishReason::Error {
        return Ok(CompletionResponse {
            text: None,
            finish_reason: finish,
            usage,
        });
    }
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("choices[0].message.content", "missing or not a string"))?;
    Ok(CompletionResponse::text(text, finish, usage))
}

fn decode_moderation(body: &Value, expected: usize) -> Result<Vec<ModerationVerdict>, BackendError> {
    let results = body
        .get("results")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("results", "missing or not an array"))?;
    if results.len() != expected {
        return Err(protocol(
            "results",
            format!("expected {expected} results, got {}", results.len()),
        ));
    }
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let flagged = r
                .get("flagged")
                .and_then(Value::as_bool)
                .ok_or_else(|| protocol(&format!("results[{i}].flagged"), "missing or not a bool"))?;
            let mut categories: Vec<String> = r
                .get("categories")
                .and_then(Value::as_object)
                .map(|cats| {
                    cats.iter()
                        .filter(|(_, v)| v.as_bool() == Some(true))
                        .map(|(k, _)| k.clone())
                        .collect()
                })
                .unwrap_or_default();
            if flagged && categories.is_empty() {
                categories.push("unspecified".into());
            }
            Ok(ModerationVerdict::from_categories(categories))
        })
        .collect()
}

fn decode_nli(body: &Value) -> Result<NliDistribution, BackendError> {
    let probs = body
        .get("probabilities")
        .ok_or_else(|| protocol("probabilities", "missing"))?;
    let get = |name: &str| {
        probs
            .get(name)
            .and_then(Value::as_f64)
            .ok_or_else(|| protocol(&format!("probabilities.{name}"), "missing or not a number"))
    };
    let dist = NliDistribution {
        entailment: get("entailment")?,
        neutral: get("neutral")?,
        contradiction: get("contradiction")?,
    };
    dist.validate()?;
    Ok(dist)
}

impl<T: Transport> LlmBackend for ApiBackend<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.complete_logged(req).map(|(resp, _)| resp)
    }

    fn moderate_batch(&self, texts: &[String]) -> Result<Vec<ModerationVerdict>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(BackendError::InvalidRequest(format!(
                "moderation input {i} is empty"
            )));
        }
        let mut body = json!({ "input": texts });
        if let Some(model) = &self.moderation_model {
            body["model"] = json!(model);
        }
        let exchange = self.execute(MODERATION_PATH, &body)?;
        decode_moderation(&exchange.body, texts.len())
    }

    fn describe(&self) -> String {
        if self.model.is_empty() {
            DEFAULT_MODEL.to_string()
        } else {
            self.model.clone()
        }
    }
}

impl<T: Transport> NliScorer for ApiBackend<T> {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        self.nli_classify(premise, hypothesis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::{ManualClock, ScriptEntry, ScriptedTransport};

    fn cfg() -> BackendConfig {
        BackendConfig {
            retry_limit: 3,
            backoff_base_ms: 10,
            ..BackendConfig::mock()
        }
    }

    fn backend(entries: Vec<ScriptEntry>) -> ApiBackend<ScriptedTransport> {
        ApiBackend::with_clock(
            ScriptedTransport::new(entries),
            &cfg(),
            Arc::new(ManualClock::new()),
        )
    }

    #[test]
    fn queue_replays_in_order() {
        let b = backend(vec![ScriptEntry::completion("r1"), ScriptEntry::completion("r2")]);
        let req = CompletionRequest::generation("p");
        assert_eq!(b.complete(&req).unwrap().text.as_deref(), Some("r1"));
        assert_eq!(b.complete(&req).unwrap().text.as_deref(), Some("r2"));
        assert!(matches!(b.complete(&req), Err(BackendError::Request { .. })));
    }

    #[test]
    fn retries_through_scripted_429s() {
        let b = backend(vec![
            ScriptEntry::failure(429),
            ScriptEntry::failure(429),
            ScriptEntry::completion("finally"),
        ]);
        let (resp, exchange) = b.complete_logged(&CompletionRequest::generation("p")).unwrap();
        assert_eq!(resp.text.as_deref(), Some("finally"));
        assert_eq!(exchange.attempts.len(), 3);
    }

    #[test]
    fn moderation_blocklist() {
        let b = ApiBackend::new(
            ScriptedTransport::new(vec![]).with_blocklist(vec!["KILLWORD".into()]),
            &cfg(),
        );
        assert!(!b.moderate("a harmless line").unwrap().flagged);
        let v = b.moderate("this has KILLWORD inside").unwrap();
        assert!(v.flagged);
        assert_eq!(v.categories, vec!["blocklist"]);
    }

    #[test]
    fn moderation_batch_preserves_order() {
        let b = ApiBackend::new(
            ScriptedTransport::new(vec![]).with_blocklist(vec!["KILLWORD".into()]),
            &cfg(),
        );
        let texts: Vec<String> = (0..100)
            .map(|i| {
                if i % 7 == 3 {
                    format!("{i} KILLWORD")
                } else {
                    format!("{i} fine")
                }
            })
            .collect();
        let verdicts = b.moderate_batch(&texts).unwrap();
        assert_eq!(verdicts.len(), 100);
        for (i, v) in verdicts.iter().enumerate() {
            assert_eq!(v.flagged, i % 7 == 3, "index {i}");
        }
    }

    #[test]
    fn scripted_nli_and_normalization_check() {
        let b = backend(vec![
            ScriptEntry::nli(0.8, 0.15, 0.05),
            ScriptEntry::nli(0.8, 0.15, 0.5),
        ]);
        let d = b.nli_classify("p", "h").unwrap();
        assert_eq!(d.entailment, 0.8);
        assert!(matches!(
            b.nli_classify("p", "h"),
            Err(BackendError::Protocol { field, .. }) if field == "probabilities"
        ));
    }

    #[test]
    fn malformed_completion_names_field() {
        let err = decode_completion(&json!({"choices": [{"message": {}}]})).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { field, .. } if field == "choices[0].message.content"));
        let err = decode_completion(&json!({})).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { field, .. } if field == "choices"));
    }

    #[test]
    fn finish_reason_mapping() {
        let r = decode_completion(&json!({
            "choices": [{"message": {"content": "cut"}, "finish_reason": "length"}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 4, "total_tokens": 7}
        }))
        .unwrap();
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.usage.total_tokens, 7);
        let e = decode_completion(&json!({"choices": [{"finish_reason": "content_filter"}]})).unwrap();
        assert_eq!(e.finish_reason, FinishReason::Error);
        assert!(e.text.is_none());
    }

    #[test]
    fn moderation_count_mismatch_is_protocol_error() {
        let err = decode_moderation(&json!({"results": []}), 2).unwrap_err();
        assert!(matches!(err, BackendError::Protocol { field, .. } if field == "results"));
    }

    #[test]
    fn in_flight_ceiling_holds_under_load() {
        let mut c = cfg();
        c.max_concurrency = 3;
        let transport = ScriptedTransport::new(vec![ScriptEntry::completion("x").repeating()])
            .with_latency(Duration::from_millis(3));
        let b = Arc::new(ApiBackend::new(transport, &c));
        std::thread::scope(|s| {
            for _ in 0..16 {
                let b = b.clone();
                s.spawn(move || {
                    for _ in 0..4 {
                        b.complete(&CompletionRequest::generation("p")).unwrap();
                    }
                });
            }
        });
        assert_eq!(b.transport().calls(), 64);
        assert!(b.transport().peak_in_flight() <= 3);
        assert!(b.transport().peak_in_flight() >= 2, "load should overlap");
    }
}
