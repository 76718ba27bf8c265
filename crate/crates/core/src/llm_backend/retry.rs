use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::limiter::Clock;
use super::BackendError;

/// Request/response exchange with a JSON service.
pub trait Transport: Send + Sync {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportFailure>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportFailure> {
        (**self).post_json(path, body)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportFailure> {
        (**self).post_json(path, body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Status {
        code: u16,
        body: String,
    },
    Timeout,
    Connection(String),
    /// The peer answered 2xx with a body that is not JSON.
    Decode(String),
}

impl TransportFailure {
    /// 429, 5xx, timeouts and connection failures are worth retrying.
    pub fn is_retriable(&self) -> bool {
        match self {
            TransportFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportFailure::Timeout | TransportFailure::Connection(_) => true,
            TransportFailure::Decode(_) => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            TransportFailure::Status { code, .. } => format!("http {code}"),
            TransportFailure::Timeout => "timeout".into(),
            TransportFailure::Connection(msg) => format!("connection: {msg}"),
            TransportFailure::Decode(msg) => format!("decode: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub outcome: String,
    /// Backoff slept after this attempt before the next one.
    pub backoff_ms: u64,
}

/// A successful call together with the attempts it took.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub body: Value,
    pub attempts: Vec<AttemptRecord>,
}

/// Exponential backoff: `base * 2^(k-1)` after failed attempt `k`, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub backoff_base: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    pub fn backoff(&self, failed_attempt: u32) -> Duration {
        let shift = failed_attempt.saturating_sub(1).min(30);
        self.backoff_base
            .saturating_mul(1u32 << shift)
            .min(self.max_backoff)
    }

    /// Runs `call` until it succeeds, fails permanently, or exhausts
    /// `retry_limit` retries (so at most `retry_limit + 1` attempts).
    pub fn run<F>(&self, clock: &dyn Clock, mut call: F) -> Result<Exchange, BackendError>
    where
        F: FnMut() -> Result<Value, TransportFailure>,
    {
        let mut attempts = Vec::new();
        for attempt in 1..=self.retry_limit + 1 {
            match call() {
                Ok(body) => {
                    attempts.push(AttemptRecord {
                        attempt,
                        outcome: "ok".into(),
                        backoff_ms: 0,
                    });
                    return Ok(Exchange { body, attempts });
                }
                Err(failure) if failure.is_retriable() => {
                    let last = attempt > self.retry_limit;
                    let delay = if last {
                        Duration::ZERO
                    } else {
                        self.backoff(attempt)
                    };
                    log::warn!(
                        "attempt {attempt} failed ({}), backing off {delay:?}",
                        failure.describe()
                    );
                    attempts.push(AttemptRecord {
                        attempt,
                        outcome: failure.describe(),
                        backoff_ms: delay.as_millis() as u64,
                    });
                    if !last {
                        clock.sleep(delay);
                    }
                }
                Err(TransportFailure::Status { code, body }) => {
                    return Err(BackendError::Request {
                        status: code,
                        message: truncate(&body, 512),
                    });
                }
                Err(TransportFailure::Decode(detail)) => {
                    return Err(BackendError::Protocol {
                        field: "body".into(),
                        detail,
                    });
                }
                Err(other) => unreachable!("non-retriable failure {other:?}"),
            }
        }
        Err(BackendError::Transport { attempts })
    }
}

fn truncate(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((idx, _)) => format!("{}…", &text[..idx]),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::ManualClock;
    use serde_json::json;

    fn policy(limit: u32) -> RetryPolicy {
        RetryPolicy {
            retry_limit: limit,
            backoff_base: Duration::from_millis(100),
            max_backoff: Duration::from_millis(1000),
        }
    }

    #[test]
    fn two_429s_then_success() {
        let clock = ManualClock::new();
        let mut script = vec![
            Err(TransportFailure::Status {
                code: 429,
                body: String::new(),
            }),
            Err(TransportFailure::Status {
                code: 429,
                body: String::new(),
            }),
            Ok(json!({"ok": true})),
        ]
        .into_iter();
        let ex = policy(3).run(&clock, || script.next().unwrap()).unwrap();
        assert_eq!(ex.attempts.len(), 3);
        assert_eq!(ex.body, json!({"ok": true}));
        assert_eq!(
            clock.sleeps(),
            vec![Duration::from_millis(100), Duration::from_millis(200)]
        );
    }

    #[test]
    fn exhaustion_carries_log() {
        let clock = ManualClock::new();
        let err = policy(2)
            .run(&clock, || Err(TransportFailure::Timeout))
            .unwrap_err();
        match err {
            BackendError::Transport { attempts } => {
                assert_eq!(attempts.len(), 3);
                assert!(attempts.iter().all(|a| a.outcome == "timeout"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(clock.sleeps().len(), 2);
    }

    #[test]
    fn client_errors_are_permanent() {
        let clock = ManualClock::new();
        let mut calls = 0;
        let err = policy(5)
            .run(&clock, || {
                calls += 1;
                Err(TransportFailure::Status {
                    code: 400,
                    body: "bad".into(),
                })
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, BackendError::Request { status: 400, .. }));
        assert!(!err.is_retriable());
    }

    #[test]
    fn zero_retry_limit_means_single_attempt() {
        let clock = ManualClock::new();
        let mut calls = 0;
        let _ = policy(0).run(&clock, || {
            calls += 1;
            Err(TransportFailure::Status {
                code: 503,
                body: String::new(),
            })
        });
        assert_eq!(calls, 1);
    }

    #[test]
    fn backoff_is_monotone_and_capped() {
        let p = policy(20);
        let delays: Vec<_> = (1..=20).map(|k| p.backoff(k)).collect();
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), Duration::from_millis(1000));
    }
}
