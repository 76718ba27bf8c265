//! Deterministic scripted stand-in for a chat-completions service.
//!
//! A script is a JSONL file, one entry per line, tagged by `kind`:
//!
//! ```text
//! {"kind":"completion","text":"[Patient] Hi.\n[Doctor] Hello."}
//! {"kind":"completion","match":"evt-17","text":"...","repeat":true}
//! {"kind":"failure","status":429}
//! {"kind":"failure"}                       (no status: a timeout)
//! {"kind":"nli","entailment":0.8,"neutral":0.15,"contradiction":0.05}
//! ```
//!
//! A completion request consumes the first unconsumed `completion` or
//! `failure` entry whose optional `match` substring occurs in the prompt;
//! `repeat` entries are never consumed. NLI requests draw from `nli` entries
//! the same way, matching against `premise + "\n" + hypothesis`. Moderation
//! flags any input containing a blocklist token. When nothing matches, the
//! call fails permanently with HTTP 410.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::{Transport, TransportFailure};
use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptEntry {
    Completion {
        text: String,
        #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
        matcher: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        repeat: bool,
    },
    Failure {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<u16>,
        #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
        matcher: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        repeat: bool,
    },
    Nli {
        entailment: f64,
        neutral: f64,
        contradiction: f64,
        #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
        matcher: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        repeat: bool,
    },
}

impl ScriptEntry {
    pub fn completion(text: impl Into<String>) -> Self {
        ScriptEntry::Completion {
            text: text.into(),
            matcher: None,
            repeat: false,
        }
    }

    pub fn failure(status: u16) -> Self {
        ScriptEntry::Failure {
            status: Some(status),
            matcher: None,
            repeat: false,
        }
    }

    pub fn timeout() -> Self {
        ScriptEntry::Failure {
            status: None,
            matcher: None,
            repeat: false,
        }
    }

    pub fn nli(entailment: f64, neutral: f64, contradiction: f64) -> Self {
        ScriptEntry::Nli {
            entailment,
            neutral,
            contradiction,
            matcher: None,
            repeat: false,
        }
    }

    /// Restricts the entry to requests containing `needle`.
    pub fn matching(mut self, needle: impl Into<String>) -> Self {
        match &mut self {
            ScriptEntry::Completion { matcher, .. }
            | ScriptEntry::Failure { matcher, .. }
            | ScriptEntry::Nli { matcher, .. } => *matcher = Some(needle.into()),
        }
        self
    }

    pub fn repeating(mut self) -> Self {
        match &mut self {
            ScriptEntry::Completion { repeat, .. }
            | ScriptEntry::Failure { repeat, .. }
            | ScriptEntry::Nli { repeat, .. } => *repeat = true,
        }
        self
    }

    fn matcher(&self) -> Option<&str> {
        match self {
            ScriptEntry::Completion { matcher, .. }
            | ScriptEntry::Failure { matcher, .. }
            | ScriptEntry::Nli { matcher, .. } => matcher.as_deref(),
        }
    }

    fn repeats(&self) -> bool {
        match self {
            ScriptEntry::Completion { repeat, .. }
            | ScriptEntry::Failure { repeat, .. }
            | ScriptEntry::Nli { repeat, .. } => *repeat,
        }
    }

    fn serves_nli(&self) -> bool {
        matches!(self, ScriptEntry::Nli { .. })
    }
}

#[derive(Debug)]
struct Slot {
    entry: ScriptEntry,
    consumed: bool,
}

/// Scripted [`Transport`] with in-flight instrumentation.
#[derive(Debug)]
pub struct ScriptedTransport {
    slots: Mutex<Vec<Slot>>,
    blocklist: Vec<String>,
    latency: Option<Duration>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
    requests: Mutex<Vec<(String, Value)>>,
}

impl ScriptedTransport {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            slots: Mutex::new(
                entries
                    .into_iter()
                    .map(|entry| Slot {
                        entry,
                        consumed: false,
                    })
                    .collect(),
            ),
            blocklist: Vec::new(),
            latency: None,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("mock script line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn from_jsonl_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn with_blocklist(mut self, tokens: Vec<String>) -> Self {
        self.blocklist = tokens;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Every request seen so far, as `(path, body)`.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().unwrap().clone()
    }

    /// Number of consumable entries not yet used.
    pub fn remaining(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .iter()
            .filter(|s| !s.consumed && !s.entry.repeats())
            .count()
    }

    fn take(&self, haystack: &str, nli: bool) -> Option<ScriptEntry> {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots.iter_mut().find(|s| {
            !s.consumed
                && s.entry.serves_nli() == nli
                && s.entry.matcher().is_none_or(|m| haystack.contains(m))
        })?;
        if !slot.entry.repeats() {
            slot.consumed = true;
        }
        Some(slot.entry.clone())
    }

    fn respond(&self, path: &str, body: &Value) -> Result<Value, TransportFailure> {
        match path {
            "/chat/completions" => {
                let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
                match self.take(prompt, false) {
                    Some(ScriptEntry::Completion { text, .. }) => Ok(json!({
                        "choices": [{
                            "index": 0,
                            "message": {"role": "assistant", "content": text},
                            "finish_reason": "stop",
                        }],
                        "usage": {
                            "prompt_tokens": word_count(prompt),
                            "completion_tokens": word_count(&text),
                            "total_tokens": word_count(prompt) + word_count(&text),
                        },
                    })),
                    Some(ScriptEntry::Failure {
                        status: Some(code), ..
                    }) => Err(TransportFailure::Status {
                        code,
                        body: "scripted failure".into(),
                    }),
                    Some(ScriptEntry::Failure { status: None, .. }) => Err(TransportFailure::Timeout),
                    Some(ScriptEntry::Nli { .. }) => unreachable!(),
                    None => Err(exhausted()),
                }
            }
            "/moderations" => {
                let inputs: Vec<&str> = match &body["input"] {
                    Value::String(s) => vec![s.as_str()],
                    Value::Array(items) => items.iter().filter_map(Value::as_str).collect(),
                    _ => Vec::new(),
                };
                let results: Vec<Value> = inputs
                    .iter()
                    .map(|text| {
                        let hit = self.blocklist.iter().any(|tok| text.contains(tok.as_str()));
                        json!({"flagged": hit, "categories": {"blocklist": hit}})
                    })
                    .collect();
                Ok(json!({"id": "modr-mock", "results": results}))
            }
            "/nli" => {
                let key = format!(
                    "{}\n{}",
                    body["premise"].as_str().unwrap_or_default(),
                    body["hypothesis"].as_str().unwrap_or_default()
                );
                match self.take(&key, true) {
                    Some(ScriptEntry::Nli {
                        entailment,
                        neutral,
                        contradiction,
                        ..
                    }) => Ok(json!({"probabilities": {
                        "entailment": entailment,
                        "neutral": neutral,
                        "contradiction": contradiction,
                    }})),
                    _ => Err(exhausted()),
                }
            }
            other => Err(TransportFailure::Status {
                code: 404,
                body: format!("mock has no route {other}"),
            }),
        }
    }
}

fn exhausted() -> TransportFailure {
    TransportFailure::Status {
        code: 410,
        body: "mock script exhausted".into(),
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Transport for ScriptedTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.requests
            .lock()
            .unwrap()
            .push((path.to_string(), body.clone()));
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let result = self.respond(path, body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str) -> Value {
        json!({"messages": [{"role": "user", "content": text}]})
    }

    fn content(v: &Value) -> &str {
        v["choices"][0]["message"]["content"].as_str().unwrap()
    }

    #[test]
    fn jsonl_script_parses_every_kind() {
        let t = ScriptedTransport::from_jsonl(concat!(
            "{\"kind\":\"completion\",\"text\":\"a\"}\n",
            "\n",
            "{\"kind\":\"failure\",\"status\":503}\n",
            "{\"kind\":\"failure\"}\n",
            "{\"kind\":\"nli\",\"entailment\":1,\"neutral\":0,\"contradiction\":0}\n",
            "{\"kind\":\"completion\",\"match\":\"zz\",\"text\":\"b\",\"repeat\":true}\n",
        ))
        .unwrap();
        assert_eq!(t.remaining(), 4);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let err =
            ScriptedTransport::from_jsonl("{\"kind\":\"completion\",\"text\":\"a\"}\n{oops}\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn matchers_route_by_prompt() {
        let t = ScriptedTransport::new(vec![
            ScriptEntry::completion("for-b").matching("beta"),
            ScriptEntry::completion("for-a").matching("alpha"),
            ScriptEntry::completion("fallback").repeating(),
        ]);
        assert_eq!(
            content(&t.post_json("/chat/completions", &prompt("x alpha")).unwrap()),
            "for-a"
        );
        assert_eq!(
            content(&t.post_json("/chat/completions", &prompt("x alpha")).unwrap()),
            "fallback"
        );
        assert_eq!(
            content(&t.post_json("/chat/completions", &prompt("beta")).unwrap()),
            "for-b"
        );
        assert_eq!(t.remaining(), 0);
    }

    #[test]
    fn same_script_same_order_same_output() {
        let script = vec![
            ScriptEntry::completion("1"),
            ScriptEntry::failure(500),
            ScriptEntry::completion("2"),
        ];
        let run = || {
            let t = ScriptedTransport::new(script.clone());
            (0..4)
                .map(|_| t.post_json("/chat/completions", &prompt("p")))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn failure_without_status_is_timeout() {
        let t = ScriptedTransport::new(vec![ScriptEntry::timeout()]);
        assert_eq!(
            t.post_json("/chat/completions", &prompt("p")),
            Err(TransportFailure::Timeout)
        );
    }
}
