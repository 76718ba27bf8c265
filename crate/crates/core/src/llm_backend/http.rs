use std::fmt;
use std::sync::OnceLock;
use std::time::Duration;

use serde_json::Value;

use super::retry::{Transport, TransportFailure};
use super::{BackendConfig, BackendError};

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Blocking HTTP transport with bearer authentication.
///
/// The underlying client is created on first use so that the transport can be
/// constructed inside an async runtime and used from blocking worker threads.
#[derive(Debug)]
pub struct HttpTransport {
    base: String,
    key: Option<ApiKey>,
    timeout: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    /// Reads the API key from the environment variable named in the config.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| {
            BackendError::Config(format!("environment variable {} is not set", cfg.api_key_env))
        })?;
        if key.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "environment variable {} is empty",
                cfg.api_key_env
            )));
        }
        Ok(Self::new(&cfg.endpoint, Some(key), cfg.timeout()))
    }

    pub fn new(base: &str, key: Option<String>, timeout: Duration) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            key: key.map(ApiKey),
            timeout,
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("http client construction")
        })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportFailure> {
        let url = format!("{}{}", self.base, path);
        let mut request = self.client().post(&url).json(body);
        if let Some(ApiKey(key)) = &self.key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout
            } else {
                TransportFailure::Connection(e.without_url().to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout
            } else {
                TransportFailure::Connection(e.without_url().to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportFailure::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportFailure::Decode(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_output_redacts_key() {
        let t = HttpTransport::new(
            "http://x/v1/",
            Some("sk-secret-123".into()),
            Duration::from_secs(1),
        );
        let shown = format!("{t:?}");
        assert!(!shown.contains("sk-secret-123"));
        assert!(shown.contains("redacted"));
        assert_eq!(t.base, "http://x/v1");
    }

    #[test]
    fn unreachable_host_is_retriable() {
        let t = HttpTransport::new("http://127.0.0.1:9", None, Duration::from_millis(500));
        let err = t
            .post_json("/chat/completions", &serde_json::json!({}))
            .unwrap_err();
        assert!(err.is_retriable(), "{err:?}");
    }
}
