use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::api::{ApiBackend, SharedBackend};
use super::http::HttpTransport;
use super::mock::ScriptedTransport;
use super::retry::Transport;
use super::BackendError;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Openai,
    Mock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// JSONL script of [`super::ScriptEntry`] lines.
    pub script: Option<PathBuf>,
    pub blocklist: Vec<String>,
    pub latency_ms: u64,
}

/// Backend settings, usually loaded from TOML. Holds the *name* of the
/// environment variable carrying the API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub api_key_env: String,
    pub model: String,
    pub moderation_model: Option<String>,
    pub max_concurrency: usize,
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
    pub requests_per_minute: Option<u32>,
    pub timeout_ms: u64,
    pub mock: MockConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Openai,
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model: DEFAULT_MODEL.into(),
            moderation_model: None,
            max_concurrency: 4,
            retry_limit: 3,
            backoff_base_ms: 500,
            max_backoff_ms: 30_000,
            requests_per_minute: None,
            timeout_ms: 60_000,
            mock: MockConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            backoff_base_ms: 1,
            max_backoff_ms: 10,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BackendError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| BackendError::Config(format!("invalid toml: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML file; a relative mock script path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(script), Some(dir)) = (&cfg.mock.script, path.parent()) {
            if script.is_relative() {
                cfg.mock.script = Some(dir.join(script));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_concurrency < 1 {
            return Err(BackendError::Config("max_concurrency must be at least 1".into()));
        }
        if self.kind == BackendKind::Openai {
            reqwest::Url::parse(&self.endpoint).map_err(|e| {
                BackendError::Config(format!("endpoint {:?} is not a URL: {e}", self.endpoint))
            })?;
            if self.api_key_env.trim().is_empty() {
                return Err(BackendError::Config("api_key_env is empty".into()));
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Instantiates the configured backend.
    pub fn build(&self) -> Result<Arc<SharedBackend>, BackendError> {
        self.validate()?;
        let transport: Arc<dyn Transport> = match self.kind {
            BackendKind::Openai => Arc::new(HttpTransport::from_config(self)?),
            BackendKind::Mock => {
                let mut mock = match &self.mock.script {
                    Some(path) => ScriptedTransport::from_jsonl_file(path)?,
                    None => ScriptedTransport::new(Vec::new()),
                };
                mock = mock.with_blocklist(self.mock.blocklist.clone());
                if self.mock.latency_ms > 0 {
                    mock = mock.with_latency(Duration::from_millis(self.mock.latency_ms));
                }
                Arc::new(mock)
            }
        };
        Ok(Arc::new(ApiBackend::new(transport, self)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_fill_in() {
        let cfg = BackendConfig::from_toml_str("max_concurrency = 8\nrequests_per_minute = 60\n").unwrap();
        assert_eq!(cfg.max_concurrency, 8);
        assert_eq!(cfg.requests_per_minute, Some(60));
        assert_eq!(cfg.model, DEFAULT_MODEL);
        assert_eq!(cfg.api_key_env, "OPENAI_API_KEY");
    }

    #[test]
    fn zero_concurrency_rejected() {
        assert!(matches!(
            BackendConfig::from_toml_str("max_concurrency = 0"),
            Err(BackendError::Config(_))
        ));
    }

    #[test]
    fn mock_section_parses() {
        let cfg =
            BackendConfig::from_toml_str("kind = \"mock\"\n[mock]\nblocklist = [\"KILLWORD\"]\n").unwrap();
        assert_eq!(cfg.kind, BackendKind::Mock);
        assert_eq!(cfg.mock.blocklist, vec!["KILLWORD"]);
        cfg.build().unwrap();
    }

    #[test]
    fn missing_api_key_is_config_error() {
        let cfg = BackendConfig {
            api_key_env: "FORGE_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..BackendConfig::default()
        };
        assert!(matches!(cfg.build(), Err(BackendError::Config(_))));
    }
}
