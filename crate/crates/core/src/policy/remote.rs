//! HTTP client for a text-completion endpoint.
//!
//! One POST per query with body `{"model", "prompt", "temperature", "n": 1}`.
//! The completion text is looked up under `text`, `completion`, `output`,
//! `choices[0].text` or `choices[0].message.content`, which covers the usual
//! completion and chat-completion response shapes.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{PolicyError, SampleFailure};
use crate::tokenizer::decode_trajectory;
use crate::types::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Extra attempts after the first one, for transport failures and malformed answers alike.
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Instruction preamble file; the built-in text is used when absent.
    pub preamble_path: Option<PathBuf>,
    /// JSONL audit log of every request and response.
    pub log_queries: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "default".into(),
            temperature: 1.0,
            timeout_secs: 60.0,
            max_retries: 2,
            api_key_env: "RIP_API_KEY".into(),
            preamble_path: None,
            log_queries: None,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        if self.endpoint.is_empty() {
            return Err("endpoint URL is empty".into());
        }
        Ok(())
    }
}

/// Shareable client; one instance serves all concurrent queries.
pub struct RemoteClient {
    http: reqwest::blocking::Client,
    config: RemoteConfig,
    api_key: Option<String>,
    audit: Option<Mutex<File>>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        config.validate().map_err(PolicyError::Config)?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Config(format!("http client: {e}")))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let audit = match &config.log_queries {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| PolicyError::Config(format!("{}: {e}", path.display())))?,
            )),
            None => None,
        };
        Ok(Self { http, config, api_key, audit })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Runs query `index` with retries. Returns the trajectory and the attempt count.
    pub fn query(&self, prompt: &str, index: usize) -> (Result<Trajectory, SampleFailure>, u32) {
        let attempts = self.config.max_retries + 1;
        let mut last = SampleFailure::Transport(String::new());
        for attempt in 1..=attempts {
            let outcome = self.post(prompt).and_then(|text| {
                self.log(index, attempt, prompt, Ok(&text));
                decode_trajectory(&text).map_err(|e| SampleFailure::Malformed(e.to_string()))
            });
            match outcome {
                Ok(t) => return (Ok(t), attempt),
                Err(failure) => {
                    if let SampleFailure::Transport(msg) = &failure {
                        self.log(index, attempt, prompt, Err(msg));
                    }
                    last = failure;
                }
            }
        }
        (Err(last), attempts)
    }

    fn post(&self, prompt: &str) -> Result<String, SampleFailure> {
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "temperature": self.config.temperature,
            "n": 1,
        });
        let mut request = self.http.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| SampleFailure::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(SampleFailure::Transport(format!("HTTP {status}")));
        }
        let value: Value = response.json().map_err(|e| SampleFailure::Malformed(format!("response is not JSON: {e}")))?;
        completion_text(&value).map(str::to_owned).ok_or_else(|| SampleFailure::Malformed("no completion text in response".into()))
    }

    fn log(&self, index: usize, attempt: u32, prompt: &str, outcome: Result<&str, &str>) {
        let Some(audit) = &self.audit else { return };
        let record = match outcome {
            Ok(text) => json!({"query": index, "attempt": attempt, "model": self.config.model, "prompt": prompt, "response": text}),
            Err(error) => json!({"query": index, "attempt": attempt, "model": self.config.model, "prompt": prompt, "error": error}),
        };
        let mut file = audit.lock().unwrap_or_else(|p| p.into_inner());
        // Audit logging is best effort; a full disk must not fail the query.
        let _ = writeln!(file, "{record}");
    }
}

pub fn completion_text(value: &Value) -> Option<&str> {
    for key in ["text", "completion", "output"] {
        if let Some(s) = value.get(key).and_then(Value::as_str) {
            return Some(s);
        }
    }
    let choice = value.get("choices")?.get(0)?;
    choice
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| choice.get("message")?.get("content")?.as_str())
}
