//! Blocking JSON-over-HTTP client with bounded exponential-backoff retries,
//! shared by the remote chat and embedding backends.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

const BODY_EXCERPT_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
    /// Per-attempt timeout.
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(8),
            timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (attempts are 1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, body: String, attempts: u32 },
    #[error("invalid response body: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Transport { .. } => true,
            HttpError::Status { status, .. } => is_retryable_status(*status),
            HttpError::Decode(_) => false,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            HttpError::Transport { attempts, .. } | HttpError::Status { attempts, .. } => *attempts,
            HttpError::Decode(_) => 1,
        }
    }
}

fn is_retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT_CHARS).collect()
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
    api_key: Option<String>,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            policy,
            api_key,
        }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn post(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let err = match self.try_post(url, body, attempt) {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            if !err.is_retryable() || attempt >= self.policy.max_attempts {
                return Err(err);
            }
            let delay = self.policy.backoff(attempt);
            tracing::warn!(%url, attempt, ?delay, error = %err, "retrying request");
            std::thread::sleep(delay);
        }
    }

    fn try_post(&self, url: &str, body: &Value, attempt: u32) -> Result<Value, HttpError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| HttpError::Transport {
            attempts: attempt,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| HttpError::Transport {
                attempts: attempt,
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(HttpError::Status {
                status,
                body: excerpt(&text),
                attempts: attempt,
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode(format!("{e}: {}", excerpt(&text))))
    }
}

/// Joins a base URL and an API path without doubling the `/v1` segment.
pub fn endpoint(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/v1") && path.starts_with("/v1/") {
        format!("{base}{}", &path[3..])
    } else {
        format!("{base}{path}")
    }
}
