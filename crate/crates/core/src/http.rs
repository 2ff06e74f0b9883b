//! Blocking JSON-over-HTTP with bounded retries, shared by the embedding
//! and chat clients.

use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HttpFailure {
    /// Connection, timeout, 429 or 5xx after the last attempt.
    Retryable(String),
    /// Any other non-success status, or an undecodable body.
    Fatal(String),
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Retryable(m) | HttpFailure::Fatal(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct JsonPoster {
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
}

impl JsonPoster {
    pub fn new(timeout: Duration, retries: u32, backoff: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonPoster {
            agent,
            retries,
            backoff,
        }
    }

    /// Posts `body` and decodes a JSON response, retrying retryable
    /// failures up to the configured count with exponential backoff.
    pub fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &impl Serialize,
    ) -> Result<serde_json::Value, HttpFailure> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, api_key, body) {
                Err(HttpFailure::Retryable(msg)) if attempt < self.retries => {
                    let delay = self.backoff * 2u32.saturating_pow(attempt);
                    log::warn!("request to {url} failed ({msg}); retry {} in {delay:?}", attempt + 1);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &impl Serialize,
    ) -> Result<serde_json::Value, HttpFailure> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| HttpFailure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| HttpFailure::Retryable(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| HttpFailure::Fatal(format!("invalid JSON response: {e}"))),
            429 | 500..=599 => Err(HttpFailure::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(HttpFailure::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}
