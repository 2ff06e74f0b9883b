//! Chat-completion clients and the record/replay store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{PromptPayload, SamplingParams};
use crate::http::{HttpFailure, JsonPoster};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("chat transport error (retryable): {0}")]
    Transport(String),
    #[error("chat endpoint rejected the request: {0}")]
    Api(String),
    #[error("replay store has no response for request {key}")]
    CacheMiss { key: String },
    #[error("replay store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

/// Anything that turns a prompt into assistant text.
pub trait ChatClient: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, payload: &PromptPayload) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatConfig {
    /// OpenAI-compatible `/chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Minimum spacing between requests across all threads; 0 disables it.
    pub min_interval_ms: u64,
    /// Many hosted APIs reject `top_k`, so it is only sent on request.
    pub send_top_k: bool,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "KGMATCH_LLM_API_KEY".into(),
            timeout_s: 60.0,
            retries: 3,
            backoff_ms: 500,
            min_interval_ms: 0,
            send_top_k: false,
        }
    }
}

/// Spaces out request starts by a fixed interval.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(interval: Duration) -> Self {
        RateLimiter {
            interval,
            next_slot: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        std::thread::sleep(wait);
    }
}

#[derive(Debug)]
pub struct HttpChatClient {
    config: ChatConfig,
    api_key: Option<String>,
    poster: JsonPoster,
    limiter: RateLimiter,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let poster = JsonPoster::new(
            Duration::from_secs_f64(config.timeout_s),
            config.retries,
            Duration::from_millis(config.backoff_ms),
        );
        let limiter = RateLimiter::new(Duration::from_millis(config.min_interval_ms));
        HttpChatClient {
            config,
            api_key,
            poster,
            limiter,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, payload: &PromptPayload) -> Result<String, LlmError> {
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![
                Message {
                    role: "system",
                    content: &payload.system_text,
                },
                Message {
                    role: "user",
                    content: &payload.user_text,
                },
            ],
            temperature: payload.params.temperature,
            top_p: payload.params.top_p,
            max_tokens: payload.params.max_new_tokens,
            top_k: self.config.send_top_k.then_some(payload.params.top_k),
        };
        self.limiter.acquire();
        let body = self
            .poster
            .post(&self.config.endpoint, self.api_key.as_deref(), &request)
            .map_err(|e| match e {
                HttpFailure::Retryable(m) => LlmError::Transport(m),
                HttpFailure::Fatal(m) => LlmError::Api(m),
            })?;
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::Api(format!("response has no choices[0].message.content: {body}")))
    }
}

/// Hex SHA-256 over the model name, both prompt texts and the sampling
/// parameters.
pub fn request_key(model: &str, payload: &PromptPayload) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        model: &'a str,
        system: &'a str,
        user: &'a str,
        params: &'a SamplingParams,
    }
    let fields = KeyFields {
        model,
        system: &payload.system_text,
        user: &payload.user_text,
        params: &payload.params,
    };
    let bytes = serde_json::to_vec(&fields).expect("key fields serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Serve stored responses and record misses from the live client.
    Record,
    /// Serve stored responses only; a miss is an error.
    #[default]
    Replay,
    /// Always call the live client; the store is not touched.
    Live,
}

impl std::str::FromStr for ReplayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown replay mode `{other}` (expected record|replay|live)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredResponse {
    key: String,
    response: String,
}

/// Wraps a live client with an append-only JSONL response store.
pub struct ReplayClient {
    mode: ReplayMode,
    model: String,
    live: Option<Box<dyn ChatClient>>,
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl std::fmt::Debug for ReplayClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplayClient")
            .field("mode", &self.mode)
            .field("model", &self.model)
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

impl ReplayClient {
    /// Opens the store at `path`. `live` is required for record and live
    /// modes; `model` keys stored responses in replay mode.
    pub fn open(
        path: &Path,
        mode: ReplayMode,
        model: &str,
        live: Option<Box<dyn ChatClient>>,
    ) -> Result<Self, LlmError> {
        let io = |source| LlmError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = HashMap::new();
        if mode != ReplayMode::Live && path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoredResponse>(&line) {
                    Ok(r) => {
                        entries.insert(r.key, r.response);
                    }
                    Err(e) => log::warn!("{}:{}: skipping bad replay entry: {e}", path.display(), line_no + 1),
                }
            }
        }
        Ok(ReplayClient {
            mode,
            model: live.as_ref().map_or_else(|| model.to_string(), |c| c.model().to_string()),
            live,
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().map_or(0, |e| e.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn live(&self) -> Result<&dyn ChatClient, LlmError> {
        self.live
            .as_deref()
            .ok_or_else(|| LlmError::Api("no live chat client configured".into()))
    }

    fn append(&self, key: &str, response: &str) -> Result<(), LlmError> {
        let io = |source| LlmError::Io {
            path: self.path.clone(),
            source,
        };
        let mut writer = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if writer.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
            *writer = Some(file);
        }
        let mut line = serde_json::to_string(&StoredResponse {
            key: key.to_string(),
            response: response.to_string(),
        })
        .expect("stored response serializes");
        line.push('\n');
        let file = writer.as_mut().expect("writer opened above");
        file.write_all(line.as_bytes()).map_err(io)?;
        file.flush().map_err(io)
    }
}

impl ChatClient for ReplayClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, payload: &PromptPayload) -> Result<String, LlmError> {
        if self.mode == ReplayMode::Live {
            return self.live()?.complete(payload);
        }
        let key = request_key(&self.model, payload);
        if let Some(hit) = self.entries.read().ok().and_then(|e| e.get(&key).cloned()) {
            return Ok(hit);
        }
        if self.mode == ReplayMode::Replay {
            return Err(LlmError::CacheMiss { key });
        }
        let response = self.live()?.complete(payload)?;
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        if !entries.contains_key(&key) {
            self.append(&key, &response)?;
            entries.insert(key, response.clone());
        }
        Ok(response)
    }
}
