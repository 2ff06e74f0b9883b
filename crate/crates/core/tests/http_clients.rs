use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use kgmatch_core::embedding::{EmbeddingError, HttpEmbedder, HttpEmbedderConfig};
use kgmatch_core::generation::{ChatConfig, HttpChatClient, LlmError, SamplingParams};
use kgmatch_core::{ChatClient, EmbeddingProvider, PromptPayload};

/// Serves one scripted `(status, body)` per connection and keeps the
/// request bodies it received.
struct MockServer {
    url: String,
    bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&bodies);
        let handle = std::thread::spawn(move || {
            for (status, body) in script {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap();
                        }
                    }
                }
                let mut request = vec![0; length];
                reader.read_exact(&mut request).unwrap();
                seen.lock().unwrap().push(serde_json::from_slice(&request).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        MockServer {
            url,
            bodies,
            handle: Some(handle),
        }
    }

    fn finish(mut self) -> Vec<serde_json::Value> {
        self.handle.take().unwrap().join().unwrap();
        self.bodies.lock().unwrap().clone()
    }
}

fn chat_config(url: &str, retries: u32) -> ChatConfig {
    ChatConfig {
        endpoint: url.to_string(),
        model: "mock-model".into(),
        api_key_env: "KGMATCH_TEST_UNSET_KEY".into(),
        timeout_s: 5.0,
        retries,
        backoff_ms: 1,
        ..ChatConfig::default()
    }
}

fn payload() -> PromptPayload {
    PromptPayload {
        system_text: "system".into(),
        user_text: "Attribute 1: a\nAttribute 2: b".into(),
        params: SamplingParams::default(),
    }
}

fn reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn chat_retries_transient_failures() {
    let server = MockServer::start(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, reply("1\nsame concept")),
    ]);
    let client = HttpChatClient::new(chat_config(&server.url, 3));
    assert_eq!(client.complete(&payload()).unwrap(), "1\nsame concept");
    let bodies = server.finish();
    assert_eq!(bodies.len(), 3);
    let body = &bodies[2];
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Attribute 1: a\nAttribute 2: b");
    assert_eq!(body["temperature"], 0.6);
    assert_eq!(body["top_p"], 0.9);
    assert_eq!(body["max_tokens"], 4096);
    assert!(body.get("top_k").is_none());
}

#[test]
fn chat_gives_up_after_the_retry_budget() {
    let server = MockServer::start(vec![(500, "{}".into()), (500, "{}".into())]);
    let client = HttpChatClient::new(chat_config(&server.url, 1));
    let err = client.complete(&payload()).unwrap_err();
    assert!(matches!(err, LlmError::Transport(_)), "{err:?}");
    assert_eq!(server.finish().len(), 2);
}

#[test]
fn chat_client_errors_are_not_retried() {
    let server = MockServer::start(vec![(400, r#"{"error":"bad request"}"#.into())]);
    let client = HttpChatClient::new(chat_config(&server.url, 3));
    let err = client.complete(&payload()).unwrap_err();
    assert!(matches!(err, LlmError::Api(_)), "{err:?}");
    assert_eq!(server.finish().len(), 1);
}

#[test]
fn chat_sends_top_k_on_request() {
    let server = MockServer::start(vec![(200, reply("0"))]);
    let config = ChatConfig {
        send_top_k: true,
        ..chat_config(&server.url, 0)
    };
    HttpChatClient::new(config).complete(&payload()).unwrap();
    assert_eq!(server.finish()[0]["top_k"], 1);
}

fn embed_config(url: &str) -> HttpEmbedderConfig {
    HttpEmbedderConfig {
        endpoint: url.to_string(),
        model: "mock-embedder".into(),
        api_key_env: "KGMATCH_TEST_UNSET_KEY".into(),
        timeout_s: 5.0,
        retries: 2,
    }
}

#[test]
fn embedder_accepts_each_response_shape() {
    let server = MockServer::start(vec![
        (200, "[[1.0, 0.0], [0.0, 2.0]]".into()),
        (200, r#"{"embeddings": [[3.0, 4.0]]}"#.into()),
        (502, "{}".into()),
        (200, r#"{"data": [{"embedding": [0.5, 0.5]}]}"#.into()),
    ]);
    let embedder = HttpEmbedder::new(embed_config(&server.url), 2);
    let texts = |t: &[&str]| t.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(embedder.embed_batch(&texts(&["a", "b"])).unwrap(), [[1.0, 0.0], [0.0, 2.0]]);
    assert_eq!(embedder.embed_batch(&texts(&["c"])).unwrap(), [[3.0, 4.0]]);
    assert_eq!(embedder.embed_batch(&texts(&["d"])).unwrap(), [[0.5, 0.5]]);
    let bodies = server.finish();
    assert_eq!(bodies[0], serde_json::json!({"texts": ["a", "b"], "model": "mock-embedder"}));
}

#[test]
fn embedder_rejects_wrong_dim_and_count() {
    let server = MockServer::start(vec![(200, "[[1.0, 0.0, 0.0]]".into()), (200, "[[1.0, 0.0]]".into())]);
    let embedder = HttpEmbedder::new(embed_config(&server.url), 2);
    let one = vec!["x".to_string()];
    assert!(matches!(embedder.embed_batch(&one), Err(EmbeddingError::DimMismatch { .. })));
    let two = vec!["x".to_string(), "y".to_string()];
    assert!(matches!(embedder.embed_batch(&two), Err(EmbeddingError::CountMismatch { .. })));
    server.finish();
}
