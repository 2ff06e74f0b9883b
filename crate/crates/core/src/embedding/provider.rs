use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingError;
use crate::http::{HttpFailure, JsonPoster};

/// Source of raw (not necessarily normalized) text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    /// Dimension every returned vector must have.
    fn dim(&self) -> usize;

    /// Embeds `texts`, returning one vector per text in the same order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// Deterministic bag-of-tokens embedder for offline runs and tests.
///
/// Each lowercase alphanumeric token is hashed into one of `dim` buckets
/// with a hash-derived sign. Identical texts always map to identical
/// vectors; texts sharing tokens get positive cosine.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashEmbedder { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let mut word = [0u8; 8];
            word.copy_from_slice(&digest[..8]);
            let h = u64::from_le_bytes(word);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub retries: u32,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        HttpEmbedderConfig {
            endpoint: "http://127.0.0.1:8080/embed".into(),
            model: "sentence-transformers/all-roberta-large-v1".into(),
            api_key_env: "KGMATCH_EMBED_API_KEY".into(),
            timeout_s: 30.0,
            retries: 3,
        }
    }
}

/// Client for embedding services that accept `{"texts": [...], "model": ...}`
/// and answer with a parallel list of float arrays.
///
/// Accepted response shapes: a bare `[[...], ...]`, `{"embeddings": [...]}`,
/// or `{"data": [{"embedding": [...]}, ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    dim: usize,
    api_key: Option<String>,
    poster: JsonPoster,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    model: &'a str,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig, dim: usize) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let poster = JsonPoster::new(
            Duration::from_secs_f64(config.timeout_s),
            config.retries,
            Duration::from_millis(250),
        );
        HttpEmbedder {
            config,
            dim,
            api_key,
            poster,
        }
    }
}

fn parse_vectors(body: serde_json::Value) -> Result<Vec<Vec<f32>>, EmbeddingError> {
    let rows = match body {
        serde_json::Value::Array(rows) => rows,
        serde_json::Value::Object(mut map) => {
            if let Some(serde_json::Value::Array(rows)) = map.remove("embeddings") {
                rows
            } else if let Some(serde_json::Value::Array(data)) = map.remove("data") {
                data.into_iter()
                    .map(|mut d| d.get_mut("embedding").map(serde_json::Value::take).unwrap_or_default())
                    .collect()
            } else {
                return Err(EmbeddingError::Provider("response has no embeddings".into()));
            }
        }
        _ => return Err(EmbeddingError::Provider("unexpected response shape".into())),
    };
    rows.into_iter()
        .map(|row| {
            serde_json::from_value::<Vec<f32>>(row)
                .map_err(|e| EmbeddingError::Provider(format!("bad vector: {e}")))
        })
        .collect()
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let body = self
            .poster
            .post(
                &self.config.endpoint,
                self.api_key.as_deref(),
                &EmbedRequest {
                    texts,
                    model: &self.config.model,
                },
            )
            .map_err(|e| match e {
                HttpFailure::Retryable(m) => EmbeddingError::Transport(m),
                HttpFailure::Fatal(m) => EmbeddingError::Provider(m),
            })?;
        let vectors = parse_vectors(body)?;
        if vectors.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                actual: vectors.len(),
            });
        }
        for v in &vectors {
            super::check_dim(self.dim, v.len())?;
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed;

    #[test]
    fn hash_embedder_is_deterministic_and_unit() {
        let p = HashEmbedder::new(300);
        let a = embed("abc", &p).unwrap();
        let b = embed("abc", &p).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hash_embedder_ignores_case_and_punctuation() {
        let p = HashEmbedder::new(64);
        assert_eq!(p.embed_text("Date of Birth"), p.embed_text("date, of birth!"));
    }

    struct Fixed(usize);
    impl EmbeddingProvider for Fixed {
        fn dim(&self) -> usize {
            300
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
            Ok(texts.iter().map(|_| vec![1.0; self.0]).collect())
        }
    }

    #[test]
    fn dim_mismatch_is_configuration_error() {
        let err = embed("x", &Fixed(768)).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::DimMismatch {
                expected: 300,
                actual: 768
            }
        ));
    }

    #[test]
    fn response_shapes() {
        let bare = serde_json::json!([[1.0, 2.0]]);
        let wrapped = serde_json::json!({"embeddings": [[1.0, 2.0]]});
        let openai = serde_json::json!({"data": [{"embedding": [1.0, 2.0], "index": 0}]});
        for body in [bare, wrapped, openai] {
            assert_eq!(parse_vectors(body).unwrap(), vec![vec![1.0, 2.0]]);
        }
        assert!(parse_vectors(serde_json::json!({"nope": 1})).is_err());
    }
}
