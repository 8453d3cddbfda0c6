//! Embedding providers: the offline hash embedder and a JSON-over-HTTP client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::hash::{hash_embed, DEFAULT_DIM, MIN_DIM};

pub const HASH_PROVIDER: &str = "hash";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Network or server-side failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The request or response is wrong; retrying will not help.
    #[error("bad response: {0}")]
    Response(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &str;
    /// Returns one vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

fn default_batch_size() -> usize {
    96
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Name of the environment variable holding the API secret.
    #[serde(default)]
    pub auth: Option<String>,
    /// Output dimension of the hash provider.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl ProviderConfig {
    pub fn hash(dim: usize) -> Self {
        Self {
            name: HASH_PROVIDER.into(),
            endpoint: String::new(),
            model: format!("char3-d{dim}"),
            batch_size: default_batch_size(),
            auth: None,
            dim: Some(dim),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.batch_size == 0 {
            return Err(ProviderError::Config("batch_size must be at least 1".into()));
        }
        if self.name.is_empty() {
            return Err(ProviderError::Config("provider name is empty".into()));
        }
        if self.name != HASH_PROVIDER && self.endpoint.is_empty() {
            return Err(ProviderError::Config(format!("provider {} needs an endpoint", self.name)));
        }
        Ok(())
    }

    /// Instantiates the provider this configuration describes.
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, ProviderError> {
        self.validate()?;
        if self.name == HASH_PROVIDER {
            let dim = self.dim.unwrap_or(DEFAULT_DIM);
            let mut provider = HashProvider::new(dim)?;
            if !self.model.is_empty() {
                provider.model = self.model.clone();
            }
            Ok(Box::new(provider))
        } else {
            Ok(Box::new(HttpProvider::new(self)?))
        }
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::hash(DEFAULT_DIM)
    }
}

#[derive(Debug, Clone)]
pub struct HashProvider {
    dim: usize,
    model: String,
}

impl HashProvider {
    pub fn new(dim: usize) -> Result<Self, ProviderError> {
        if dim < MIN_DIM {
            return Err(ProviderError::Config(format!("hash dimension must be >= {MIN_DIM}")));
        }
        Ok(Self {
            dim,
            model: format!("char3-d{dim}"),
        })
    }
}

impl EmbeddingProvider for HashProvider {
    fn name(&self) -> &str {
        HASH_PROVIDER
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dim)).collect())
    }
}

/// Posts `{"model", "texts", "input_type", "embedding_types"}` and accepts
/// `{"embeddings": [[..]]}`, `{"embeddings": {"float": [[..]]}}` or
/// `{"data": [{"embedding": [..]}]}`.
pub struct HttpProvider {
    name: String,
    endpoint: String,
    model: String,
    secret: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let secret = match &config.auth {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} (API secret) is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            name: config.name.clone(),
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            secret,
            agent,
        })
    }
}

impl EmbeddingProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "texts": texts,
            "input_type": "search_document",
            "embedding_types": ["float"],
        });
        let mut request = self.agent.post(&self.endpoint);
        if let Some(secret) = &self.secret {
            request = request.header("Authorization", format!("Bearer {secret}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(ProviderError::Response(format!("HTTP {status}")));
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Response(e.to_string()))?;
        let vectors = parse_embeddings(&value)?;
        if vectors.len() != texts.len() {
            return Err(ProviderError::Response(format!(
                "{} vectors for {} inputs",
                vectors.len(),
                texts.len()
            )));
        }
        Ok(vectors)
    }
}

pub(crate) fn parse_embeddings(value: &Value) -> Result<Vec<Vec<f32>>, ProviderError> {
    let rows: Vec<&Value> = if let Some(rows) = value["embeddings"].as_array() {
        rows.iter().collect()
    } else if let Some(rows) = value["embeddings"]["float"].as_array() {
        rows.iter().collect()
    } else if let Some(data) = value["data"].as_array() {
        data.iter().map(|d| &d["embedding"]).collect()
    } else {
        return Err(ProviderError::Response("no embeddings in response".into()));
    };
    rows.into_iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| ProviderError::Response("embedding is not an array".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .map(|x| x as f32)
                        .ok_or_else(|| ProviderError::Response("non-numeric embedding value".into()))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn response_shapes() {
        let expect = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
        for v in [
            json!({"embeddings": [[1.0, 0.0], [0.0, 1.0]]}),
            json!({"embeddings": {"float": [[1.0, 0.0], [0.0, 1.0]]}}),
            json!({"data": [{"embedding": [1.0, 0.0]}, {"embedding": [0.0, 1.0]}]}),
        ] {
            assert_eq!(parse_embeddings(&v).unwrap(), expect);
        }
        assert!(parse_embeddings(&json!({"x": 1})).is_err());
        assert!(parse_embeddings(&json!({"embeddings": [["a"]]})).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::hash(256).build().is_ok());
        let mut c = ProviderConfig::hash(256);
        c.batch_size = 0;
        assert!(c.build().is_err());
        assert!(ProviderConfig::hash(4).build().is_err());
        let remote = ProviderConfig {
            name: "cohere".into(),
            endpoint: String::new(),
            ..ProviderConfig::hash(8)
        };
        assert!(remote.build().is_err());
        let missing_secret = ProviderConfig {
            endpoint: "http://127.0.0.1:9".into(),
            auth: Some("POLYALIGN_TEST_UNSET_SECRET".into()),
            ..remote
        };
        assert!(matches!(missing_secret.build(), Err(ProviderError::Config(_))));
    }
}
