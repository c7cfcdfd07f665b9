//! Client for remote embedding services speaking the common
//! `{"model", "input": [..]}` → `{"data": [{"embedding": [..]}]}` shape.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub timeout: Duration,
    /// Additional attempts after the first failure.
    pub max_retries: u32,
    pub batch_size: usize,
    /// Upper bound on concurrent requests issued by `embed_batch`.
    pub max_in_flight: usize,
    pub backoff: Duration,
}

impl HttpEmbeddingConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            batch_size: 32,
            max_in_flight: 4,
            backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    truncated: Option<bool>,
}

pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    client: Client,
    id: String,
    truncated: AtomicUsize,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbedError::Protocol(format!("http client setup: {e}")))?;
        let id = format!("http:{}", config.model);
        Ok(Self {
            config,
            client,
            id,
            truncated: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &HttpEmbeddingConfig {
        &self.config
    }

    /// Number of inputs the server reported as truncated so far.
    pub fn truncated_inputs(&self) -> usize {
        self.truncated.load(Ordering::Relaxed)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: texts,
        };
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let (message, retry_after_ms, retryable) =
                match self.client.post(&self.config.endpoint).json(&body).send() {
                    Ok(resp) if resp.status().is_success() => {
                        let parsed: EmbeddingResponse = resp
                            .json()
                            .map_err(|e| EmbedError::Protocol(e.to_string()))?;
                        return self.decode(parsed, texts.len());
                    }
                    Ok(resp) => {
                        let status = resp.status();
                        let retry_after = resp
                            .headers()
                            .get(reqwest::header::RETRY_AFTER)
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<u64>().ok())
                            .map(|s| s * 1000);
                        let retryable =
                            status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
                        (format!("http status {status}"), retry_after, retryable)
                    }
                    Err(e) => (e.to_string(), None, true),
                };
            if !retryable || attempts > self.config.max_retries {
                return Err(EmbedError::ProviderUnavailable {
                    provider: self.id.clone(),
                    attempts,
                    message,
                    retry_after_ms,
                });
            }
            let backoff = self.config.backoff * 2u32.saturating_pow(attempts - 1);
            let wait = retry_after_ms.map_or(backoff, Duration::from_millis);
            thread::sleep(wait);
        }
    }

    fn decode(&self, resp: EmbeddingResponse, expected: usize) -> Result<Vec<EmbeddingVector>> {
        if resp.data.len() != expected {
            return Err(EmbedError::Protocol(format!(
                "expected {expected} embeddings, got {}",
                resp.data.len()
            )));
        }
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dim {
                    return Err(EmbedError::Dimension {
                        expected: self.config.dim,
                        found: d.embedding.len(),
                    });
                }
                if d.truncated == Some(true) {
                    self.truncated.fetch_add(1, Ordering::Relaxed);
                }
                EmbeddingVector::from_raw(&d.embedding, &self.id)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(self.request(&[text])?.remove(0))
    }

    /// Sends `batch_size` chunks with at most `max_in_flight` outstanding.
    /// Output order follows input order whatever the completion order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::Batch {
                index,
                source: Box::new(EmbedError::EmptyInput),
            });
        }
        let batch_size = self.config.batch_size.max(1);
        let chunks: Vec<&[&str]> = texts.chunks(batch_size).collect();
        let slots: Vec<Mutex<Option<Result<Vec<EmbeddingVector>>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.clamp(1, chunks.len().max(1));

        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    let out = self.request(chunk);
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });

        let mut vectors = Vec::with_capacity(texts.len());
        for (i, slot) in slots.into_iter().enumerate() {
            match slot.into_inner().unwrap() {
                Some(Ok(v)) => vectors.extend(v),
                Some(Err(e)) => {
                    return Err(EmbedError::Batch {
                        index: i * batch_size,
                        source: Box::new(e),
                    })
                }
                None => unreachable!("every chunk is claimed by a worker"),
            }
        }
        Ok(vectors)
    }
}
