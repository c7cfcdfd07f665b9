//! Client for chat-completion services using the common
//! `{"model", "messages", "temperature"}` request shape.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, GenerationError, PromptPair, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
    /// Prompts estimated above this many tokens are rejected before sending.
    pub max_context_tokens: Option<usize>,
}

impl HttpChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            max_context_tokens: None,
        }
    }
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 2],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

pub struct HttpChatProvider {
    config: HttpChatConfig,
    client: Client,
}

impl HttpChatProvider {
    pub fn new(config: HttpChatConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GenerationError::Protocol(format!("http client setup: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpChatConfig {
        &self.config
    }
}

fn looks_like_context_overflow(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context")
        && (b.contains("length") || b.contains("too long") || b.contains("maximum"))
}

impl ChatProvider for HttpChatProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let estimated_tokens = prompt.estimated_tokens();
        if let Some(limit) = self.config.max_context_tokens {
            if estimated_tokens > limit {
                return Err(GenerationError::ContextOverflow {
                    estimated_tokens,
                    limit: Some(limit),
                });
            }
        }
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                Message {
                    role: "system",
                    content: &prompt.system,
                },
                Message {
                    role: "user",
                    content: &prompt.user,
                },
            ],
            temperature: self.config.temperature,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            let (message, retryable) =
                match self.client.post(&self.config.endpoint).json(&body).send() {
                    Ok(resp) if resp.status().is_success() => {
                        let parsed: ChatResponse = resp
                            .json()
                            .map_err(|e| GenerationError::Protocol(e.to_string()))?;
                        return parsed
                            .choices
                            .into_iter()
                            .next()
                            .map(|c| c.message.content.unwrap_or_default())
                            .ok_or_else(|| {
                                GenerationError::Protocol("response has no choices".into())
                            });
                    }
                    Ok(resp) => {
                        let status = resp.status();
                        let text = resp.text().unwrap_or_default();
                        if status == StatusCode::BAD_REQUEST && looks_like_context_overflow(&text) {
                            return Err(GenerationError::ContextOverflow {
                                estimated_tokens,
                                limit: self.config.max_context_tokens,
                            });
                        }
                        let retryable =
                            status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
                        (format!("http status {status}: {text}"), retryable)
                    }
                    Err(e) => (e.to_string(), true),
                };
            if !retryable || attempts > self.config.max_retries {
                return Err(GenerationError::ProviderUnavailable {
                    provider: self.config.model.clone(),
                    attempts,
                    message,
                });
            }
            thread::sleep(self.config.backoff * 2u32.saturating_pow(attempts - 1));
        }
    }
}
