//! Text embeddings behind a provider abstraction.
//!
//! Every [`EmbeddingVector`] is L2-normalized on construction and stored at
//! 32-bit precision. Similarities are accumulated in 64-bit.

mod http;
mod reference;

pub use http::{HttpEmbeddingConfig, HttpEmbeddingProvider};
pub use reference::{tokenize, ReferenceEmbedder, REFERENCE_DIM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("embedding provider `{provider}` unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        message: String,
        /// Server-suggested delay before the next attempt, when one was sent.
        retry_after_ms: Option<u64>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("batch item {index}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
}

impl EmbedError {
    /// Strips any batch wrapping.
    pub fn root(&self) -> &EmbedError {
        match self {
            EmbedError::Batch { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// Unit-length embedding with the id of the provider that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    provider_id: String,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. Fails on empty or all-zero input.
    pub fn from_raw(raw: &[f64], provider_id: impl Into<String>) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if raw.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(Self {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
            provider_id: provider_id.into(),
        })
    }

    /// Wraps values that were already normalized when first stored.
    pub(crate) fn from_stored(values: Vec<f32>, provider_id: impl Into<String>) -> Self {
        Self {
            values,
            provider_id: provider_id.into(),
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.values).sqrt()
    }
}

/// A text-to-vector model. Implementations must be deterministic for a
/// fixed model version and safe to call from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    /// Embeds each text in order. The default calls [`embed`](Self::embed)
    /// per item and tags the first failure with its index.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed(t).map_err(|e| EmbedError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }
}

pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    provider.embed(text)
}

pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector>> {
    provider.embed_batch(texts)
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

pub(crate) fn norm_sq(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Cosine given precomputed squared norms.
///
/// `sqrt(fl(x*x)) == x` holds in binary floating point, so a vector scored
/// against itself yields exactly 1.0.
pub(crate) fn cosine_with_norms(a: &[f32], a_norm_sq: f64, b: &[f32], b_norm_sq: f64) -> f64 {
    let denom = (a_norm_sq * b_norm_sq).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

/// Cosine similarity in `[-1, 1]`, symmetric in its arguments.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbedError::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(cosine_with_norms(
        &a.values,
        norm_sq(&a.values),
        &b.values,
        norm_sq(&b.values),
    ))
}
