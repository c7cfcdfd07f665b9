//! Deterministic feature-hashing embedder.
//!
//! Text is lowercased and split into alphanumeric tokens. Each token maps to a
//! dense ±1 pattern drawn from a 64-bit FNV-1a hash expanded with splitmix64;
//! patterns are summed over the token multiset and the sum is normalized.
//! Texts sharing vocabulary therefore score higher, and texts that differ only
//! in spacing or case embed identically.

use super::{EmbedError, EmbeddingProvider, EmbeddingVector, Result};

pub const REFERENCE_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
    id: String,
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl ReferenceEmbedder {
    pub fn new() -> Self {
        Self::with_dim(REFERENCE_DIM)
    }

    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("reference-fh{dim}"),
        }
    }

    /// Unnormalized pattern sum for `text`.
    pub fn raw(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0i64; self.dim];
        for token in tokenize(text) {
            let mut state = fnv1a(token.as_bytes());
            let mut bits = 0u64;
            for (i, slot) in acc.iter_mut().enumerate() {
                if i % 64 == 0 {
                    bits = splitmix64(&mut state);
                }
                if bits >> (i % 64) & 1 == 1 {
                    *slot += 1;
                } else {
                    *slot -= 1;
                }
            }
        }
        acc.into_iter().map(|v| v as f64).collect()
    }
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        EmbeddingVector::from_raw(&self.raw(text), &self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    #[test]
    fn known_hash_values() {
        // FNV-1a 64 reference vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic_and_whitespace_invariant() {
        let e = ReferenceEmbedder::new();
        let a = e.embed("alpha").unwrap();
        let b = e.embed("alpha").unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(
            e.embed("alpha beta").unwrap(),
            e.embed("alpha \t\n  beta").unwrap()
        );
        assert_eq!(
            e.embed("Alpha, BETA!").unwrap(),
            e.embed("alpha beta").unwrap()
        );
    }

    #[test]
    fn self_cosine_is_one() {
        let e = ReferenceEmbedder::new();
        for t in [
            "alpha",
            "a b c d e",
            "The basic service set (BSS) is a set of stations.",
        ] {
            let v = e.embed(t).unwrap();
            assert!((cosine(&v, &v).unwrap() - 1.0).abs() <= 1e-12);
            assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn empty_and_tokenless() {
        let e = ReferenceEmbedder::new();
        assert!(matches!(e.embed(""), Err(EmbedError::EmptyInput)));
        assert!(matches!(e.embed("  "), Err(EmbedError::EmptyInput)));
        assert!(matches!(e.embed("— !!"), Err(EmbedError::EmptyInput)));
    }

    #[test]
    fn shared_vocabulary_scores_higher() {
        let e = ReferenceEmbedder::new();
        let q = e.embed("battery float charge").unwrap();
        let near = e.embed("float charge of a battery cell").unwrap();
        let far = e.embed("access point beacon interval").unwrap();
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }
}
