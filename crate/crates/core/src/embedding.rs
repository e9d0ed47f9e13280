//! Issue embeddings, cosine similarity and the embedder interface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::ProviderError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding has non-finite components")]
    NonFinite,
    #[error("embedding is empty")]
    Empty,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A non-zero, finite embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>", bound = "S: Scalar")]
pub struct Embedding<S: Scalar> {
    vector: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new(vector: Vec<S>) -> Result<Self, EmbeddingError> {
        if vector.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if vector.iter().all(|x| x.is_zero()) {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.vector
    }

    pub fn norm(&self) -> S {
        self.vector.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt()
    }

    /// Multiplies every component by `factor`; `factor` must be positive.
    pub fn scaled(&self, factor: S) -> Result<Self, EmbeddingError> {
        Self::new(self.vector.iter().map(|&x| x * factor).collect())
    }

    pub fn cast<T: Scalar>(&self) -> Result<Embedding<T>, EmbeddingError> {
        Embedding::new(
            self.vector
                .iter()
                .map(|x| T::from_f64_lossy(x.to_f64_lossy()))
                .collect(),
        )
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for Embedding<S> {
    type Error = EmbeddingError;
    fn try_from(v: Vec<S>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl<S: Scalar> From<Embedding<S>> for Vec<S> {
    fn from(e: Embedding<S>) -> Self {
        e.vector
    }
}

/// `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<S: Scalar>(a: &Embedding<S>, b: &Embedding<S>) -> Result<S, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot = a
        .vector
        .iter()
        .zip(&b.vector)
        .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    let sim = dot / (a.norm() * b.norm());
    Ok(sim.max(-S::one()).min(S::one()))
}

/// Text embedding model. Deterministic for a fixed text.
pub trait Embedder<S: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<S: Scalar, E: Embedder<S> + ?Sized> Embedder<S> for std::sync::Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbeddingError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbeddingError> {
        (**self).embed_batch(texts)
    }
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic mock embedder: token counts hashed into `dim` buckets, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedBagOfWords {
    dim: usize,
}

impl HashedBagOfWords {
    pub const DEFAULT_DIM: usize = 1024;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl<S: Scalar> Embedder<S> for HashedBagOfWords {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut counts = vec![0u32; self.dim];
        let mut any = false;
        for token in tokenize(text) {
            counts[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1;
            any = true;
        }
        if !any {
            // punctuation-only text still needs a non-zero vector
            counts[(fnv1a(text.trim().as_bytes()) % self.dim as u64) as usize] += 1;
        }
        let norm = counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
        Embedding::new(
            counts
                .into_iter()
                .map(|c| S::from_f64_lossy(f64::from(c) / norm))
                .collect(),
        )
    }
}
