//! Text embeddings and cosine similarity.
//!
//! The default [`HashedNgramEmbedder`] maps text to a fixed-width vector of
//! hashed character n-gram counts. It is deterministic, needs no model files,
//! and produces nonnegative features, so cosine similarities land in `[0, 1]`.
//! Anything implementing [`Embedder`] (for example a client for a hosted
//! sentence encoder) can be used in its place.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
}

/// A dense embedding. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Indices of nonzero coordinates.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Maps text to a fixed-dimension vector. Implementations must be read-only
/// after construction so a single instance can serve concurrent scorers.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> EmbeddingVector {
        (**self).embed(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> EmbeddingVector {
        (**self).embed(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub dimension: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub case_fold: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dimension: 1024,
            ngram_min: 3,
            ngram_max: 5,
            case_fold: true,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dimension == 0 {
            return Err(EmbeddingError::InvalidConfig("dimension must be positive".into()));
        }
        if self.ngram_min == 0 {
            return Err(EmbeddingError::InvalidConfig("ngram_min must be >= 1".into()));
        }
        if self.ngram_max < self.ngram_min {
            return Err(EmbeddingError::InvalidConfig(format!(
                "ngram_max ({}) < ngram_min ({})",
                self.ngram_max, self.ngram_min
            )));
        }
        Ok(())
    }
}

/// Hashed character n-gram count embedder.
///
/// Text is optionally lowercased and whitespace runs are collapsed to a single
/// space before n-grams are taken over Unicode scalar values. Each n-gram is
/// hashed with 64-bit FNV-1a and counted into bucket `hash % dimension`.
#[derive(Debug, Clone, Default)]
pub struct HashedNgramEmbedder {
    config: EmbedderConfig,
}

impl HashedNgramEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Bucket an n-gram hashes to.
    pub fn bucket(&self, gram: &str) -> usize {
        (fnv1a64(gram.as_bytes()) % self.config.dimension as u64) as usize
    }

    /// Normalized characters the n-grams are drawn from.
    pub fn normalize(&self, text: &str) -> Vec<char> {
        let mut out = Vec::with_capacity(text.len());
        for (i, word) in text.split_whitespace().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if self.config.case_fold {
                out.extend(word.chars().flat_map(char::to_lowercase));
            } else {
                out.extend(word.chars());
            }
        }
        out
    }

    /// All n-grams of the normalized text, in order of increasing n.
    pub fn ngrams(&self, text: &str) -> Vec<String> {
        let chars = self.normalize(text);
        let mut grams = Vec::new();
        for n in self.config.ngram_min..=self.config.ngram_max {
            if chars.len() < n {
                break;
            }
            grams.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
        }
        grams
    }
}

impl Embedder for HashedNgramEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.config.dimension];
        let chars = self.normalize(text);
        let mut buf = String::new();
        for n in self.config.ngram_min..=self.config.ngram_max {
            if chars.len() < n {
                break;
            }
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                values[self.bucket(&buf)] += 1.0;
            }
        }
        EmbeddingVector(values)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// `u·v / (‖u‖‖v‖)`, or 0 when either vector has zero norm.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.0.iter().zip(&v.0) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity of two texts under `embedder`, clamped to `[0, 1]`.
pub fn text_similarity<E: Embedder + ?Sized>(embedder: &E, a: &str, b: &str) -> f64 {
    let (u, v) = (embedder.embed(a), embedder.embed(b));
    // Both vectors come from the same embedder, so dimensions agree.
    cosine_similarity(&u, &v).map(|c| c.max(0.0)).unwrap_or(0.0)
}
