use serde_json::{json, Value};

use super::http::JsonTransport;
use super::{l2_normalize, Embedder, HttpConfig, LlmError};
use crate::text::tokenize;

pub const HASHING_DIMENSION: usize = 64;
pub const HASHING_SEED: u64 = 0x6a09_e667_f3bc_c908;

/// Feature-hashing embedder: each lowercased token increments the bucket
/// chosen by a seeded FNV-1a hash, then the vector is L2-normalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(HASHING_DIMENSION, HASHING_SEED)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    /// Bucket index for one (already lowercased) token.
    pub fn bucket(&self, token: &str) -> usize {
        const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = FNV_OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (h % self.dimension as u64) as usize
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let mut v = vec![0.0; self.dimension];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        l2_normalize(v).ok_or(LlmError::EmptyText)
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    transport: JsonTransport,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig, dimension: usize) -> Result<Self, LlmError> {
        Ok(Self {
            transport: JsonTransport::new(cfg)?,
            dimension,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let body = json!({"model": self.transport.cfg.model, "input": text});
        let v = self.transport.post("/embeddings", &body)?;
        let raw: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Decode("missing data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| LlmError::Decode("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if raw.len() != self.dimension {
            return Err(LlmError::Decode(format!(
                "expected {} dimensions, got {}",
                self.dimension,
                raw.len()
            )));
        }
        l2_normalize(raw).ok_or_else(|| LlmError::Decode("zero embedding".into()))
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
