//! Sentence embeddings.
//!
//! Two providers sit behind the [`Embedder`] trait: a remote HTTP encoder and
//! [`HashEmbedder`], a pure character-trigram hashing embedder used offline
//! and in tests. Similar strings share trigrams, so they land close together
//! under cosine similarity.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_DIM: usize = 384;

/// Seed mixed into the FNV-1a offset basis of [`HashEmbedder`].
pub const HASH_SEED: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Start and end markers wrapped around the text before trigram extraction.
pub const PAD_START: char = '\u{2}';
pub const PAD_END: char = '\u{3}';

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot embed empty text at position {0}")]
    EmptyText(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("invalid embedder config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Embedding { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Unit-length copy. Fails on the zero vector.
    pub fn normalized(&self) -> Result<Embedding, EmbedError> {
        if self.norm == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Embedding {
            values: self.values.iter().map(|v| v / self.norm).collect(),
            norm: 1.0,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Embedding {
        Embedding {
            values: self.values.iter().map(|v| v * alpha).collect(),
            norm: self.norm * alpha.abs(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot(&a.values, &b.values) / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One embedding per input, in input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(self
            .embed_batch(&[text])?
            .pop()
            .expect("one text in, one embedding out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedProvider {
    Remote {
        endpoint: String,
        #[serde(default)]
        auth_token: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    DeterministicHash,
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub provider: EmbedProvider,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_true() -> bool {
    true
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            provider: EmbedProvider::DeterministicHash,
            dim: DEFAULT_DIM,
            normalize: true,
        }
    }
}

impl EmbedderConfig {
    pub fn hash(dim: usize) -> Self {
        EmbedderConfig {
            dim,
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        if self.dim < 8 {
            return Err(EmbedError::Config(format!("dim {} < 8", self.dim)));
        }
        Ok(match &self.provider {
            EmbedProvider::DeterministicHash => Box::new(HashEmbedder::new(self.dim, self.normalize)),
            EmbedProvider::Remote {
                endpoint,
                auth_token,
                timeout_secs,
            } => Box::new(RemoteEmbedder::new(
                endpoint,
                auth_token.clone(),
                Duration::from_secs(*timeout_secs),
                self.dim,
                self.normalize,
            )?),
        })
    }
}

/// Embeds with a provider built from `cfg`.
pub fn embed_batch(texts: &[&str], cfg: &EmbedderConfig) -> Result<Vec<Embedding>, EmbedError> {
    cfg.build()?.embed_batch(texts)
}

/// Counts of character trigrams hashed into `dim` buckets.
///
/// Text is NFC-normalized, lowercased and whitespace-collapsed, then wrapped
/// in [`PAD_START`]/[`PAD_END`] so that even one-character inputs produce a
/// trigram. Each trigram's UTF-8 bytes are hashed with FNV-1a 64 (offset
/// basis xor [`HASH_SEED`]) and counted in bucket `hash % dim`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    normalize: bool,
}

impl HashEmbedder {
    pub fn new(dim: usize, normalize: bool) -> Self {
        assert!(dim >= 8, "embedding dimension must be at least 8");
        HashEmbedder { dim, normalize }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let cleaned: String = text.nfc().collect::<String>().to_lowercase();
        let mut chars = vec![PAD_START];
        let mut first = true;
        for word in cleaned.split_whitespace() {
            if !first {
                chars.push(' ');
            }
            chars.extend(word.chars());
            first = false;
        }
        chars.push(PAD_END);

        let mut counts = vec![0.0; self.dim];
        let mut buf = String::with_capacity(12);
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            counts[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        counts
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText(i));
        }
        texts
            .par_iter()
            .map(|t| {
                let e = Embedding::new(self.embed_one(t))?;
                if self.normalize {
                    e.normalized()
                } else {
                    Ok(e)
                }
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// HTTP encoder: `POST {"texts": [...]}` returns `{"embeddings": [[...], ...]}`.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    auth_token: Option<String>,
    dim: usize,
    normalize: bool,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: &str,
        auth_token: Option<String>,
        timeout: Duration,
        dim: usize,
        normalize: bool,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        Ok(RemoteEmbedder {
            client,
            endpoint: endpoint.to_string(),
            auth_token,
            dim,
            normalize,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText(i));
        }
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { texts });
        if let Some(token) = &self.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbedError::ProviderUnavailable(format!("bad response body: {e}")))?;
        if body.embeddings.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "{} embeddings for {} texts",
                body.embeddings.len(),
                texts.len()
            )));
        }
        body.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                let e = Embedding::new(v)?;
                if self.normalize {
                    e.normalized()
                } else {
                    Ok(e)
                }
            })
            .collect()
    }
}
