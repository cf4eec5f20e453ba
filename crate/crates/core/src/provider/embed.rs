use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::ResponseCache;
use super::ProviderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub dimension: usize,
    pub model_name: String,
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, ProviderError>;
}

/// Seeded hashed bag-of-words projection.
///
/// Lower-cased alphanumeric runs are hashed into `dimension` buckets and
/// the count vector is L2-normalized, so texts sharing more tokens score a
/// higher cosine. Buckets only ever add, so hash collisions can raise a
/// similarity but never flip its sign.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dimension: usize,
    seed: u64,
    name: String,
}

impl HashedBagOfWords {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed, name: format!("hashed-bow-{dimension}-s{seed}") }
    }

    fn bucket(&self, token: &str) -> usize {
        // FNV-1a over the token, seeded, then a splitmix64 finalizer.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        (h % self.dimension as u64) as usize
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(256, 0)
    }
}

impl EmbeddingBackend for HashedBagOfWords {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let mut counts = vec![0f64; self.dimension];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            counts[self.bucket(token)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        Ok(counts
            .into_iter()
            .map(|c| if norm > 0.0 { (c / norm) as f32 } else { 0.0 })
            .collect())
    }
}

const EMBED_NAMESPACE: &str = "embed";

/// Validating, optionally cached front end for an [`EmbeddingBackend`].
/// All vectors it returns in one run share a dimension.
pub struct Embedder {
    backend: Arc<dyn EmbeddingBackend>,
    cache: Option<ResponseCache>,
    dimension: Mutex<Option<usize>>,
    backend_calls: AtomicU64,
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        Self { backend, cache: None, dimension: Mutex::new(None), backend_calls: AtomicU64::new(0) }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let model = self.backend.model_name().to_string();
        let digest = {
            let mut h = Sha256::new();
            h.update(b"pairminer/embed/v1\0");
            h.update(model.as_bytes());
            h.update([0u8]);
            h.update(normalized.as_bytes());
            hex::encode(h.finalize())
        };
        let cached = match &self.cache {
            Some(c) => c.get::<Vec<f32>>(EMBED_NAMESPACE, &digest)?,
            None => None,
        };
        let values = match cached {
            Some(v) => v,
            None => {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                let v = self.backend.embed_raw(&normalized)?;
                if let Some(c) = &self.cache {
                    c.put(EMBED_NAMESPACE, &digest, &v)?;
                }
                v
            }
        };
        if values.is_empty() {
            return Err(ProviderError::Malformed("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Malformed("non-finite embedding component".into()));
        }
        let mut seen = self.dimension.lock().unwrap_or_else(|e| e.into_inner());
        match *seen {
            Some(expected) if expected != values.len() => {
                return Err(ProviderError::DimensionMismatch { expected, got: values.len() })
            }
            None => *seen = Some(values.len()),
            _ => {}
        }
        Ok(EmbeddingVector { dimension: values.len(), values, model_name: model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock() -> Embedder {
        Embedder::new(Arc::new(HashedBagOfWords::default()))
    }

    #[test]
    fn deterministic_bitwise() {
        let e = mock();
        let a = e.embed("ideal gas law").unwrap();
        let b = e.embed("ideal gas law").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension, 256);
        let fresh = mock().embed("ideal   gas\nlaw").unwrap();
        assert_eq!(a.values, fresh.values);
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        // Frozen from the seed-0, 256-bucket projection: the three shared
        // tokens land in distinct buckets (3 / sqrt(4 * 3)); the disjoint
        // pair has one bucket collision (1 / sqrt(4 * 3)).
        let e = mock();
        let q = e.embed("ideal gas pressure volume").unwrap();
        let near = cosine(&q, &e.embed("ideal gas pressure").unwrap());
        let far = cosine(&q, &e.embed("mitosis cell division").unwrap());
        assert!((near - 3.0 / 12f64.sqrt()).abs() < 1e-6, "{near}");
        assert!(far < near);
        assert!((far - 1.0 / 12f64.sqrt()).abs() < 1e-6, "{far}");
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(mock().embed(""), Err(ProviderError::EmptyText)));
        assert!(matches!(mock().embed(" \n\t"), Err(ProviderError::EmptyText)));
    }

    struct Shifting(Mutex<usize>);
    impl EmbeddingBackend for Shifting {
        fn model_name(&self) -> &str {
            "shift"
        }
        fn embed_raw(&self, _: &str) -> Result<Vec<f32>, ProviderError> {
            let mut n = self.0.lock().unwrap();
            *n += 1;
            Ok(vec![1.0; *n])
        }
    }

    #[test]
    fn dimension_drift_is_an_error() {
        let e = Embedder::new(Arc::new(Shifting(Mutex::new(0))));
        e.embed("a").unwrap();
        assert!(matches!(e.embed("b"), Err(ProviderError::DimensionMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn cached_embeddings_skip_the_backend() {
        let dir = tempfile::tempdir().unwrap();
        let e = mock().with_cache(ResponseCache::open(dir.path()).unwrap());
        e.embed("x y").unwrap();
        let again = mock().with_cache(ResponseCache::open(dir.path()).unwrap());
        assert_eq!(again.embed("x y").unwrap(), e.embed("x y").unwrap());
        assert_eq!(again.backend_calls(), 0);
    }

    #[test]
    fn seed_changes_the_projection() {
        let a = HashedBagOfWords::new(256, 1).embed_raw("alpha beta gamma").unwrap();
        let b = HashedBagOfWords::new(256, 2).embed_raw("alpha beta gamma").unwrap();
        assert_ne!(a, b);
    }
}
