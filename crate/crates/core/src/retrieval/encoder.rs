use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, TransportError};
use crate::transport::{token_from_env, with_retries, JsonEndpoint, RetryPolicy};

/// A text embedding. Dimension is fixed per encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub trait Encoder: Send + Sync {
    /// Stable identity used to key cached embeddings.
    fn identity(&self) -> String;

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>>;
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed(texts)
    }
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed(texts)
    }
}

/// Offline encoder: signed feature hashing of lowercase word unigrams and
/// bigrams into a fixed number of buckets, seeded through SHA-256 so the
/// output is identical on every platform.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEncoder { dim, seed }
    }

    fn bucket(&self, feature: &str) -> (usize, f64) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(feature.as_bytes());
        let digest = h.finalize();
        let v = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let sign = if v >> 63 == 1 { -1.0 } else { 1.0 };
        ((v % self.dim as u64) as usize, sign)
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut v = vec![0.0; self.dim];
        for w in &words {
            let (i, s) = self.bucket(w);
            v[i] += s;
        }
        for pair in words.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            v[i] += 0.5 * s;
        }
        Embedding(v)
    }
}

impl Default for HashEncoder {
    fn default() -> Self {
        HashEncoder::new(256, 0)
    }
}

impl Encoder for HashEncoder {
    fn identity(&self) -> String {
        format!("hash-v1:dim={}:seed={}", self.dim, self.seed)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HttpEncoderConfig {
    pub url: String,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

/// Encoder service speaking `POST {texts: [...]} -> {embeddings: [[...]]}`.
pub struct HttpEncoder {
    endpoint: JsonEndpoint,
    model: Option<String>,
    retry: RetryPolicy,
}

impl HttpEncoder {
    pub fn new(cfg: &HttpEncoderConfig) -> Result<Self> {
        let endpoint =
            JsonEndpoint::new(cfg.url.clone(), token_from_env(&cfg.token_env), cfg.timeout)?;
        Ok(HttpEncoder {
            endpoint,
            model: cfg.model.clone(),
            retry: cfg.retry,
        })
    }
}

impl Encoder for HttpEncoder {
    fn identity(&self) -> String {
        format!(
            "http:{}:{}",
            self.endpoint.url(),
            self.model.as_deref().unwrap_or("-")
        )
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let body = EmbedRequest {
            texts,
            model: self.model.as_deref(),
        };
        let resp: EmbedResponse = with_retries(&self.retry, || self.endpoint.post(&body))?;
        if resp.embeddings.len() != texts.len() {
            return Err(TransportError::Decode(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.embeddings.len()
            ))
            .into());
        }
        let out: Vec<Embedding> = resp.embeddings.into_iter().map(Embedding).collect();
        if let Some(first) = out.first() {
            if out.iter().any(|e| e.dim() != first.dim() || e.dim() == 0) {
                return Err(TransportError::Decode("embedding dimensions differ".into()).into());
            }
        }
        Ok(out)
    }
}

/// Memoizes another encoder in memory and, optionally, in content-addressed
/// files `<dir>/<hh>/<sha256>.json` keyed by encoder identity and text.
pub struct CachedEncoder<E> {
    inner: E,
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Embedding>>,
}

impl<E: Encoder> CachedEncoder<E> {
    pub fn new(inner: E, dir: Option<PathBuf>) -> Self {
        CachedEncoder {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        }
    }

    fn key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.inner.identity().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    fn lookup(&self, key: &str) -> Option<Embedding> {
        if let Some(e) = self.memory.lock().expect("cache lock").get(key) {
            return Some(e.clone());
        }
        let path = self.path(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        let e: Embedding = serde_json::from_str(&text).ok()?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), e.clone());
        Some(e)
    }

    fn store(&self, key: &str, e: &Embedding) -> Result<()> {
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), e.clone());
        if let Some(path) = self.path(key) {
            let parent = path.parent().expect("cache path has a parent");
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            let body = serde_json::to_string(e).expect("embeddings serialize");
            std::fs::write(&path, body).map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }
}

impl<E: Encoder> Encoder for CachedEncoder<E> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut out: Vec<Option<Embedding>> = keys.iter().map(|k| self.lookup(k)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            for (&i, e) in missing.iter().zip(fresh) {
                self.store(&keys[i], &e)?;
                out[i] = Some(e);
            }
        }
        Ok(out.into_iter().map(|e| e.expect("filled above")).collect())
    }
}

/// Embeds `texts` in batches of `batch_size`, with at most `fan_out`
/// batches in flight. Output order matches input order.
pub fn embed_all(
    encoder: &dyn Encoder,
    texts: &[String],
    batch_size: usize,
    fan_out: usize,
) -> Result<Vec<Embedding>> {
    let batches: Vec<&[String]> = texts.chunks(batch_size.max(1)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(fan_out.max(1))
        .build()
        .map_err(|e| Error::Input(format!("cannot build worker pool: {e}")))?;
    let parts: Vec<Vec<Embedding>> = pool.install(|| {
        batches
            .par_iter()
            .map(|b| encoder.embed(b))
            .collect::<Result<_>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}
