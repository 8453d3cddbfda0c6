//! Unit-norm segment embeddings with batching, bounded retries and an on-disk cache.

mod cache;
mod hash;
mod provider;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, EmbeddingCache};
pub use hash::{hash_embed, DEFAULT_DIM, MIN_DIM};
pub use provider::{EmbeddingProvider, HashProvider, HttpProvider, ProviderConfig, ProviderError, HASH_PROVIDER};

use crate::model::Segment;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vectors must have equal, non-zero dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("batch {batch} (inputs {first}..{end}) failed after {attempts} attempt(s): {source}")]
    BatchFailed {
        batch: usize,
        first: usize,
        end: usize,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("embedding cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Segment text with `<strong>` markup.
    Text,
    /// Original element markup.
    Html,
    /// Text and html vectors concatenated, then renormalized.
    Concat,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::Text => "text",
            EmbeddingMode::Html => "html",
            EmbeddingMode::Concat => "concat",
        }
    }
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbeddingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "html" => Ok(Self::Html),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown embedding mode {other:?} (text|html|concat)")),
        }
    }
}

/// Row-normalized embeddings, one row per segment in segment order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Vec<Vec<f32>>,
    pub dim: usize,
    pub provider: String,
    pub mode: EmbeddingMode,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Rows `range` as a new matrix with the same tags.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            vectors: self.vectors[range].to_vec(),
            dim: self.dim,
            provider: self.provider.clone(),
            mode: self.mode,
        }
    }
}

/// `dot(u, v) / (|u| |v|)` clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, EmbedError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(EmbedError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (f64::from(*a), f64::from(*b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

fn normalize(v: &[f64]) -> Result<Vec<f32>, EmbedError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroVector);
    }
    Ok(v.iter().map(|x| (x / norm) as f32).collect())
}

/// Concatenates two unit vectors and rescales the result to unit norm.
pub fn concat_unit(text: &[f32], html: &[f32]) -> Result<Vec<f32>, EmbedError> {
    let joined: Vec<f64> = text.iter().chain(html).map(|x| f64::from(*x)).collect();
    normalize(&joined)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Embeds segments through a provider, consulting the cache first.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Option<Arc<EmbeddingCache>>,
    batch_size: usize,
    max_in_flight: usize,
    retry: RetryPolicy,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, batch_size: usize) -> Result<Self, EmbedError> {
        if batch_size == 0 {
            return Err(ProviderError::Config("batch_size must be at least 1".into()).into());
        }
        Ok(Self {
            provider,
            cache: None,
            batch_size,
            max_in_flight: 1,
            retry: RetryPolicy::default(),
        })
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, EmbedError> {
        Self::new(Arc::from(config.build()?), config.batch_size)
    }

    pub fn with_cache(mut self, cache: Arc<EmbeddingCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    pub fn embed_segments<'a, I>(&self, segments: I, mode: EmbeddingMode) -> Result<EmbeddingMatrix, EmbedError>
    where
        I: IntoIterator<Item = &'a Segment>,
    {
        let segments: Vec<&Segment> = segments.into_iter().collect();
        let texts = |f: fn(&Segment) -> &str| segments.iter().map(|s| f(s).to_string()).collect::<Vec<_>>();
        let vectors = match mode {
            EmbeddingMode::Text => self.embed_texts(&texts(|s| &s.text), mode)?,
            EmbeddingMode::Html => self.embed_texts(&texts(|s| &s.html), mode)?,
            EmbeddingMode::Concat => {
                let t = self.embed_texts(&texts(|s| &s.text), EmbeddingMode::Text)?;
                let h = self.embed_texts(&texts(|s| &s.html), EmbeddingMode::Html)?;
                t.iter().zip(&h).map(|(t, h)| concat_unit(t, h)).collect::<Result<_, _>>()?
            }
        };
        let dim = vectors.first().map_or(0, Vec::len);
        Ok(EmbeddingMatrix {
            vectors,
            dim,
            provider: self.provider.name().to_string(),
            mode,
        })
    }

    /// Unit vectors for `texts` in input order. `mode` must be text or html.
    fn embed_texts(&self, texts: &[String], mode: EmbeddingMode) -> Result<Vec<Vec<f32>>, EmbedError> {
        let (name, model) = (self.provider.name(), self.provider.model());
        let keys: Vec<String> = texts
            .iter()
            .map(|t| cache_key(name, model, mode.as_str(), t.as_bytes()))
            .collect();

        let mut found: HashMap<&str, Vec<f32>> = HashMap::new();
        let mut missing: Vec<usize> = Vec::new();
        let mut pending: HashSet<&str> = HashSet::new();
        for (i, key) in keys.iter().enumerate() {
            if found.contains_key(key.as_str()) || pending.contains(key.as_str()) {
                continue;
            }
            match self.cache.as_ref().map(|c| c.get(key)).transpose()?.flatten() {
                Some(v) => {
                    found.insert(key, v);
                }
                None => {
                    pending.insert(key);
                    missing.push(i);
                }
            }
        }

        let batches: Vec<&[usize]> = missing.chunks(self.batch_size).collect();
        let fresh = self.run_batches(texts, &batches)?;
        let mut dim = found.values().next().map(Vec::len);
        for (&i, vector) in missing.iter().zip(fresh) {
            let expected = *dim.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(EmbedError::DimensionMismatch(expected, vector.len()));
            }
            if let Some(cache) = &self.cache {
                let entry = CacheEntry {
                    provider: name.to_string(),
                    model: model.to_string(),
                    mode: mode.as_str().to_string(),
                    dim: vector.len(),
                };
                cache.put(&keys[i], entry, &vector)?;
            }
            found.insert(&keys[i], vector);
        }
        if let Some(expected) = dim {
            if let Some(bad) = found.values().find(|v| v.len() != expected) {
                return Err(EmbedError::DimensionMismatch(expected, bad.len()));
            }
        }
        if let Some(cache) = &self.cache {
            if !missing.is_empty() {
                cache.flush()?;
            }
        }
        Ok(keys.iter().map(|k| found[k.as_str()].clone()).collect())
    }

    /// Calls the provider for every batch, at most `max_in_flight` at a time.
    /// Output is flattened in batch order regardless of completion order.
    fn run_batches(&self, texts: &[String], batches: &[&[usize]]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if batches.is_empty() {
            return Ok(Vec::new());
        }
        let next = AtomicUsize::new(0);
        type BatchResult = Result<Vec<Vec<f32>>, EmbedError>;
        let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new((0..batches.len()).map(|_| None).collect());
        let workers = self.max_in_flight.min(batches.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() {
                        break;
                    }
                    let outcome = self.call_with_retry(b, texts, batches);
                    let failed = outcome.is_err();
                    results.lock().expect("batch results lock")[b] = Some(outcome);
                    if failed {
                        // Stop handing out new batches.
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::new();
        for slot in results.into_inner().expect("batch results lock") {
            match slot {
                Some(Ok(vectors)) => out.extend(vectors),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok(out)
    }

    fn call_with_retry(&self, b: usize, texts: &[String], batches: &[&[usize]]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let batch = batches[b];
        let inputs: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
        let mut delay = self.retry.base_delay;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let fail = |source| EmbedError::BatchFailed {
                batch: b,
                first: batch[0],
                end: batch[batch.len() - 1] + 1,
                attempts: attempt,
                source,
            };
            match self.provider.embed_batch(&inputs) {
                Ok(raw) if raw.len() == inputs.len() => {
                    return raw
                        .iter()
                        .map(|v| normalize(&v.iter().map(|x| f64::from(*x)).collect::<Vec<_>>()))
                        .collect();
                }
                Ok(raw) => {
                    return Err(fail(ProviderError::Response(format!(
                        "{} vectors for {} inputs",
                        raw.len(),
                        inputs.len()
                    ))))
                }
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(fail(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChapterRef, Idiom};
    use std::sync::atomic::AtomicU32;

    struct Counting {
        calls: AtomicU32,
        fail_first: u32,
        dims: Vec<usize>,
    }

    impl Counting {
        fn new(fail_first: u32) -> Self {
            Self { calls: AtomicU32::new(0), fail_first, dims: vec![] }
        }
    }

    impl EmbeddingProvider for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn model(&self) -> &str {
            "m1"
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(ProviderError::Transport("connection reset".into()));
            }
            let dim = self.dims.get(n as usize).copied().unwrap_or(8);
            Ok(texts.iter().map(|t| {
                let mut v = hash_embed(t, 8);
                v.resize(dim, 0.5);
                v
            }).collect())
        }
    }

    fn segments(texts: &[&str]) -> Vec<Segment> {
        let chapter = ChapterRef {
            idiom: Idiom::new("puter").unwrap(),
            volume_id: "v".into(),
            chapter_key: "k".into(),
        };
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Segment::new(&chapter, i, t.to_string(), format!("<li>{t}</li>")))
            .collect()
    }

    fn no_wait() -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::ZERO }
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3f32, -0.4, 1.2];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-7);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbedError::ZeroVector)));
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn concat_example() {
        let v = concat_unit(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(v, vec![h, 0.0, 0.0, h]);
    }

    #[test]
    fn empty_input_gives_empty_matrix() {
        let e = Embedder::new(Arc::new(Counting::new(0)), 2).unwrap();
        let m = e.embed_segments(&[], EmbeddingMode::Text).unwrap();
        assert_eq!(m.len(), 0);
    }

    #[test]
    fn batching_preserves_order() {
        let provider = Arc::new(Counting::new(0));
        let e = Embedder::new(provider.clone(), 2).unwrap().with_max_in_flight(4);
        let segs = segments(&["uno", "dus", "trais"]);
        let m = e.embed_segments(&segs, EmbeddingMode::Text).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 2);
        assert_eq!(m.len(), 3);
        for (row, s) in m.vectors.iter().zip(&segs) {
            assert_eq!(row, &hash_embed(&s.text, 8));
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let provider = Arc::new(Counting::new(2));
        let e = Embedder::new(provider.clone(), 10).unwrap().with_retry(no_wait());
        e.embed_segments(&segments(&["a"]), EmbeddingMode::Text).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_name_the_batch() {
        let provider = Arc::new(Counting::new(100));
        let e = Embedder::new(provider.clone(), 2).unwrap().with_retry(no_wait());
        let err = e.embed_segments(&segments(&["a", "b", "c"]), EmbeddingMode::Text).unwrap_err();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
        match err {
            EmbedError::BatchFailed { batch, first, end, attempts, .. } => {
                assert_eq!((batch, first, end, attempts), (0, 0, 2, 3));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dimension_change_between_batches_is_an_error() {
        let provider = Arc::new(Counting { dims: vec![8, 9], ..Counting::new(0) });
        let e = Embedder::new(provider, 1).unwrap();
        let err = e.embed_segments(&segments(&["a", "b"]), EmbeddingMode::Text).unwrap_err();
        assert!(matches!(err, EmbedError::DimensionMismatch(8, 9)));
    }

    #[test]
    fn cache_serves_repeat_requests() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(EmbeddingCache::open(dir.path()).unwrap());
        let provider = Arc::new(Counting::new(0));
        let e = Embedder::new(provider.clone(), 2).unwrap().with_cache(cache.clone());
        let segs = segments(&["a", "b", "a"]);
        let first = e.embed_segments(&segs, EmbeddingMode::Concat).unwrap();
        let calls = provider.calls.load(Ordering::SeqCst);
        assert_eq!(calls, 2, "duplicates embedded once, text and html one batch each");
        assert_eq!(cache.len(), 4);
        let second = e.embed_segments(&segs, EmbeddingMode::Concat).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), calls);
        assert_eq!(first, second);
        assert_eq!(first.vectors[0], first.vectors[2]);
    }

    #[test]
    fn concat_cosine_is_mean_of_component_cosines() {
        let e = Embedder::new(Arc::new(HashProvider::new(64).unwrap()), 8).unwrap();
        let segs = segments(&["la polizia", "il polizist", "quatter chavals"]);
        let t = e.embed_segments(&segs, EmbeddingMode::Text).unwrap();
        let h = e.embed_segments(&segs, EmbeddingMode::Html).unwrap();
        let c = e.embed_segments(&segs, EmbeddingMode::Concat).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mean = (cosine(&t.vectors[i], &t.vectors[j]).unwrap() + cosine(&h.vectors[i], &h.vectors[j]).unwrap()) / 2.0;
                assert!((cosine(&c.vectors[i], &c.vectors[j]).unwrap() - mean).abs() < 1e-6);
            }
        }
    }
}
