//! Dense text embeddings and sentiment triples.
//!
//! Two providers implement [`Provider`]: [`FileProvider`] serves a fixture
//! store keyed by content hash, [`ServiceProvider`] calls the companion HTTP
//! service. Both key texts by the SHA-256 of their minimally preprocessed form,
//! so a report maps to one vector regardless of which split it lands in.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textprep::preprocess_minimal;

pub const EMBEDDING_DIM: usize = 768;
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
/// Largest batch the service accepts.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub model_tag: String,
}

impl Embedding {
    pub fn new(vector: Vec<f64>, model_tag: impl Into<String>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::InvalidEmbedding(format!("expected {EMBEDDING_DIM} values, got {}", vector.len())));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("non-finite value at {i}")));
        }
        Ok(Embedding { vector, model_tag: model_tag.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentTriple {
    pub positive: f64,
    pub neutral: f64,
    pub negative: f64,
}

impl SentimentTriple {
    /// Neutral default used for empty text in file mode.
    pub const NEUTRAL: SentimentTriple = SentimentTriple { positive: 0.0, neutral: 1.0, negative: 0.0 };

    /// Validates the simplex invariant: each score in [0, 1], sum 1 within 1e-6.
    pub fn new(positive: f64, neutral: f64, negative: f64) -> Result<Self> {
        let all = [positive, neutral, negative];
        let in_range = all.iter().all(|v| v.is_finite() && (-SIMPLEX_TOLERANCE..=1.0 + SIMPLEX_TOLERANCE).contains(v));
        if !in_range || (all.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::SimplexViolation(positive, neutral, negative));
        }
        Ok(SentimentTriple { positive, neutral, negative })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.positive, self.neutral, self.negative]
    }
}

/// SHA-256 (hex) of the minimally preprocessed text.
pub fn content_hash(text: &str) -> String {
    hash_prepared(&preprocess_minimal(text))
}

fn hash_prepared(prepared: &str) -> String {
    hex::encode(Sha256::digest(prepared.as_bytes()))
}

pub trait Provider: Send + Sync {
    fn model_tag(&self) -> &str;

    /// Embedding of the raw report text. Deterministic per (provider, text).
    fn embedding(&self, text: &str) -> Result<Arc<Embedding>>;

    fn sentiment(&self, text: &str) -> Result<SentimentTriple>;

    /// Warms caches for a batch of texts. File providers have nothing to do.
    fn prefetch(&self, _texts: &[&str]) -> Result<()> {
        Ok(())
    }
}

/// One line of a fixture store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub hash: String,
    /// Minimally preprocessed text.
    pub text: String,
    pub embedding: Vec<f64>,
    pub sentiment: [f64; 3],
    pub model_tag: String,
}

impl FixtureRecord {
    pub fn new(raw_text: &str, embedding: Vec<f64>, sentiment: SentimentTriple, model_tag: &str) -> Self {
        let text = preprocess_minimal(raw_text);
        FixtureRecord {
            hash: hash_prepared(&text),
            text,
            embedding,
            sentiment: sentiment.to_array(),
            model_tag: model_tag.to_string(),
        }
    }
}

struct Entry {
    embedding: Arc<Embedding>,
    sentiment: SentimentTriple,
}

/// Offline provider over a fixture store.
pub struct FileProvider {
    model_tag: String,
    entries: HashMap<String, Entry>,
}

impl FileProvider {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Result<Self> {
        let mut model_tag: Option<String> = None;
        let mut entries = HashMap::new();
        for rec in records {
            match &model_tag {
                None => model_tag = Some(rec.model_tag.clone()),
                Some(tag) if *tag != rec.model_tag => {
                    return Err(Error::ModelTagMismatch { expected: tag.clone(), found: rec.model_tag })
                }
                Some(_) => {}
            }
            if hash_prepared(&rec.text) != rec.hash {
                return Err(Error::InvalidData(format!("fixture hash {} does not match its text", rec.hash)));
            }
            let sentiment = SentimentTriple::from_array(rec.sentiment)?;
            let embedding = Arc::new(Embedding::new(rec.embedding, rec.model_tag)?);
            entries.insert(rec.hash, Entry { embedding, sentiment });
        }
        Ok(FileProvider { model_tag: model_tag.unwrap_or_default(), entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Corrupt { path: path.to_path_buf(), reason: format!("line {}: {e}", i + 1) })?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, text: &str) -> Result<&Entry> {
        let hash = content_hash(text);
        self.entries.get(&hash).ok_or(Error::MissingEmbedding(hash))
    }
}

impl Provider for FileProvider {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embedding(&self, text: &str) -> Result<Arc<Embedding>> {
        self.lookup(text).map(|e| Arc::clone(&e.embedding))
    }

    fn sentiment(&self, text: &str) -> Result<SentimentTriple> {
        if text.trim().is_empty() {
            return Ok(SentimentTriple::NEUTRAL);
        }
        self.lookup(text).map(|e| e.sentiment)
    }
}

pub fn write_fixtures(path: &Path, records: &[FixtureRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextsRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model_tag: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentimentResponse {
    pub model_tag: String,
    pub triples: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_tag: String,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub base_url: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl ServiceConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            max_in_flight: 8,
            retries: 3,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(50),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP client for the companion embedding service.
///
/// Responses are cached by content hash for the client's lifetime, which is
/// what makes repeated lookups bit-identical.
pub struct ServiceProvider {
    config: ServiceConfig,
    agent: ureq::Agent,
    model_tag: String,
    in_flight: Semaphore,
    embeddings: Mutex<HashMap<String, Arc<Embedding>>>,
    sentiments: Mutex<HashMap<String, SentimentTriple>>,
}

#[allow(clippy::result_large_err)]
impl ServiceProvider {
    /// Connects and pins the model tag reported by `/healthz`.
    pub fn connect(config: ServiceConfig) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let mut p = ServiceProvider {
            in_flight: Semaphore::new(config.max_in_flight),
            config,
            agent,
            model_tag: String::new(),
            embeddings: Mutex::new(HashMap::new()),
            sentiments: Mutex::new(HashMap::new()),
        };
        let health: HealthResponse = p.call(|agent, base| agent.get(&format!("{base}/healthz")).call())?;
        p.model_tag = health.model_tag;
        Ok(p)
    }

    /// Reads the service URL from `SENTINEL_PROVIDER_URL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var("SENTINEL_PROVIDER_URL")
            .map_err(|_| Error::Config("SENTINEL_PROVIDER_URL is not set".into()))?;
        Self::connect(ServiceConfig::new(url))
    }

    fn call<T: serde::de::DeserializeOwned>(
        &self,
        send: impl Fn(&ureq::Agent, &str) -> std::result::Result<ureq::Response, ureq::Error>,
    ) -> Result<T> {
        let _permit = self.in_flight.acquire();
        let mut attempt = 0;
        loop {
            let err = match send(&self.agent, &self.config.base_url) {
                Ok(resp) => {
                    return resp
                        .into_json::<T>()
                        .map_err(|e| Error::Transport { retries: attempt, message: format!("bad response body: {e}") })
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 => {
                    let body = resp.into_string().unwrap_or_default();
                    return Err(Error::Transport { retries: attempt, message: format!("status {code}: {body}") });
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.retries {
                return Err(Error::Transport { retries: attempt, message: err });
            }
            std::thread::sleep(self.config.backoff * 2u32.pow(attempt));
            attempt += 1;
        }
    }

    fn check_tag(&self, found: &str) -> Result<()> {
        if found != self.model_tag {
            return Err(Error::ModelTagMismatch { expected: self.model_tag.clone(), found: found.to_string() });
        }
        Ok(())
    }

    fn fetch_embeddings(&self, prepared: &[String]) -> Result<()> {
        for chunk in prepared.chunks(MAX_BATCH) {
            let body = TextsRequest { texts: chunk.to_vec() };
            let resp: EmbedResponse = self.call(|agent, base| agent.post(&format!("{base}/embed")).send_json(&body))?;
            self.check_tag(&resp.model_tag)?;
            if resp.vectors.len() != chunk.len() {
                return Err(Error::InvalidEmbedding(format!(
                    "service returned {} vectors for {} texts",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            let mut cache = self.embeddings.lock().unwrap();
            for (text, v) in chunk.iter().zip(resp.vectors) {
                let e = Embedding::new(v, resp.model_tag.clone())?;
                cache.entry(hash_prepared(text)).or_insert_with(|| Arc::new(e));
            }
        }
        Ok(())
    }

    fn fetch_sentiments(&self, prepared: &[String]) -> Result<()> {
        for chunk in prepared.chunks(MAX_BATCH) {
            let body = TextsRequest { texts: chunk.to_vec() };
            let resp: SentimentResponse =
                self.call(|agent, base| agent.post(&format!("{base}/sentiment")).send_json(&body))?;
            self.check_tag(&resp.model_tag)?;
            if resp.triples.len() != chunk.len() {
                return Err(Error::InvalidData(format!(
                    "service returned {} triples for {} texts",
                    resp.triples.len(),
                    chunk.len()
                )));
            }
            let mut cache = self.sentiments.lock().unwrap();
            for (text, t) in chunk.iter().zip(resp.triples) {
                let t = SentimentTriple::from_array(t)?;
                cache.entry(hash_prepared(text)).or_insert(t);
            }
        }
        Ok(())
    }

    fn missing<V>(cache: &Mutex<HashMap<String, V>>, texts: &[&str]) -> Vec<String> {
        let cache = cache.lock().unwrap();
        let mut seen = std::collections::HashSet::new();
        texts
            .iter()
            .map(|t| preprocess_minimal(t))
            .filter(|p| !cache.contains_key(&hash_prepared(p)) && seen.insert(p.clone()))
            .collect()
    }
}

impl Provider for ServiceProvider {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embedding(&self, text: &str) -> Result<Arc<Embedding>> {
        let hash = content_hash(text);
        if let Some(e) = self.embeddings.lock().unwrap().get(&hash) {
            return Ok(Arc::clone(e));
        }
        self.fetch_embeddings(&[preprocess_minimal(text)])?;
        self.embeddings.lock().unwrap().get(&hash).cloned().ok_or(Error::MissingEmbedding(hash))
    }

    fn sentiment(&self, text: &str) -> Result<SentimentTriple> {
        let hash = content_hash(text);
        if let Some(s) = self.sentiments.lock().unwrap().get(&hash) {
            return Ok(*s);
        }
        self.fetch_sentiments(&[preprocess_minimal(text)])?;
        self.sentiments.lock().unwrap().get(&hash).copied().ok_or(Error::MissingEmbedding(hash))
    }

    fn prefetch(&self, texts: &[&str]) -> Result<()> {
        self.fetch_embeddings(&Self::missing(&self.embeddings, texts))?;
        self.fetch_sentiments(&Self::missing(&self.sentiments, texts))
    }
}

/// Exports the provider's view of `texts` as fixture records, so a service
/// run can be replayed offline.
pub fn export_fixtures(provider: &dyn Provider, texts: &[&str]) -> Result<Vec<FixtureRecord>> {
    provider.prefetch(texts)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for t in texts {
        let hash = content_hash(t);
        if !seen.insert(hash) {
            continue;
        }
        let e = provider.embedding(t)?;
        let s = provider.sentiment(t)?;
        out.push(FixtureRecord::new(t, e.vector.clone(), s, provider.model_tag()));
    }
    Ok(out)
}
