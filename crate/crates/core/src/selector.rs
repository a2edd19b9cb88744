//! Embedding-based selection of few-shot demonstrations and label definitions.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Split, TableDoc};
use crate::definitions::Definition;
use crate::error::{Error, Result};
use crate::gateway::{with_retries, GatewayError, HttpReply, RetryPolicy, Transport};
use crate::serializer::{serialize_table, SerializationOptions};

pub const HASH_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_id: String,
    /// Set when the input had no tokens and the vector is all zeros.
    #[serde(default)]
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Self {
        let degenerate = values.iter().all(|v| *v == 0.0);
        Self {
            values,
            source_id: source_id.into(),
            degenerate,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, GatewayError>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, GatewayError> {
        (**self).embed(text)
    }
}

pub fn embed_text(embedder: &dyn Embedder, text: &str, source_id: &str) -> Result<EmbeddingVector> {
    let values = embedder.embed(text)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Embedding(format!("non-finite embedding for {source_id}")));
    }
    Ok(EmbeddingVector::new(values, source_id))
}

/// Text a table is embedded from: the masked serialization, never gold labels.
pub fn table_text(table: &TableDoc, opts: &SerializationOptions) -> String {
    serialize_table(table, opts)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Offline embedder: hashed bag of lowercase alphanumeric tokens, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(HASH_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        "hashed-bow"
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, GatewayError> {
        let mut v = vec![0.0; self.dim];
        for t in tokens(text) {
            v[self.bucket(&t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// OpenAI-compatible embeddings client.
pub struct HttpEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    transport: Arc<dyn Transport>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            timeout,
            retry,
            transport,
        }
    }
}

fn parse_embedding(reply: HttpReply) -> std::result::Result<Vec<f64>, GatewayError> {
    match reply.status {
        200..=299 => {}
        429 => {
            return Err(GatewayError::RateLimited {
                retry_after: reply.retry_after,
            })
        }
        408 => return Err(GatewayError::Timeout),
        500..=599 => return Err(GatewayError::Server { status: reply.status }),
        status => {
            return Err(GatewayError::Provider {
                status,
                message: reply.body,
            })
        }
    }
    let body: Value =
        serde_json::from_str(&reply.body).map_err(|e| GatewayError::BadResponse(format!("embedding body: {e}")))?;
    body["data"][0]["embedding"]
        .as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| GatewayError::BadResponse("missing data[0].embedding".into()))
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, GatewayError> {
        let body = json!({"input": text, "model": self.model}).to_string();
        with_retries(&self.retry, |_| {
            let reply = self
                .transport
                .post_json(&self.url, self.api_key.as_deref(), &body, self.timeout)?;
            parse_embedding(reply)
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    digest: String,
    model_id: String,
    vector: Vec<f64>,
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Disk cache in front of another embedder, keyed by text digest and model.
pub struct CachedEmbedder<E> {
    inner: E,
    path: PathBuf,
    cache: RwLock<HashMap<(String, String), Vec<f64>>>,
    file: Mutex<File>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
                    path: path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                cache.insert((entry.model_id, entry.digest), entry.vector);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            inner,
            path,
            cache: RwLock::new(cache),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, GatewayError> {
        let key = (self.inner.model_id().to_string(), text_digest(text));
        if let Some(v) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(v.clone());
        }
        let vector = self.inner.embed(text)?;
        let mut file = self.file.lock().expect("cache file lock poisoned");
        let mut cache = self.cache.write().expect("cache lock poisoned");
        if let Entry::Vacant(slot) = cache.entry(key) {
            let line = CacheLine {
                model_id: slot.key().0.clone(),
                digest: slot.key().1.clone(),
                vector: vector.clone(),
            };
            let mut bytes = serde_json::to_vec(&line).expect("cache line serializes");
            bytes.push(b'\n');
            file.write_all(&bytes)
                .map_err(|e| GatewayError::Network(format!("embedding cache write: {e}")))?;
            slot.insert(vector.clone());
        }
        Ok(vector)
    }
}

/// Cosine similarity. Errors on a dimension mismatch or when both vectors
/// are zero; a single zero vector gives 0.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Embedding(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 && nv == 0.0 {
        return Err(Error::Embedding("cosine of two zero vectors".into()));
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Similarity used for ranking: a degenerate pair ranks as 0.
fn rank_score(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    match cosine(u, v) {
        Err(Error::Embedding(_)) if u.dim() == v.dim() => Ok(0.0),
        other => other,
    }
}

/// Candidates ordered by descending similarity, ties broken by `source_id`.
pub fn rank<'a>(
    query: &EmbeddingVector,
    candidates: &'a [EmbeddingVector],
    k: usize,
) -> Result<Vec<(&'a EmbeddingVector, f64)>> {
    let mut scored = candidates
        .iter()
        .map(|c| rank_score(query, c).map(|s| (c, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.source_id.cmp(&b.0.source_id)));
    scored.truncate(k);
    Ok(scored)
}

/// Precomputed embeddings of one corpus split.
pub struct DemoIndex {
    vectors: Vec<EmbeddingVector>,
    opts: SerializationOptions,
}

impl DemoIndex {
    pub fn build(corpus: &Corpus, split: Split, embedder: &dyn Embedder, opts: &SerializationOptions) -> Result<Self> {
        let vectors = corpus
            .split(split)
            .map(|t| embed_text(embedder, &table_text(t, opts), &t.table_id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vectors, opts: *opts })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn embed_query(&self, table: &TableDoc, embedder: &dyn Embedder) -> Result<EmbeddingVector> {
        embed_text(embedder, &table_text(table, &self.opts), &table.table_id)
    }

    /// Top-`k` (table_id, cosine) pairs for `table`.
    pub fn select(&self, table: &TableDoc, embedder: &dyn Embedder, k: usize) -> Result<Vec<(String, f64)>> {
        let q = self.embed_query(table, embedder)?;
        Ok(rank(&q, &self.vectors, k)?
            .into_iter()
            .map(|(v, s)| (v.source_id.clone(), s))
            .collect())
    }
}

/// The `k` training tables most similar to `test_table`, most similar first.
pub fn select_demonstrations(
    test_table: &TableDoc,
    train: &Corpus,
    embedder: &dyn Embedder,
    k: usize,
    opts: &SerializationOptions,
) -> Result<Vec<String>> {
    if train.split_len(Split::Train) == 0 {
        return Err(Error::invalid("demonstration selection needs a non-empty train split"));
    }
    let index = DemoIndex::build(train, Split::Train, embedder, opts)?;
    Ok(index
        .select(test_table, embedder, k)?
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

/// Embeddings of a definition set, source id = label.
pub fn embed_definitions(defs: &[Definition], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>> {
    defs.iter().map(|d| embed_text(embedder, &d.text, &d.label)).collect()
}

/// The `k` definitions most similar to `test_table`, most similar first.
pub fn select_definitions(
    test_table: &TableDoc,
    defs: &[Definition],
    embedder: &dyn Embedder,
    k: usize,
    opts: &SerializationOptions,
) -> Result<Vec<Definition>> {
    let vectors = embed_definitions(defs, embedder)?;
    select_definitions_with(test_table, defs, &vectors, embedder, k, opts)
}

/// As [`select_definitions`] with precomputed definition embeddings.
pub fn select_definitions_with(
    test_table: &TableDoc,
    defs: &[Definition],
    vectors: &[EmbeddingVector],
    embedder: &dyn Embedder,
    k: usize,
    opts: &SerializationOptions,
) -> Result<Vec<Definition>> {
    let q = embed_text(embedder, &table_text(test_table, opts), &test_table.table_id)?;
    let by_label: HashMap<&str, &Definition> = defs.iter().map(|d| (d.label.as_str(), d)).collect();
    Ok(rank(&q, vectors, k)?
        .into_iter()
        .map(|(v, _)| by_label[v.source_id.as_str()].clone())
        .collect())
}

/// Arithmetic mean of per-table mean similarities; tables without scores are skipped.
pub fn mean_of_means(per_table: &[Vec<f64>]) -> Option<f64> {
    let means: Vec<f64> = per_table
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Mean over `tests` of the mean cosine to each table's `k` selected demonstrations.
pub fn mean_demo_similarity(
    index: &DemoIndex,
    tests: &[&TableDoc],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Option<f64>> {
    let per_table = tests
        .iter()
        .map(|t| {
            index
                .select(t, embedder, k)
                .map(|sel| sel.into_iter().map(|(_, s)| s).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(mean_of_means(&per_table))
}
