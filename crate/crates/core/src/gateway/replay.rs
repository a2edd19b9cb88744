use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{request_digest, validate_request, ChatBackend, ChatMessage, Completion, GatewayError, TokenUsage};
use crate::error::{Error, Result};

/// One recorded exchange; a cassette is a JSONL file of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_id: String,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub estimated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Cassette {
    entries: HashMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            entries.insert(entry.digest.clone(), entry);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&CassetteEntry> {
        self.entries.get(digest)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.values()
    }

    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.entries.values().map(|e| e.model_id.as_str()).collect()
    }

    /// Digests whose stored key does not match a recomputation from the
    /// stored messages, temperature and model id.
    pub fn inconsistent_digests(&self) -> Vec<String> {
        let mut bad: Vec<String> = self
            .entries
            .values()
            .filter(|e| request_digest(&e.messages, e.temperature, &e.model_id) != e.digest)
            .map(|e| e.digest.clone())
            .collect();
        bad.sort();
        bad
    }
}

/// Serves completions from a cassette; never touches the network.
pub struct ReplayBackend {
    model_id: String,
    cassette: Arc<Cassette>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette, model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            cassette: Arc::new(cassette),
        }
    }

    /// Opens `path`. An empty `model_id` is taken from the cassette when it
    /// holds a single model.
    pub fn open(path: impl AsRef<Path>, model_id: &str) -> Result<Self> {
        let cassette = Cassette::load(path)?;
        let model_id = if model_id.is_empty() {
            let ids = cassette.model_ids();
            match ids.len() {
                1 => ids.into_iter().next().unwrap_or_default().to_string(),
                _ => {
                    return Err(Error::invalid(
                        "cassette holds several models; pass the model id explicitly",
                    ))
                }
            }
        } else {
            model_id.to_string()
        };
        Ok(Self::new(cassette, &model_id))
    }
}

impl ChatBackend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        validate_request(messages, temperature)?;
        let digest = request_digest(messages, temperature, &self.model_id);
        let entry = self.cassette.get(&digest).ok_or(GatewayError::CacheMiss { digest })?;
        Ok(Completion {
            text: entry.response_text.clone(),
            usage: TokenUsage {
                input_tokens: entry.input_tokens,
                output_tokens: entry.output_tokens,
                estimated: entry.estimated,
            },
            model_id: entry.model_id.clone(),
        })
    }
}

/// Forwards to an inner backend and appends every new exchange to a cassette.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<(HashSet<String>, File)>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Appends to `path`, creating it if needed. Entries already present are
    /// not written twice.
    pub fn create(inner: B, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let known = if path.exists() {
            Cassette::load(&path)?.entries.into_keys().collect()
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            HashSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            inner,
            path,
            state: Mutex::new((known, file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<Completion, GatewayError> {
        let completion = self.inner.complete(messages, temperature)?;
        let digest = request_digest(messages, temperature, self.inner.model_id());
        let mut state = self.state.lock().expect("cassette lock poisoned");
        if state.0.insert(digest.clone()) {
            let entry = CassetteEntry {
                digest,
                messages: messages.to_vec(),
                temperature,
                model_id: self.inner.model_id().to_string(),
                response_text: completion.text.clone(),
                input_tokens: completion.usage.input_tokens,
                output_tokens: completion.usage.output_tokens,
                estimated: completion.usage.estimated,
            };
            let mut line = serde_json::to_vec(&entry).expect("cassette entry serializes");
            line.push(b'\n');
            state
                .1
                .write_all(&line)
                .and_then(|_| state.1.flush())
                .map_err(|e| GatewayError::Network(format!("cassette write failed: {e}")))?;
        }
        Ok(completion)
    }
}
