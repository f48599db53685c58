//! Append-only JSON Lines response cache keyed by SHA-256 over a canonical
//! request encoding.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResponse, LlmError};

// Field and stop-entry separators in the canonical key encoding.
const FIELD_SEP: char = '\u{1F}';
const STOP_SEP: char = '\u{1E}';

/// Canonical cache key: SHA-256 hex over (model, endpoint style, prompt,
/// temperature with exactly two fractional digits, max_tokens, stop strings)
/// joined by 0x1F, stop entries joined by 0x1E.
pub fn request_key(endpoint_style: &str, request: &CompletionRequest) -> String {
    let stop = request.stop.join(&STOP_SEP.to_string());
    let canonical = [
        request.model.as_str(),
        endpoint_style,
        request.prompt.as_str(),
        &format!("{:.2}", request.temperature),
        &request.max_tokens.to_string(),
        &stop,
    ]
    .join(&FIELD_SEP.to_string());
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    created_unix_ms: u64,
}

#[derive(Debug, Clone)]
pub struct CachedEntry {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Persistent cache with concurrent lookups and serialized appends.
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, CachedEntry>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    /// Open (or create) a cache file, loading every existing line. An
    /// unparseable line is a hard error, not a skip.
    pub fn open<P: AsRef<Path>>(path: P) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine =
                    serde_json::from_str(&line).map_err(|e| LlmError::CacheCorrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                entries.insert(
                    parsed.key,
                    CachedEntry {
                        text: parsed.text,
                        prompt_tokens: parsed.prompt_tokens,
                        completion_tokens: parsed.completion_tokens,
                    },
                );
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &str) -> Option<CachedEntry> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn append(&self, key: &str, response: &CompletionResponse) -> Result<(), LlmError> {
        let created_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let line = CacheLine {
            key: key.to_string(),
            text: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            created_unix_ms,
        };
        let encoded = serde_json::to_string(&line)
            .map_err(|e| LlmError::MalformedBackendReply(e.to_string()))?;
        {
            let mut writer = self.writer.lock().unwrap();
            writeln!(writer, "{encoded}")?;
        }
        self.entries.lock().unwrap().insert(
            key.to_string(),
            CachedEntry {
                text: line.text,
                prompt_tokens: line.prompt_tokens,
                completion_tokens: line.completion_tokens,
            },
        );
        Ok(())
    }
}
