//! Append-only transcript store.
//!
//! Each record is a little-endian `u32` payload length followed by the
//! payload: five length-prefixed UTF-8 fields (`u32` LE length, then bytes)
//! in the order prompt hash, model name, variant index (decimal), response
//! text, RFC 3339 timestamp.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub model_name: String,
    pub variant_index: u32,
    pub text: String,
    pub timestamp: String,
}

impl TranscriptEntry {
    fn encode(&self) -> Vec<u8> {
        let index = self.variant_index.to_string();
        let fields: [&str; 5] = [
            &self.prompt_hash,
            &self.model_name,
            &index,
            &self.text,
            &self.timestamp,
        ];
        let mut payload = Vec::new();
        for f in fields {
            payload.extend_from_slice(&(f.len() as u32).to_le_bytes());
            payload.extend_from_slice(f.as_bytes());
        }
        let mut out = Vec::with_capacity(payload.len() + 4);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    fn decode(payload: &[u8]) -> Option<Self> {
        let mut fields = Vec::with_capacity(5);
        let mut rest = payload;
        for _ in 0..5 {
            let len = u32::from_le_bytes(rest.get(..4)?.try_into().ok()?) as usize;
            let bytes = rest.get(4..4 + len)?;
            fields.push(String::from_utf8(bytes.to_vec()).ok()?);
            rest = &rest[4 + len..];
        }
        if !rest.is_empty() {
            return None;
        }
        let mut it = fields.into_iter();
        let prompt_hash = it.next()?;
        let model_name = it.next()?;
        let variant_index = it.next()?.parse().ok()?;
        let text = it.next()?;
        let timestamp = it.next()?;
        Some(Self {
            prompt_hash,
            model_name,
            variant_index,
            text,
            timestamp,
        })
    }
}

struct Inner {
    file: File,
    variants: HashMap<(String, String), Vec<String>>,
}

pub struct TranscriptStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl TranscriptStore {
    /// Opens (creating if needed) a store. A record cut short by a crash at
    /// the end of the file is dropped so later appends stay aligned.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let corrupt = |offset: usize| GatewayError::Store {
            path: path.to_path_buf(),
            message: format!("malformed record at byte {offset}"),
        };
        let mut variants: HashMap<(String, String), Vec<String>> = HashMap::new();
        let mut offset = 0;
        while offset < bytes.len() {
            let Some(len) = bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            else {
                break;
            };
            let Some(payload) = bytes.get(offset + 4..offset + 4 + len) else {
                break;
            };
            let entry = TranscriptEntry::decode(payload).ok_or_else(|| corrupt(offset))?;
            let list = variants
                .entry((entry.prompt_hash, entry.model_name))
                .or_default();
            if entry.variant_index as usize != list.len() {
                return Err(corrupt(offset));
            }
            list.push(entry.text);
            offset += 4 + len;
        }
        if offset < bytes.len() {
            log::warn!(
                "{}: dropping {} trailing bytes of an incomplete record",
                path.display(),
                bytes.len() - offset
            );
            file.set_len(offset as u64)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { file, variants }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a response as the next variant for (hash, model) and returns
    /// its variant index.
    pub fn record(&self, prompt_hash: &str, model_name: &str, text: &str) -> Result<u32, GatewayError> {
        let mut inner = self.inner.lock().expect("transcript store poisoned");
        let key = (prompt_hash.to_string(), model_name.to_string());
        let index = inner.variants.get(&key).map_or(0, Vec::len) as u32;
        let entry = TranscriptEntry {
            prompt_hash: key.0.clone(),
            model_name: key.1.clone(),
            variant_index: index,
            text: text.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        inner.file.write_all(&entry.encode())?;
        inner.file.flush()?;
        inner.variants.entry(key).or_default().push(entry.text);
        Ok(index)
    }

    pub fn variant_count(&self, prompt_hash: &str, model_name: &str) -> usize {
        let inner = self.inner.lock().expect("transcript store poisoned");
        inner
            .variants
            .get(&(prompt_hash.to_string(), model_name.to_string()))
            .map_or(0, Vec::len)
    }

    /// Variant `query_index mod n` of the `n` recorded for (hash, model).
    pub fn variant(&self, prompt_hash: &str, model_name: &str, query_index: u32) -> Option<String> {
        let inner = self.inner.lock().expect("transcript store poisoned");
        let list = inner
            .variants
            .get(&(prompt_hash.to_string(), model_name.to_string()))?;
        if list.is_empty() {
            return None;
        }
        Some(list[query_index as usize % list.len()].clone())
    }

    /// All entries in file order.
    pub fn entries(path: &Path) -> Result<Vec<TranscriptEntry>, GatewayError> {
        let bytes = std::fs::read(path)?;
        let mut out = Vec::new();
        let mut offset = 0;
        while offset + 4 <= bytes.len() {
            let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes")) as usize;
            let Some(payload) = bytes.get(offset + 4..offset + 4 + len) else { break };
            out.push(TranscriptEntry::decode(payload).ok_or_else(|| GatewayError::Store {
                path: path.to_path_buf(),
                message: format!("malformed record at byte {offset}"),
            })?);
            offset += 4 + len;
        }
        Ok(out)
    }
}
