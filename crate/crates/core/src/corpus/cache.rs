use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::CorpusError;
use crate::digest::sha256_hex;

pub const CACHE_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCacheEntry {
    pub key: String,
    pub values: Vec<f32>,
}

impl EmbeddingCacheEntry {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Default)]
struct Inner {
    dim: Option<usize>,
    entries: BTreeMap<String, Vec<f32>>,
    dirty: bool,
}

/// Binary embedding store, one file per featurizer configuration.
///
/// Layout (all integers little-endian): `EMB1`, entry count `u32`, dim `u32`,
/// then per entry a `u16` key length, the UTF-8 key and `dim` `f32` values.
/// Entries are written in key order. Reads share a lock; writes are serialized.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    inner: RwLock<Inner>,
}

impl EmbeddingCache {
    /// Content-addressed key: digest of the image bytes plus the featurizer
    /// config digest.
    pub fn key(image_bytes: &[u8], config_digest: &str) -> String {
        format!("{}:{}", &sha256_hex(image_bytes)[..32], config_digest)
    }

    /// Open an existing cache file or start an empty one at `path`.
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let inner = match fs::read(path) {
            Ok(bytes) => decode(path, &bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Inner::default(),
            Err(e) => return Err(CorpusError::io(path, e)),
        };
        Ok(EmbeddingCache {
            path: path.to_path_buf(),
            inner: RwLock::new(inner),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> Option<usize> {
        self.inner.read().expect("cache lock").dim
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: &str, values: &[f32]) -> Result<(), CorpusError> {
        if values.is_empty() {
            return Err(CorpusError::DimMismatch {
                expected: self.dim().unwrap_or(1),
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(key.to_string()));
        }
        if key.len() > u16::MAX as usize {
            return Err(CorpusError::CacheFormat {
                path: self.path.clone(),
                message: format!("key of {} bytes exceeds u16 length prefix", key.len()),
            });
        }
        let mut inner = self.inner.write().expect("cache lock");
        match inner.dim {
            Some(d) if d != values.len() => {
                return Err(CorpusError::DimMismatch {
                    expected: d,
                    actual: values.len(),
                })
            }
            _ => inner.dim = Some(values.len()),
        }
        inner.entries.insert(key.to_string(), values.to_vec());
        inner.dirty = true;
        Ok(())
    }

    /// `None` means the key was never stored.
    pub fn get(&self, key: &str) -> Option<Vec<f32>> {
        self.inner.read().expect("cache lock").entries.get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.read().expect("cache lock").entries.contains_key(key)
    }

    pub fn entries(&self) -> Vec<EmbeddingCacheEntry> {
        let inner = self.inner.read().expect("cache lock");
        inner
            .entries
            .iter()
            .map(|(k, v)| EmbeddingCacheEntry {
                key: k.clone(),
                values: v.clone(),
            })
            .collect()
    }

    /// Persist pending writes (temp file + rename). No-op when clean.
    pub fn flush(&self) -> Result<(), CorpusError> {
        let mut inner = self.inner.write().expect("cache lock");
        if !inner.dirty {
            return Ok(());
        }
        let bytes = encode(&inner);
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
        let mut tmp = self.path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let mut f = File::create(&tmp).map_err(|e| CorpusError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| CorpusError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CorpusError::io(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| CorpusError::io(&self.path, e))?;
        inner.dirty = false;
        Ok(())
    }
}

fn encode(inner: &Inner) -> Vec<u8> {
    let dim = inner.dim.unwrap_or(0);
    let mut out = Vec::with_capacity(12 + inner.entries.len() * (40 + dim * 4));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(inner.entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (key, values) in &inner.entries {
        out.extend_from_slice(&(key.len() as u16).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Inner, CorpusError> {
    let fail = |message: &str| CorpusError::CacheFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != CACHE_MAGIC {
        return Err(fail("missing EMB1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if count > 0 && dim == 0 {
        return Err(fail("zero dim with entries present"));
    }
    let mut pos = 12;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len_bytes = bytes.get(pos..pos + 2).ok_or_else(|| fail("truncated key length"))?;
        let key_len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 2;
        let key = bytes.get(pos..pos + key_len).ok_or_else(|| fail("truncated key"))?;
        let key = std::str::from_utf8(key).map_err(|_| fail("key is not UTF-8"))?.to_string();
        pos += key_len;
        let raw = bytes.get(pos..pos + dim * 4).ok_or_else(|| fail("truncated values"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += dim * 4;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(key));
        }
        entries.insert(key, values);
    }
    if pos != bytes.len() {
        return Err(fail("trailing bytes after last entry"));
    }
    Ok(Inner {
        dim: (dim > 0).then_some(dim),
        entries,
        dirty: false,
    })
}
