//! On-disk embedding cache: one little-endian f32 file per key plus a JSON index.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const INDEX_FILE: &str = "index.json";
const VECTOR_DIR: &str = "vectors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub model: String,
    pub mode: String,
    pub dim: usize,
}

/// SHA-256 over the length-prefixed provider name, model, mode and input bytes.
pub fn cache_key(provider: &str, model: &str, mode: &str, input: &[u8]) -> String {
    let mut hasher = Sha256::new();
    for part in [provider.as_bytes(), model.as_bytes(), mode.as_bytes(), input] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Readers share the index lock; writes are serialized.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    index: RwLock<BTreeMap<String, CacheEntry>>,
    writer: Mutex<()>,
}

impl EmbeddingCache {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir.join(VECTOR_DIR))?;
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() {
            serde_json::from_slice(&fs::read(&index_path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", index_path.display())))?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            index: RwLock::new(index),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn vector_path(&self, key: &str) -> PathBuf {
        self.dir.join(VECTOR_DIR).join(format!("{key}.f32"))
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> io::Result<Option<Vec<f32>>> {
        let Some(entry) = self.index.read().expect("cache index lock").get(key).cloned() else {
            return Ok(None);
        };
        let bytes = match fs::read(self.vector_path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        if bytes.len() != entry.dim * 4 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("cache vector {key} has {} bytes, expected {}", bytes.len(), entry.dim * 4),
            ));
        }
        Ok(Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    }

    pub fn put(&self, key: &str, entry: CacheEntry, vector: &[f32]) -> io::Result<()> {
        debug_assert_eq!(entry.dim, vector.len());
        let _guard = self.writer.lock().expect("cache writer lock");
        let bytes: Vec<u8> = vector.iter().flat_map(|x| x.to_le_bytes()).collect();
        let path = self.vector_path(key);
        let tmp = path.with_extension("f32.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        self.index.write().expect("cache index lock").insert(key.to_string(), entry);
        Ok(())
    }

    /// Persists the index; vectors are already on disk after `put`.
    pub fn flush(&self) -> io::Result<()> {
        let _guard = self.writer.lock().expect("cache writer lock");
        let mut bytes = serde_json::to_vec_pretty(&*self.index.read().expect("cache index lock"))?;
        bytes.push(b'\n');
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, self.dir.join(INDEX_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(dim: usize) -> CacheEntry {
        CacheEntry {
            provider: "hash".into(),
            model: "m".into(),
            mode: "text".into(),
            dim,
        }
    }

    #[test]
    fn keys_separate_fields() {
        assert_ne!(cache_key("ab", "c", "text", b"x"), cache_key("a", "bc", "text", b"x"));
        assert_ne!(cache_key("a", "b", "text", b"x"), cache_key("a", "b", "html", b"x"));
        assert_eq!(cache_key("a", "b", "text", b"x").len(), 64);
    }

    #[test]
    fn hits_are_bit_identical_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![0.1f32, -0.0, f32::MIN_POSITIVE, 1.0 / 3.0];
        {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            assert_eq!(cache.get("k").unwrap(), None);
            cache.put("k", entry(4), &v).unwrap();
            cache.flush().unwrap();
        }
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let got = cache.get("k").unwrap().unwrap();
        let bits = |xs: &[f32]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&got), bits(&v));
    }

    #[test]
    fn truncated_vector_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        cache.put("k", entry(2), &[1.0, 0.0]).unwrap();
        fs::write(dir.path().join("vectors/k.f32"), [0u8; 3]).unwrap();
        assert!(cache.get("k").is_err());
    }
}
