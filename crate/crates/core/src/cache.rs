//! Append-only, content-addressed record stores used to memoize slow backends.
//!
//! * [`StringCache`]: text file, one `<key>\t<json string>` record per line.
//! * [`EmbeddingCache`]: binary file. Header is the magic `SEMB`, a `u32`
//!   format version and the length-prefixed encoder id; each record is a
//!   length-prefixed UTF-8 key, a `u32` dim, and `dim` little-endian `f32`s.
//!   Opening with a different encoder id discards the old entries.
//!
//! Later records win on reload, so concurrent writers racing on the same key
//! are harmless: entries are content-addressed.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 over the unit-separator-joined parts.
pub fn content_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn bytes_key(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Store<V> {
    entries: HashMap<String, V>,
    file: Option<File>,
}

pub struct StringCache {
    path: Option<PathBuf>,
    inner: Mutex<Store<String>>,
}

impl StringCache {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Store { entries: HashMap::new(), file: None }) }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::load(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::load(path, e))?;
                let Some((k, v)) = line.split_once('\t') else { continue };
                // A torn trailing write is skipped rather than failing the load.
                if let Ok(v) = serde_json::from_str::<String>(v) {
                    entries.insert(k.to_string(), v);
                }
            }
        } else if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: Some(path.to_path_buf()), inner: Mutex::new(Store { entries, file: Some(file) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn insert(&self, key: &str, value: &str) -> Result<()> {
        let mut store = self.inner.lock().unwrap();
        if let Some(f) = store.file.as_mut() {
            let line = format!("{key}\t{}\n", serde_json::to_string(value)?);
            f.write_all(line.as_bytes())?;
        }
        store.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const EMB_MAGIC: &[u8; 4] = b"SEMB";
const EMB_VERSION: u32 = 1;

pub struct EmbeddingCache {
    encoder_id: String,
    inner: Mutex<Store<Vec<f32>>>,
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

impl EmbeddingCache {
    pub fn in_memory(encoder_id: &str) -> Self {
        Self {
            encoder_id: encoder_id.to_string(),
            inner: Mutex::new(Store { entries: HashMap::new(), file: None }),
        }
    }

    /// Opens (or creates) the store for `encoder_id`. A file written by a
    /// different encoder is truncated.
    pub fn open(path: &Path, encoder_id: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut valid = false;
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::load(path, e))?;
            let mut r = BufReader::new(f);
            let mut magic = [0u8; 4];
            if r.read_exact(&mut magic).is_ok()
                && &magic == EMB_MAGIC
                && r.read_u32::<LittleEndian>().ok() == Some(EMB_VERSION)
                && read_str(&mut r).ok().as_deref() == Some(encoder_id)
            {
                valid = true;
                // Stop at the first incomplete record.
                while let Ok(key) = read_str(&mut r) {
                    let Ok(dim) = r.read_u32::<LittleEndian>() else { break };
                    let mut v = vec![0f32; dim as usize];
                    if r.read_f32_into::<LittleEndian>(&mut v).is_err() {
                        break;
                    }
                    entries.insert(key, v);
                }
            }
        } else if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = if valid {
            OpenOptions::new().append(true).open(path)?
        } else {
            if path.exists() {
                log::info!("embedding cache {} belongs to another encoder; discarding", path.display());
            }
            let mut f = File::create(path)?;
            f.write_all(EMB_MAGIC)?;
            f.write_u32::<LittleEndian>(EMB_VERSION)?;
            write_str(&mut f, encoder_id)?;
            f
        };
        Ok(Self {
            encoder_id: encoder_id.to_string(),
            inner: Mutex::new(Store { entries, file: Some(file) }),
        })
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn get(&self, key: &str) -> Option<Vec<f32>> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn insert(&self, key: &str, values: &[f32]) -> Result<()> {
        let mut store = self.inner.lock().unwrap();
        if let Some(f) = store.file.as_mut() {
            let mut buf = BufWriter::new(Vec::with_capacity(8 + key.len() + 4 * values.len()));
            write_str(&mut buf, key)?;
            buf.write_u32::<LittleEndian>(values.len() as u32)?;
            for &v in values {
                buf.write_f32::<LittleEndian>(v)?;
            }
            f.write_all(&buf.into_inner().map_err(|e| e.into_error())?)?;
        }
        store.entries.insert(key.to_string(), values.to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn string_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("knowledge.cache");
        {
            let c = StringCache::open(&p).unwrap();
            c.insert("k1", "line\twith tab\nand newline").unwrap();
            c.insert("k1", "overwritten").unwrap();
            c.insert("k2", "v2").unwrap();
        }
        let c = StringCache::open(&p).unwrap();
        assert_eq!(c.get("k1").as_deref(), Some("overwritten"));
        assert_eq!(c.get("k2").as_deref(), Some("v2"));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn embedding_cache_is_bit_exact_and_versioned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("embeddings.cache");
        let v = vec![0.1f32, -3.5e-8, f32::MIN_POSITIVE, 1.0 / 3.0];
        EmbeddingCache::open(&p, "enc-a").unwrap().insert("x", &v).unwrap();
        let reopened = EmbeddingCache::open(&p, "enc-a").unwrap();
        let got = reopened.get("x").unwrap();
        assert_eq!(got.iter().map(|f| f.to_bits()).collect::<Vec<_>>(), v.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        drop(reopened);
        assert!(EmbeddingCache::open(&p, "enc-b").unwrap().get("x").is_none());
        assert!(EmbeddingCache::open(&p, "enc-a").unwrap().is_empty());
    }

    #[test]
    fn content_key_separates_parts() {
        assert_ne!(content_key(&["ab", "c"]), content_key(&["a", "bc"]));
        assert_eq!(content_key(&["a"]).len(), 64);
    }
}
