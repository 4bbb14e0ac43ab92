//! Content-addressed disk cache for embedding vectors.
//!
//! Every entry is one file named by the SHA-256 of `(model, dims, text)` and
//! holding the vector as raw little-endian `f32` bytes. Hits return exactly
//! the bytes that were stored, so a cached embedding is bit-identical to the
//! original — there is no float round-trip through text. Writes go through a
//! temporary file plus rename, so readers never observe a half-written
//! entry.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::EmbedError;

/// Directory-backed vector cache. Cheap to clone the handle by reopening.
#[derive(Debug)]
pub struct VectorCache {
    dir: PathBuf,
}

impl VectorCache {
    /// Opens (creating if needed) a cache rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<VectorCache, EmbedError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(VectorCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, model: &str, dims: usize, text: &str) -> PathBuf {
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0x1f]);
        hasher.update(dims.to_string().as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut name = String::with_capacity(68);
        for byte in digest {
            name.push_str(&format!("{byte:02x}"));
        }
        name.push_str(".vec");
        self.dir.join(name)
    }

    /// Returns the cached vector, or `None` on a miss. An entry whose size
    /// does not match `dims` (e.g. written under another width before a
    /// hash collision — or simply corrupted) is treated as a miss.
    pub fn get(
        &self,
        model: &str,
        dims: usize,
        text: &str,
    ) -> Result<Option<Vec<f32>>, EmbedError> {
        let path = self.entry_path(model, dims, text);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if bytes.len() != dims * 4 {
            return Ok(None);
        }
        let vector = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Some(vector))
    }

    /// Stores `vector` for `(model, dims, text)`. Atomic: concurrent readers
    /// see either the old entry or the complete new one.
    pub fn put(
        &self,
        model: &str,
        dims: usize,
        text: &str,
        vector: &[f32],
    ) -> Result<(), EmbedError> {
        debug_assert_eq!(vector.len(), dims);
        let path = self.entry_path(model, dims, text);
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        let mut bytes = Vec::with_capacity(vector.len() * 4);
        for value in vector {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&bytes)?;
            file.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}
