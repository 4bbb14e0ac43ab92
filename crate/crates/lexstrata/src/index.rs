//! Exact brute-force vector index with reproducible on-disk layout.
//!
//! The index holds one record per chunk: metadata plus a unit vector.
//! Search computes cosine similarity against every record — exact by
//! construction, no approximation — and breaks ties deterministically, so
//! the same index and query always produce the same ranking on every
//! platform. Persistence splits cleanly into three files:
//!
//! * `manifest.json` — header: format version, dims, counts, provenance;
//! * `meta.jsonl` — one JSON object per record, vectors omitted;
//! * `vectors.f32` — headerless little-endian `f32`, row-major, in record
//!   order.
//!
//! A save→load round trip reproduces every vector bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Layer;
use crate::embed::cosine;
use crate::selector::DocSpan;

/// On-disk format version written to (and required in) the manifest.
pub const FORMAT_VERSION: u32 = 1;
/// Header file name inside an index directory.
pub const MANIFEST_FILE: &str = "manifest.json";
/// Per-record metadata file name.
pub const META_FILE: &str = "meta.jsonl";
/// Raw vector file name.
pub const VECTORS_FILE: &str = "vectors.f32";

/// Errors produced by the vector index.
#[derive(Debug, Error)]
pub enum IndexError {
    /// A record's chunk id is already present.
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunkId(String),
    /// A vector's width disagrees with the index.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    /// Search was attempted on an index with no records.
    #[error("search over an empty index")]
    EmptyIndex,
    /// Files on disk do not describe a coherent index.
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index metadata: {0}")]
    Json(#[from] serde_json::Error),
}

/// One indexed chunk: everything retrieval needs, plus the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub chunk_id: String,
    pub label: String,
    pub layer: Layer,
    pub span: DocSpan,
    pub token_count: usize,
    pub vector: Vec<f32>,
}

impl VectorRecord {
    /// Pairs a chunk's metadata with its embedding vector.
    pub fn from_chunk(chunk: &crate::chunker::Chunk, vector: Vec<f32>) -> VectorRecord {
        VectorRecord {
            chunk_id: chunk.chunk_id.clone(),
            label: chunk.label.clone(),
            layer: chunk.layer,
            span: DocSpan::new(chunk.doc_id.clone(), chunk.span.start, chunk.span.end),
            token_count: chunk.token_count,
            vector,
        }
    }
}

/// Index header, persisted as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    /// Sorted, de-duplicated document ids of all records.
    pub doc_ids: Vec<String>,
    pub dims: usize,
    pub record_count: usize,
    /// Token counting rule the chunk token counts were produced with.
    pub tokenizer: String,
    /// Identity of the embedding provider (kind:model:dims); only vectors
    /// from the same fingerprint are comparable.
    pub provider_fingerprint: String,
}

/// One search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub label: String,
    pub layer: Layer,
    pub span: DocSpan,
    pub token_count: usize,
    pub similarity: f64,
}

/// Metadata row as stored in `meta.jsonl` (a record minus its vector).
#[derive(Serialize, Deserialize)]
struct MetaRow {
    chunk_id: String,
    label: String,
    layer: Layer,
    span: DocSpan,
    token_count: usize,
}

/// In-memory exact-search index.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dims: usize,
    tokenizer: String,
    provider_fingerprint: String,
    records: Vec<VectorRecord>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    /// Creates an empty index for vectors of width `dims`.
    pub fn new(dims: usize, tokenizer: &str, provider_fingerprint: &str) -> VectorIndex {
        VectorIndex {
            dims,
            tokenizer: tokenizer.to_string(),
            provider_fingerprint: provider_fingerprint.to_string(),
            records: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    /// The manifest that [`VectorIndex::save`] would write right now.
    pub fn manifest(&self) -> IndexManifest {
        let doc_ids: BTreeSet<String> = self
            .records
            .iter()
            .map(|r| r.span.doc_id.clone())
            .collect();
        IndexManifest {
            format_version: FORMAT_VERSION,
            doc_ids: doc_ids.into_iter().collect(),
            dims: self.dims,
            record_count: self.records.len(),
            tokenizer: self.tokenizer.clone(),
            provider_fingerprint: self.provider_fingerprint.clone(),
        }
    }

    /// Adds a batch of records, all or nothing.
    ///
    /// The whole batch is validated first — vector widths
    /// ([`IndexError::DimensionMismatch`]) and chunk-id uniqueness against
    /// both the index and the batch itself
    /// ([`IndexError::DuplicateChunkId`]) — and only then committed, so a
    /// failed call leaves the index unchanged.
    pub fn add_records(&mut self, records: Vec<VectorRecord>) -> Result<(), IndexError> {
        let mut batch_ids: BTreeSet<&str> = BTreeSet::new();
        for record in &records {
            if record.vector.len() != self.dims {
                return Err(IndexError::DimensionMismatch {
                    left: self.dims,
                    right: record.vector.len(),
                });
            }
            if self.by_id.contains_key(&record.chunk_id)
                || !batch_ids.insert(record.chunk_id.as_str())
            {
                return Err(IndexError::DuplicateChunkId(record.chunk_id.clone()));
            }
        }
        for record in records {
            self.by_id.insert(record.chunk_id.clone(), self.records.len());
            self.records.push(record);
        }
        Ok(())
    }

    /// Looks a record up by chunk id.
    pub fn get(&self, chunk_id: &str) -> Option<&VectorRecord> {
        self.by_id.get(chunk_id).map(|&i| &self.records[i])
    }

    /// Exact nearest-neighbour search: cosine against every record,
    /// descending similarity, at most `k` hits.
    ///
    /// Ties are broken deterministically: smaller `token_count` first, then
    /// lexicographically smaller label. Errors: [`IndexError::EmptyIndex`]
    /// when no records exist, [`IndexError::DimensionMismatch`] when the
    /// query width is wrong.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if self.records.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dims {
            return Err(IndexError::DimensionMismatch {
                left: self.dims,
                right: query.len(),
            });
        }
        let mut hits: Vec<SearchHit> = self
            .records
            .iter()
            .map(|r| {
                let similarity = cosine(query, &r.vector).expect("widths checked");
                SearchHit {
                    chunk_id: r.chunk_id.clone(),
                    label: r.label.clone(),
                    layer: r.layer,
                    span: r.span.clone(),
                    token_count: r.token_count,
                    similarity,
                }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .expect("cosine is finite")
                .then_with(|| a.token_count.cmp(&b.token_count))
                .then_with(|| a.label.cmp(&b.label))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Writes `manifest.json`, `meta.jsonl` and `vectors.f32` into `dir`
    /// (created if missing). Each file lands atomically via a temporary
    /// file and rename.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;

        let manifest = serde_json::to_string_pretty(&self.manifest())? + "\n";
        write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;

        let mut meta = String::new();
        for record in &self.records {
            let row = MetaRow {
                chunk_id: record.chunk_id.clone(),
                label: record.label.clone(),
                layer: record.layer,
                span: record.span.clone(),
                token_count: record.token_count,
            };
            meta.push_str(&serde_json::to_string(&row)?);
            meta.push('\n');
        }
        write_atomic(&dir.join(META_FILE), meta.as_bytes())?;

        let mut bytes = Vec::with_capacity(self.records.len() * self.dims * 4);
        for record in &self.records {
            for value in &record.vector {
                bytes.extend_from_slice(&value.to_le_bytes());
            }
        }
        write_atomic(&dir.join(VECTORS_FILE), &bytes)?;
        Ok(())
    }

    /// Loads an index saved by [`VectorIndex::save`], verifying that the
    /// three files agree with each other.
    pub fn load(dir: impl AsRef<Path>) -> Result<VectorIndex, IndexError> {
        let dir = dir.as_ref();
        let manifest: IndexManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!(
                "format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }

        let meta_file = fs::File::open(dir.join(META_FILE))?;
        let mut rows: Vec<MetaRow> = Vec::new();
        for line in BufReader::new(meta_file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line)?);
        }
        if rows.len() != manifest.record_count {
            return Err(IndexError::Corrupt(format!(
                "{} metadata rows but manifest says {}",
                rows.len(),
                manifest.record_count
            )));
        }

        let bytes = fs::read(dir.join(VECTORS_FILE))?;
        let expected = manifest
            .record_count
            .checked_mul(manifest.dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| IndexError::Corrupt("vector size overflow".to_string()))?;
        if bytes.len() != expected {
            return Err(IndexError::Corrupt(format!(
                "vector file holds {} bytes, expected {expected}",
                bytes.len()
            )));
        }

        let mut index = VectorIndex::new(
            manifest.dims,
            &manifest.tokenizer,
            &manifest.provider_fingerprint,
        );
        let mut records = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let start = i * manifest.dims * 4;
            let vector: Vec<f32> = bytes[start..start + manifest.dims * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(VectorRecord {
                chunk_id: row.chunk_id,
                label: row.label,
                layer: row.layer,
                span: row.span,
                token_count: row.token_count,
                vector,
            });
        }
        index
            .add_records(records)
            .map_err(|e| IndexError::Corrupt(e.to_string()))?;
        if index.manifest().doc_ids != manifest.doc_ids {
            return Err(IndexError::Corrupt(
                "manifest doc_ids disagree with metadata".to_string(),
            ));
        }
        Ok(index)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_data()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
