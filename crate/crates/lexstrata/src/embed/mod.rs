//! Text embedding: providers, pooling, caching, and similarity.
//!
//! The embedding layer turns chunk texts into unit-length `f32` vectors. Two
//! providers exist: a deterministic local feature-hashing embedder (always
//! available, fully offline) and a remote HTTP provider. Texts longer than
//! the provider's input limit are split along natural boundaries, embedded
//! piecewise, mean-pooled, and renormalized. A content-addressed disk cache
//! makes repeated runs byte-identical and cheap.

pub mod cache;
pub mod local;
pub mod remote;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::TokenizerSpec;

pub use cache::VectorCache;
pub use local::LocalEmbedder;
pub use remote::RemoteEmbedder;

/// Smallest permitted vector width.
pub const MIN_DIMS: usize = 8;
/// Largest permitted vector width.
pub const MAX_DIMS: usize = 3072;
/// Vector width used when none is configured.
pub const DEFAULT_DIMS: usize = 256;
/// Smallest permitted split threshold; see [`split_for_limit`].
pub const MIN_SPLIT_TOKENS: usize = 16;

/// Errors produced by the embedding layer.
#[derive(Debug, Error)]
pub enum EmbedError {
    /// `embed_texts` was called with no texts.
    #[error("no texts to embed")]
    EmptyInput,
    /// A text is empty or whitespace-only.
    #[error("text at index {index} is empty or blank")]
    EmptyText { index: usize },
    /// A dimension count is out of range or contradicts the configuration.
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    /// The provider configuration is unusable.
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    /// The environment variable naming the API key is unset or empty.
    #[error("api key environment variable `{0}` is not set")]
    MissingApiKey(String),
    /// The remote provider failed after all retries, or answered garbage.
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    /// Two vectors that must agree in width do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    /// The vector cache could not be read or written.
    #[error("vector cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Which embedding backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Offline feature-hashing embedder; same text, same vector, everywhere.
    DeterministicLocal,
    /// HTTP provider speaking the JSON embeddings protocol.
    Remote,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<ProviderKind, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "local" | "deterministic-local" => Ok(ProviderKind::DeterministicLocal),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider kind `{other}`")),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::DeterministicLocal => "deterministic-local",
            ProviderKind::Remote => "remote",
        })
    }
}

/// Configuration for building an [`EmbeddingService`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Model identifier; part of every cache key and index fingerprint.
    pub model: String,
    /// Vector width, `MIN_DIMS..=MAX_DIMS`.
    pub dims: usize,
    /// Remote endpoint URL. Required for (and only used by) `remote`.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token. The key
    /// itself is never stored in configuration.
    pub api_key_env: Option<String>,
    /// Texts longer than this many tokens are split, embedded piecewise and
    /// mean-pooled. `None` sends texts whole.
    pub max_input_tokens: Option<usize>,
    /// Texts per provider request.
    pub batch_size: usize,
    /// Per-request timeout for the remote provider.
    pub timeout_secs: u64,
    /// Additional attempts after a retryable remote failure.
    pub max_retries: u32,
    /// Directory for the vector cache. `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::DeterministicLocal,
            model: local::LOCAL_MODEL_ID.to_string(),
            dims: DEFAULT_DIMS,
            endpoint: None,
            api_key_env: None,
            max_input_tokens: None,
            batch_size: 32,
            timeout_secs: 30,
            max_retries: 3,
            cache_dir: None,
        }
    }
}

impl ProviderConfig {
    /// Checks ranges that every provider shares.
    pub fn validate(&self) -> Result<(), EmbedError> {
        if !(MIN_DIMS..=MAX_DIMS).contains(&self.dims) {
            return Err(EmbedError::InvalidDims(format!(
                "{} is outside {MIN_DIMS}..={MAX_DIMS}",
                self.dims
            )));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::InvalidConfig(
                "batch_size must be at least 1".to_string(),
            ));
        }
        if let Some(limit) = self.max_input_tokens {
            if limit < MIN_SPLIT_TOKENS {
                return Err(EmbedError::InvalidConfig(format!(
                    "max_input_tokens must be at least {MIN_SPLIT_TOKENS}, got {limit}"
                )));
            }
        }
        if self.timeout_secs == 0 {
            return Err(EmbedError::InvalidConfig(
                "timeout_secs must be at least 1".to_string(),
            ));
        }
        if self.model.trim().is_empty() {
            return Err(EmbedError::InvalidConfig("model must be named".to_string()));
        }
        Ok(())
    }
}

/// A backend that turns batches of texts into vectors.
///
/// Implementations must return exactly one vector per input text, in input
/// order, each `dims()` wide and (for well-behaved providers) unit-length.
pub trait Embedder: Send + Sync {
    /// Identifier recorded in cache keys and index manifests.
    fn model_id(&self) -> &str;
    /// Width of every produced vector.
    fn dims(&self) -> usize;
    /// Embeds one batch. Order-preserving; all-or-nothing.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// High-level embedding front end: validation, splitting, pooling, caching.
pub struct EmbeddingService {
    config: ProviderConfig,
    embedder: Box<dyn Embedder>,
    cache: Option<VectorCache>,
    tokenizer: TokenizerSpec,
}

impl EmbeddingService {
    /// Builds the service described by `config`.
    pub fn new(config: ProviderConfig) -> Result<EmbeddingService, EmbedError> {
        config.validate()?;
        let embedder: Box<dyn Embedder> = match config.kind {
            ProviderKind::DeterministicLocal => {
                Box::new(LocalEmbedder::new(config.dims, &config.model))
            }
            ProviderKind::Remote => Box::new(RemoteEmbedder::from_config(&config)?),
        };
        Self::with_embedder(config, embedder)
    }

    /// Like [`EmbeddingService::new`] but with a caller-supplied backend.
    pub fn with_embedder(
        config: ProviderConfig,
        embedder: Box<dyn Embedder>,
    ) -> Result<EmbeddingService, EmbedError> {
        config.validate()?;
        if embedder.dims() != config.dims {
            return Err(EmbedError::DimensionMismatch {
                left: config.dims,
                right: embedder.dims(),
            });
        }
        let cache = match &config.cache_dir {
            Some(dir) => Some(VectorCache::open(dir)?),
            None => None,
        };
        Ok(EmbeddingService {
            config,
            embedder,
            cache,
            tokenizer: TokenizerSpec::default(),
        })
    }

    pub fn dims(&self) -> usize {
        self.config.dims
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Provider identity string recorded in index manifests. Two indexes
    /// with the same fingerprint hold comparable vectors.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}:{}:{}",
            self.config.kind,
            self.embedder.model_id(),
            self.config.dims
        )
    }

    /// Embeds `texts`, returning one unit vector per text, in order.
    ///
    /// Texts must be non-empty as a list ([`EmbedError::EmptyInput`]) and
    /// individually non-blank ([`EmbedError::EmptyText`]). Texts over the
    /// configured token limit are split with [`split_for_limit`], embedded
    /// piecewise, and mean-pooled. Cache hits return the stored bytes
    /// unchanged, so repeated calls are bit-identical.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        for (index, text) in texts.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(EmbedError::EmptyText { index });
            }
        }

        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        // (text index, its split parts) for every cache miss.
        let mut pending: Vec<(usize, Vec<String>)> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            if let Some(cache) = &self.cache {
                if let Some(hit) = cache.get(self.embedder.model_id(), self.dims(), text)? {
                    out[i] = Some(hit);
                    continue;
                }
            }
            let parts = match self.config.max_input_tokens {
                Some(limit) if self.tokenizer.count(text) > limit => {
                    split_for_limit(text, limit, &self.tokenizer)
                }
                _ => vec![text.clone()],
            };
            pending.push((i, parts));
        }

        // One flat pass over all parts, batched to the configured size.
        let flat: Vec<String> = pending
            .iter()
            .flat_map(|(_, parts)| parts.iter().cloned())
            .collect();
        let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(flat.len());
        for batch in flat.chunks(self.config.batch_size) {
            let got = self.embedder.embed_batch(batch)?;
            if got.len() != batch.len() {
                return Err(EmbedError::ProviderUnavailable(format!(
                    "provider returned {} vectors for {} texts",
                    got.len(),
                    batch.len()
                )));
            }
            for v in &got {
                if v.len() != self.dims() {
                    return Err(EmbedError::InvalidDims(format!(
                        "provider returned width {}, expected {}",
                        v.len(),
                        self.dims()
                    )));
                }
            }
            vectors.extend(got);
        }

        let mut cursor = 0;
        for (i, parts) in &pending {
            let n = parts.len();
            let slice = &vectors[cursor..cursor + n];
            cursor += n;
            let vector = if n == 1 {
                slice[0].clone()
            } else {
                mean_pool(slice)?
            };
            if let Some(cache) = &self.cache {
                cache.put(self.embedder.model_id(), self.dims(), &texts[*i], &vector)?;
            }
            out[*i] = Some(vector);
        }
        Ok(out.into_iter().map(|v| v.expect("every text resolved")).collect())
    }

    /// Convenience wrapper for a single text.
    pub fn embed_one(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed_texts(std::slice::from_ref(&text.to_string()))?.remove(0))
    }
}

/// Scales `v` to unit length. A zero vector is returned unchanged.
pub fn normalize(v: &[f32]) -> Vec<f32> {
    let as_f64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    normalize_f64(&as_f64)
}

pub(crate) fn normalize_f64(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.iter().map(|&x| x as f32).collect();
    }
    v.iter().map(|&x| (x / norm) as f32).collect()
}

/// Averages unit vectors elementwise and renormalizes the mean.
///
/// The result depends only on the multiset of inputs: per dimension the
/// addends are summed in a canonical order, so permuting `vectors` yields a
/// bit-identical result. For two vectors this equals `normalize((u + v) / 2)`
/// computed in `f64`.
pub fn mean_pool(vectors: &[Vec<f32>]) -> Result<Vec<f32>, EmbedError> {
    let first = vectors.first().ok_or(EmbedError::EmptyInput)?;
    let dims = first.len();
    for v in vectors {
        if v.len() != dims {
            return Err(EmbedError::DimensionMismatch {
                left: dims,
                right: v.len(),
            });
        }
    }
    let mut mean = vec![0f64; dims];
    let mut addends: Vec<f32> = Vec::with_capacity(vectors.len());
    for (d, slot) in mean.iter_mut().enumerate() {
        addends.clear();
        addends.extend(vectors.iter().map(|v| v[d]));
        addends.sort_by(f32::total_cmp);
        let sum: f64 = addends.iter().map(|&x| x as f64).sum();
        *slot = sum / vectors.len() as f64;
    }
    Ok(normalize_f64(&mean))
}

/// Cosine similarity of two equal-width vectors, accumulated in `f64` and
/// clamped to `[-1, 1]`.
///
/// Zero vectors have no direction; their similarity to anything is defined
/// as `0.0`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0f64;
    let mut nu = 0f64;
    let mut nv = 0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Boundary ladder for [`split_for_limit`], coarsest first.
const BLANK_LINE: usize = 0;
const NEWLINE: usize = 1;
const SENTENCE: usize = 2;
const SPACE: usize = 3;
const CHAR: usize = 4;

/// Byte positions (ascending, all char boundaries, `0 < p < len`) after
/// which `text` may be cut at the given ladder level.
fn boundary_positions(text: &str, level: usize) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    match level {
        BLANK_LINE => {
            for i in 0..bytes.len().saturating_sub(1) {
                if bytes[i] == b'\n' && bytes[i + 1] == b'\n' {
                    out.push(i + 2);
                }
            }
        }
        NEWLINE => {
            for (i, &b) in bytes.iter().enumerate() {
                if b == b'\n' {
                    out.push(i + 1);
                }
            }
        }
        SENTENCE => {
            for (i, &b) in bytes.iter().enumerate() {
                if matches!(b, b'.' | b'!' | b'?') {
                    out.push(i + 1);
                }
            }
        }
        SPACE => {
            for (i, &b) in bytes.iter().enumerate() {
                if b == b' ' || b == b'\t' {
                    out.push(i + 1);
                }
            }
        }
        _ => {
            out.extend(text.char_indices().skip(1).map(|(i, _)| i));
        }
    }
    out.retain(|&p| p < text.len());
    out
}

/// Splits `text` into parts of at most `max_tokens` tokens each, cutting at
/// the coarsest boundaries that suffice: blank lines, then newlines, then
/// sentence punctuation, then spaces, then (as a last resort) characters.
///
/// Concatenating the returned parts reproduces `text` byte-for-byte; no
/// characters are added or dropped. Parts are as large as the boundary level
/// allows (greedy packing). `max_tokens` must be at least
/// [`MIN_SPLIT_TOKENS`].
pub fn split_for_limit(text: &str, max_tokens: usize, tokenizer: &TokenizerSpec) -> Vec<String> {
    assert!(
        max_tokens >= MIN_SPLIT_TOKENS,
        "max_tokens must be at least {MIN_SPLIT_TOKENS}"
    );
    split_at_level(text, max_tokens, tokenizer, BLANK_LINE)
}

fn split_at_level(
    text: &str,
    max_tokens: usize,
    tokenizer: &TokenizerSpec,
    level: usize,
) -> Vec<String> {
    if tokenizer.count(text) <= max_tokens {
        return vec![text.to_string()];
    }
    let bounds = boundary_positions(text, level);
    if bounds.is_empty() {
        // No cut points at this granularity; try a finer one. The character
        // level always offers a cut for any multi-character text, and a
        // single-character text never exceeds the limit.
        debug_assert!(level < CHAR);
        return split_at_level(text, max_tokens, tokenizer, level + 1);
    }

    let mut parts = Vec::new();
    let mut start = 0usize;
    while start < text.len() {
        if tokenizer.count(&text[start..]) <= max_tokens {
            parts.push(text[start..].to_string());
            break;
        }
        // Greedily take the furthest boundary that still fits. Token counts
        // grow monotonically with the slice, so stop at the first overflow.
        let mut chosen: Option<usize> = None;
        for &b in bounds.iter().filter(|&&b| b > start) {
            if tokenizer.count(&text[start..b]) <= max_tokens {
                chosen = Some(b);
            } else {
                break;
            }
        }
        match chosen {
            Some(b) => {
                parts.push(text[start..b].to_string());
                start = b;
            }
            None => {
                // Even the first available piece is too big; split it at the
                // next-finer level, then continue at this one.
                let end = bounds
                    .iter()
                    .find(|&&b| b > start)
                    .copied()
                    .unwrap_or(text.len());
                parts.extend(split_at_level(&text[start..end], max_tokens, tokenizer, level + 1));
                start = end;
            }
        }
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::build_multilayer_chunks;
    use crate::parser::{StructureProfile, parse_document};
    use proptest::prelude::*;

    fn tok() -> TokenizerSpec {
        TokenizerSpec::default()
    }

    #[test]
    fn normalize_produces_unit_length() {
        let v = normalize(&[3.0, 4.0]);
        assert!((v[0] - 0.6).abs() < 1e-7);
        assert!((v[1] - 0.8).abs() < 1e-7);
        let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        // Zero vectors pass through.
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_matches_hand_values_and_clamps() {
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-12);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        // Parallel vectors may round past 1.0 without the clamp.
        let v = vec![0.1f32; 300];
        assert!(cosine(&v, &v).unwrap() <= 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(EmbedError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn mean_pool_is_permutation_invariant_and_exact_for_pairs() {
        let u = normalize(&[0.3, -0.7, 0.1, 0.9]);
        let v = normalize(&[-0.2, 0.4, 0.6, 0.05]);
        let w = normalize(&[0.11, 0.22, -0.33, 0.44]);

        let abc = mean_pool(&[u.clone(), v.clone(), w.clone()]).unwrap();
        let cba = mean_pool(&[w.clone(), v.clone(), u.clone()]).unwrap();
        let bac = mean_pool(&[v.clone(), u.clone(), w.clone()]).unwrap();
        let bits = |x: &[f32]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&abc), bits(&cba));
        assert_eq!(bits(&abc), bits(&bac));

        // Two-vector pooling equals normalize((u + v) / 2) in f64.
        let pooled = mean_pool(&[u.clone(), v.clone()]).unwrap();
        let manual: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(&a, &b)| (a as f64 + b as f64) / 2.0)
            .collect();
        let manual = normalize_f64(&manual);
        assert_eq!(bits(&pooled), bits(&manual));

        assert!(matches!(mean_pool(&[]), Err(EmbedError::EmptyInput)));
        assert!(matches!(
            mean_pool(&[vec![1.0], vec![1.0, 2.0]]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn split_prefers_coarse_boundaries() {
        // 20 tokens per paragraph, limit 24: must cut at the blank line.
        let para = "um dois tres quatro cinco seis sete oito nove dez \
                    onze doze treze catorze quinze dezesseis dezessete dezoito dezenove vinte";
        let text = format!("{para}\n\n{para}");
        let parts = split_for_limit(&text, 24, &tok());
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0], format!("{para}\n\n"));
        assert_eq!(parts[1], para);
        assert_eq!(parts.concat(), text);

        // Same text with single newlines: cuts after a newline.
        let text = format!("{para}\n{para}\n{para}");
        let parts = split_for_limit(&text, 45, &tok());
        assert!(parts.len() >= 2);
        assert!(parts[0].ends_with('\n'));
        assert_eq!(parts.concat(), text);

        // One long line with sentences: cuts after punctuation.
        let sent = "uma frase com exatamente sete palavras aqui.";
        let text = sent.repeat(5);
        let parts = split_for_limit(&text, 16, &tok());
        assert!(parts.len() >= 3);
        for p in &parts {
            assert!(p.ends_with('.'), "part `{p}` should end at a sentence");
            assert!(tok().count(p) <= 16);
        }
        assert_eq!(parts.concat(), text);
    }

    #[test]
    fn split_falls_back_to_spaces_and_chars() {
        // No blank lines, newlines, or punctuation: spaces are the cut.
        let text = "palavra ".repeat(40).trim_end().to_string();
        let parts = split_for_limit(&text, 16, &tok());
        assert!(parts.len() >= 3);
        for p in &parts {
            assert!(tok().count(p) <= 16);
        }
        assert_eq!(parts.concat(), text);

        // One unbroken alphanumeric run: token count is 1, no split needed.
        let run = "a".repeat(500);
        assert_eq!(split_for_limit(&run, 16, &tok()), vec![run.clone()]);

        // Unbroken run of symbols + letters without spaces still reassembles.
        let text = "x#".repeat(200);
        let parts = split_for_limit(&text, 16, &tok());
        assert_eq!(parts.concat(), text);
        for p in &parts {
            assert!(tok().count(p) <= 16);
        }
    }

    #[test]
    fn split_returns_short_text_unchanged() {
        let text = "curto e direto";
        assert_eq!(split_for_limit(text, 16, &tok()), vec![text.to_string()]);
    }

    proptest! {
        #[test]
        fn split_reassembles_exactly(text in "[a-zà-ú ,.;\n§º]{0,400}", limit in 16usize..40) {
            let parts = split_for_limit(&text, limit, &tok());
            prop_assert_eq!(parts.concat(), text.clone());
            for p in &parts {
                prop_assert!(tok().count(p) <= limit);
                prop_assert!(!p.is_empty() || parts.len() == 1);
            }
        }
    }

    fn local_service(dims: usize, cache_dir: Option<PathBuf>) -> EmbeddingService {
        let config = ProviderConfig {
            dims,
            cache_dir,
            ..ProviderConfig::default()
        };
        EmbeddingService::new(config).expect("local service builds")
    }

    #[test]
    fn service_validates_inputs() {
        let svc = local_service(64, None);
        assert!(matches!(svc.embed_texts(&[]), Err(EmbedError::EmptyInput)));
        let texts = vec!["bom".to_string(), "   ".to_string()];
        assert!(matches!(
            svc.embed_texts(&texts),
            Err(EmbedError::EmptyText { index: 1 })
        ));
    }

    #[test]
    fn service_rejects_bad_config() {
        let config = ProviderConfig {
            dims: 4,
            ..ProviderConfig::default()
        };
        assert!(matches!(
            EmbeddingService::new(config),
            Err(EmbedError::InvalidDims(_))
        ));
        let config = ProviderConfig {
            batch_size: 0,
            ..ProviderConfig::default()
        };
        assert!(matches!(
            EmbeddingService::new(config),
            Err(EmbedError::InvalidConfig(_))
        ));
        let config = ProviderConfig {
            max_input_tokens: Some(8),
            ..ProviderConfig::default()
        };
        assert!(matches!(
            EmbeddingService::new(config),
            Err(EmbedError::InvalidConfig(_))
        ));
    }

    #[test]
    fn long_texts_pool_their_parts() {
        let config = ProviderConfig {
            dims: 64,
            max_input_tokens: Some(16),
            ..ProviderConfig::default()
        };
        let svc = EmbeddingService::new(config).unwrap();
        let text = "direito fundamental ".repeat(30).trim_end().to_string();
        let got = svc.embed_one(&text).unwrap();

        // Manual pipeline: split, embed each part, pool.
        let embedder = LocalEmbedder::new(64, local::LOCAL_MODEL_ID);
        let parts = split_for_limit(&text, 16, &tok());
        assert!(parts.len() > 1);
        let vecs = embedder.embed_batch(&parts).unwrap();
        let expected = mean_pool(&vecs).unwrap();
        assert_eq!(
            got.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            expected.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );

        let n: f64 = got.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cache_hits_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let svc = local_service(128, Some(dir.path().to_path_buf()));
        let texts = vec![
            "a soberania".to_string(),
            "a cidadania".to_string(),
            "o pluralismo político".to_string(),
        ];
        let first = svc.embed_texts(&texts).unwrap();
        // Second call must be served from disk with identical bits.
        let second = svc.embed_texts(&texts).unwrap();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(
                a.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
            );
        }
        // A fresh service over the same cache dir also hits.
        let svc2 = local_service(128, Some(dir.path().to_path_buf()));
        let third = svc2.embed_texts(&texts).unwrap();
        assert_eq!(
            first[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            third[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fingerprint_names_kind_model_and_width() {
        let svc = local_service(256, None);
        assert_eq!(
            svc.fingerprint(),
            format!("deterministic-local:{}:256", local::LOCAL_MODEL_ID)
        );
    }

    /// Retrieval sanity check on real corpus text: a query quoting one
    /// enumerated principle must score its own enumeration chunk above a
    /// sibling article that does not contain the phrase.
    #[test]
    fn query_prefers_the_chunk_containing_its_phrase() {
        let source = std::fs::read_to_string(
            std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
                .join("../../fixtures/title1.txt"),
        )
        .unwrap();
        let tree = parse_document(&source, &StructureProfile::default(), "CRFB").unwrap();
        let chunks = build_multilayer_chunks(&tree, &tok()).unwrap();
        let svc = local_service(256, None);

        let texts: Vec<String> = chunks.iter().map(|c| c.embed_text.clone()).collect();
        let vectors = svc.embed_texts(&texts).unwrap();
        let query = svc.embed_one("dignidade da pessoa humana").unwrap();

        let sim_of = |label: &str| {
            let pos = chunks
                .iter()
                .position(|c| c.label == label)
                .unwrap_or_else(|| panic!("chunk `{label}` missing"));
            cosine(&query, &vectors[pos]).unwrap()
        };
        let inciso = sim_of("CRFB, Art. 1º, caput, Inciso III");
        let other_article = sim_of("CRFB, Art. 3º");
        assert!(
            inciso > other_article,
            "phrase-bearing enumeration ({inciso:.4}) must outrank an \
             unrelated article ({other_article:.4})"
        );
    }
}
