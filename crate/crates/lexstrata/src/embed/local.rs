//! Deterministic offline embedder based on signed feature hashing.
//!
//! Each text is lowercased and tokenized; every token (unigram) and adjacent
//! token pair (bigram) becomes a feature. Features are hashed with FNV-1a
//! (64-bit) onto `dims` buckets with a ±1 sign drawn from the hash's top
//! bit, and the bucket totals are L2-normalized. Everything is integer
//! arithmetic plus IEEE-754 `f64` accumulation in a fixed order, so the same
//! text yields bit-identical vectors on every platform.
//!
//! The vectors carry no semantics beyond lexical overlap — shared words and
//! word pairs raise cosine similarity. That is exactly enough for offline
//! tests, reproducible fixtures, and plumbing-level benchmarks.

use crate::tokenizer;

use super::{EmbedError, Embedder};

/// Model identifier recorded in cache keys and fingerprints.
pub const LOCAL_MODEL_ID: &str = "feature-hash-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit hash, the crate's only feature-hash primitive.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// The offline feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dims: usize,
    model: String,
}

impl LocalEmbedder {
    pub fn new(dims: usize, model: &str) -> LocalEmbedder {
        LocalEmbedder {
            dims,
            model: model.to_string(),
        }
    }

    fn add_feature(&self, acc: &mut [f64], bytes: &[u8]) {
        let hash = fnv1a64(bytes);
        let bucket = (hash % self.dims as u64) as usize;
        let sign = if hash & (1 << 63) == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = tokenizer::tokens(&lowered).collect();
        let mut acc = vec![0f64; self.dims];
        if tokens.is_empty() {
            // No alphanumeric content (e.g. pure punctuation): hash the raw
            // text as a single feature so the vector is still non-zero.
            self.add_feature(&mut acc, lowered.trim().as_bytes());
        } else {
            let mut bigram = Vec::new();
            for token in &tokens {
                self.add_feature(&mut acc, token.as_bytes());
            }
            for pair in tokens.windows(2) {
                bigram.clear();
                bigram.extend_from_slice(pair[0].as_bytes());
                bigram.push(0x1f);
                bigram.extend_from_slice(pair[1].as_bytes());
                self.add_feature(&mut acc, &bigram);
            }
        }
        super::normalize_f64(&acc)
    }
}

impl Embedder for LocalEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn fnv1a_matches_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn ten_thousand_distinct_strings_hash_distinctly() {
        let mut seen = HashSet::with_capacity(10_000);
        for i in 0..10_000u32 {
            let s = format!("artigo-{i}-inciso-{}", i * 7 + 3);
            assert!(seen.insert(fnv1a64(s.as_bytes())), "collision at {s}");
        }
    }

    #[test]
    fn vectors_are_unit_length_and_deterministic() {
        let embedder = LocalEmbedder::new(256, LOCAL_MODEL_ID);
        let texts = vec![
            "A soberania e a cidadania.".to_string(),
            "construir uma sociedade livre, justa e solidária".to_string(),
            "§ 1º — ...".to_string(),
        ];
        let first = embedder.embed_batch(&texts).unwrap();
        let second = embedder.embed_batch(&texts).unwrap();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(
                a.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
            );
        }
        for v in &first {
            assert_eq!(v.len(), 256);
            let norm: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn casing_does_not_change_the_vector() {
        let embedder = LocalEmbedder::new(64, LOCAL_MODEL_ID);
        let a = embedder.embed_batch(&["SOBERANIA Nacional".to_string()]).unwrap();
        let b = embedder.embed_batch(&["soberania nacional".to_string()]).unwrap();
        assert_eq!(
            a[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            b[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn word_order_matters_through_bigrams() {
        let embedder = LocalEmbedder::new(128, LOCAL_MODEL_ID);
        let ab = embedder.embed_batch(&["pessoa humana".to_string()]).unwrap();
        let ba = embedder.embed_batch(&["humana pessoa".to_string()]).unwrap();
        assert_ne!(
            ab[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            ba[0].iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn symbol_only_text_still_embeds() {
        let embedder = LocalEmbedder::new(32, LOCAL_MODEL_ID);
        let v = &embedder.embed_batch(&["§ — ***".to_string()]).unwrap()[0];
        let norm: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shared_vocabulary_raises_similarity() {
        let embedder = LocalEmbedder::new(256, LOCAL_MODEL_ID);
        let texts = vec![
            "a dignidade da pessoa humana".to_string(),
            "a dignidade da pessoa humana é um fundamento".to_string(),
            "construir uma sociedade livre justa e solidária".to_string(),
        ];
        let vs = embedder.embed_batch(&texts).unwrap();
        let close = super::super::cosine(&vs[0], &vs[1]).unwrap();
        let far = super::super::cosine(&vs[0], &vs[2]).unwrap();
        assert!(close > far, "close {close} vs far {far}");
    }
}
