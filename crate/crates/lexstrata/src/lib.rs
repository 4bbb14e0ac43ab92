//! Multi-layer retrieval over hierarchically structured legislative text.
//!
//! The crate turns plain-text statutes (one provision per line, Brazilian
//! drafting conventions) into a validated structural tree, derives one
//! embeddable chunk per structural element across six granularity layers,
//! embeds and indexes those chunks, and selects query-relevant chunks under
//! a token budget with containment deduplication. An evaluation harness
//! replays recorded retrieval streams and recomputes the accompanying
//! statistics.
//!
//! All spans are half-open `[start, end)` **byte** offsets into the original
//! UTF-8 source text, so any node or chunk can be recovered by exact slicing.

pub mod chunker;
pub mod embed;
pub mod eval;
pub mod index;
pub mod parser;
pub mod pipeline;
pub mod selector;
pub mod tokenizer;
