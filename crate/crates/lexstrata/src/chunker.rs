//! Layered chunking of parsed documents.
//!
//! Every structural node becomes one chunk at one of six layers, coarse to
//! fine: the whole document, its top-level components, grouping headings,
//! articles, caputs/paragraphs, and enumeration entries (incisos, alíneas,
//! items). Retrieval over all six layers at once lets a query land on
//! whichever granularity states the answer most directly; the flat variant
//! keeps only the article layer and is the classical one-size baseline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::parser::{DocumentTree, NodeId, NodeKind, ParseError, Span, canonical_label};
use crate::tokenizer::TokenizerSpec;

/// Errors from chunk construction.
#[derive(Debug, Error)]
pub enum ChunkError {
    /// Tree access or labeling failed.
    #[error(transparent)]
    Parse(#[from] ParseError),
    /// An operation got a node of the wrong structural kind.
    #[error("expected {expected} node, found {found}")]
    WrongKind { expected: &'static str, found: String },
    /// Two nodes rendered the same canonical label (e.g. a source text that
    /// repeats an article number), which would collide chunk ids.
    #[error("duplicate canonical label {0:?}")]
    DuplicateLabel(String),
}

/// Granularity of a chunk, coarsest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Document,
    DocumentComponent,
    BasicUnitHierarchy,
    BasicUnit,
    BasicUnitComponent,
    Enumeration,
}

impl Layer {
    /// Coarse-to-fine sort rank.
    pub fn rank(&self) -> u8 {
        match self {
            Layer::Document => 0,
            Layer::DocumentComponent => 1,
            Layer::BasicUnitHierarchy => 2,
            Layer::BasicUnit => 3,
            Layer::BasicUnitComponent => 4,
            Layer::Enumeration => 5,
        }
    }

    /// Which layer a structural node belongs to.
    pub fn of(kind: &NodeKind) -> Layer {
        match kind {
            NodeKind::Document => Layer::Document,
            NodeKind::DocumentComponent(_) => Layer::DocumentComponent,
            NodeKind::Grouping(_) => Layer::BasicUnitHierarchy,
            NodeKind::Article => Layer::BasicUnit,
            NodeKind::Caput | NodeKind::Paragraph(_) => Layer::BasicUnitComponent,
            NodeKind::Inciso | NodeKind::Alinea | NodeKind::Item => Layer::Enumeration,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::Document => "document",
            Layer::DocumentComponent => "document_component",
            Layer::BasicUnitHierarchy => "basic_unit_hierarchy",
            Layer::BasicUnit => "basic_unit",
            Layer::BasicUnitComponent => "basic_unit_component",
            Layer::Enumeration => "enumeration",
        }
    }
}

/// One retrievable unit of a document.
///
/// `display_text` is the verbatim provision (shown in prompts and reports);
/// `embed_text` is what the embedding sees. The two differ only at the
/// enumeration layer, where the entry alone ("III - a dignidade da pessoa
/// humana;") would embed poorly without the sentence stem it completes, so
/// the marker-free bodies of its governing caput/paragraph chain are
/// prepended in brackets. `embed_text` always ends with `display_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    /// Stable id: first 16 hex digits of SHA-256 over doc id and label.
    pub chunk_id: String,
    pub doc_id: String,
    /// Canonical label, e.g. `CRFB, Art. 1º, caput, Inciso III`.
    pub label: String,
    pub layer: Layer,
    /// Byte span of the source node this chunk renders.
    pub span: Span,
    /// Id of the structural parent provision's chunk. Always derived from
    /// the tree, so an article chunk carries the same parent reference in
    /// flat mode even though the parent is not materialized there.
    pub parent_chunk_id: Option<String>,
    pub display_text: String,
    pub embed_text: String,
    /// Token count of `embed_text` under the pipeline tokenizer.
    pub token_count: usize,
}

/// Deterministic chunk id from the identifying pair.
pub fn chunk_id(doc_id: &str, label: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Collapse runs of whitespace to single spaces and trim.
fn squash(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Embedding text for an enumeration node: the marker-free bodies of its
/// ancestors below the article (caput or paragraph, then any enclosing
/// enumeration entries), each in brackets, followed by the node's own
/// verbatim text.
///
/// For `III - a dignidade da pessoa humana;` under Art. 1º this yields
/// `[A República Federativa do Brasil, … tem como fundamentos:] III - a
/// dignidade da pessoa humana;`.
pub fn contextualize(tree: &DocumentTree, id: NodeId) -> Result<String, ChunkError> {
    let node = tree.node(id)?;
    if Layer::of(&node.kind) != Layer::Enumeration {
        return Err(ChunkError::WrongKind {
            expected: "enumeration",
            found: node.kind.as_str().to_string(),
        });
    }
    let path = tree.path_to(id)?;
    let mut out = String::new();
    for &ancestor in &path {
        if ancestor == id {
            break;
        }
        let kind = &tree.nodes[ancestor].kind;
        if matches!(
            kind,
            NodeKind::Caput | NodeKind::Paragraph(_) | NodeKind::Inciso | NodeKind::Alinea
        ) {
            let body = squash(tree.body_text(ancestor)?);
            if !body.is_empty() {
                out.push('[');
                out.push_str(&body);
                out.push_str("] ");
            }
        }
    }
    out.push_str(display_text(tree, id)?.as_str());
    Ok(out)
}

fn display_text(tree: &DocumentTree, id: NodeId) -> Result<String, ChunkError> {
    Ok(tree.node_full_text(id)?.trim().to_string())
}

fn chunk_node(
    tree: &DocumentTree,
    id: NodeId,
    tokenizer: &TokenizerSpec,
) -> Result<Chunk, ChunkError> {
    let node = tree.node(id)?;
    let layer = Layer::of(&node.kind);
    let label = canonical_label(tree, id)?;
    let display = display_text(tree, id)?;
    let embed = if layer == Layer::Enumeration {
        contextualize(tree, id)?
    } else {
        display.clone()
    };
    let parent_chunk_id = match node.parent {
        Some(p) => Some(chunk_id(&tree.doc_id, &canonical_label(tree, p)?)),
        None => None,
    };
    let token_count = tokenizer.count(&embed);
    Ok(Chunk {
        chunk_id: chunk_id(&tree.doc_id, &label),
        doc_id: tree.doc_id.clone(),
        label,
        layer,
        span: node.span,
        parent_chunk_id,
        display_text: display,
        embed_text: embed,
        token_count,
    })
}

fn sort_chunks(chunks: &mut [Chunk]) {
    chunks.sort_by(|a, b| {
        (a.layer.rank(), a.span.start, std::cmp::Reverse(a.span.end)).cmp(&(
            b.layer.rank(),
            b.span.start,
            std::cmp::Reverse(b.span.end),
        ))
    });
}

fn check_unique_labels(chunks: &[Chunk]) -> Result<(), ChunkError> {
    let mut seen = std::collections::HashSet::with_capacity(chunks.len());
    for chunk in chunks {
        if !seen.insert(chunk.label.as_str()) {
            return Err(ChunkError::DuplicateLabel(chunk.label.clone()));
        }
    }
    Ok(())
}

/// Chunk every node of the tree across all six layers, ordered coarse to
/// fine and document-order within a layer.
pub fn build_multilayer_chunks(
    tree: &DocumentTree,
    tokenizer: &TokenizerSpec,
) -> Result<Vec<Chunk>, ChunkError> {
    let mut chunks = Vec::with_capacity(tree.nodes.len());
    for id in tree.preorder() {
        chunks.push(chunk_node(tree, id, tokenizer)?);
    }
    check_unique_labels(&chunks)?;
    sort_chunks(&mut chunks);
    Ok(chunks)
}

/// Chunk only the articles: the single-granularity baseline corpus.
pub fn build_flat_chunks(
    tree: &DocumentTree,
    tokenizer: &TokenizerSpec,
) -> Result<Vec<Chunk>, ChunkError> {
    let mut chunks = Vec::new();
    for id in tree.preorder() {
        if tree.nodes[id].kind == NodeKind::Article {
            chunks.push(chunk_node(tree, id, tokenizer)?);
        }
    }
    check_unique_labels(&chunks)?;
    sort_chunks(&mut chunks);
    Ok(chunks)
}

/// Serialize chunks as JSON Lines.
pub fn write_chunks_jsonl<W: std::io::Write>(
    chunks: &[Chunk],
    mut writer: W,
) -> std::io::Result<()> {
    for chunk in chunks {
        serde_json::to_writer(&mut writer, chunk)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read chunks back from JSON Lines.
pub fn read_chunks_jsonl<R: std::io::BufRead>(reader: R) -> std::io::Result<Vec<Chunk>> {
    let mut chunks = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        chunks.push(serde_json::from_str(&line)?);
    }
    Ok(chunks)
}
