//! Structural parsing of plain-text statutes.
//!
//! Input is UTF-8 text following the Brazilian drafting convention of one
//! provision per line: articles (`Art. 5º`), numbered and sole paragraphs
//! (`§ 1º`, `Parágrafo único.`), incisos (`IV - …`), alíneas (`a) …`),
//! items (`1. …`), and grouping headings (`TÍTULO I`, `CAPÍTULO II`,
//! `Seção III`, …). The output is a [`DocumentTree`]: an arena of
//! [`StructuralNode`]s whose byte spans tile the source text exactly, so any
//! node's text is recovered by slicing, never by copying.

mod label;
mod parse;

pub use label::canonical_label;
pub use parse::parse_document;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from parsing and tree access.
#[derive(Debug, Error)]
pub enum ParseError {
    /// The input text was empty or all whitespace.
    #[error("input text is empty")]
    EmptyInput,
    /// Strict mode only: a marker appeared where its kind is not a legal
    /// child of the open context (e.g. an alínea with no inciso open).
    #[error("malformed structure at line {line}: {reason}")]
    MalformedStructure { line: usize, reason: String },
    /// A node handle did not belong to the tree it was used with.
    #[error("node {0} is not part of this tree")]
    NodeNotInTree(NodeId),
    /// No built-in profile with the requested name.
    #[error("unknown structure profile {0:?}")]
    UnknownProfile(String),
    /// Tree serialization or deserialization failed.
    #[error("invalid tree serialization: {0}")]
    InvalidTree(String),
}

/// Index of a node inside its tree's arena.
pub type NodeId = usize;

/// Half-open `[start, end)` byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when `inner` lies entirely inside `self` (a span contains itself).
    pub fn contains(&self, inner: &Span) -> bool {
        self.start <= inner.start && inner.end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Top-level parts of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    /// The articulated body of the statute.
    MainText,
    /// Trailing annex, kept as raw unparsed text.
    Annex,
    /// Justification section of a bill, raw text.
    Justification,
    /// Text preceding the first structural marker.
    Preamble,
}

/// Grouping levels above the article, coarsest to finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingKind {
    Parte,
    Livro,
    Titulo,
    Capitulo,
    Secao,
    Subsecao,
}

impl GroupingKind {
    /// Nesting rank; a grouping may only contain groupings of higher rank.
    pub fn rank(&self) -> u8 {
        match self {
            GroupingKind::Parte => 1,
            GroupingKind::Livro => 2,
            GroupingKind::Titulo => 3,
            GroupingKind::Capitulo => 4,
            GroupingKind::Secao => 5,
            GroupingKind::Subsecao => 6,
        }
    }
}

/// Numbered (`§ 2º`) vs sole (`Parágrafo único.`) paragraphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParagraphKind {
    Numbered,
    Sole,
}

/// Structural role of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum NodeKind {
    Document,
    DocumentComponent(ComponentKind),
    Grouping(GroupingKind),
    Article,
    Caput,
    Paragraph(ParagraphKind),
    Inciso,
    Alinea,
    Item,
}

impl NodeKind {
    /// Whether `child` may appear directly under `self`.
    ///
    /// Groupings accept any strictly finer grouping (real statutes skip
    /// levels), articles, and nothing else; annex/justification/preamble
    /// components hold raw text only.
    pub fn accepts_child(&self, child: &NodeKind) -> bool {
        use NodeKind::*;
        match (self, child) {
            (Document, DocumentComponent(_)) => true,
            (DocumentComponent(ComponentKind::MainText), Grouping(_) | Article) => true,
            (Grouping(outer), Grouping(inner)) => inner.rank() > outer.rank(),
            (Grouping(_), Article) => true,
            (Article, Caput | Paragraph(_)) => true,
            (Caput | Paragraph(_), Inciso) => true,
            (Inciso, Alinea) => true,
            (Alinea, Item) => true,
            _ => false,
        }
    }

    /// Stable string used in the tree's JSON serialization.
    pub fn as_str(&self) -> &'static str {
        use NodeKind::*;
        match self {
            Document => "document",
            DocumentComponent(ComponentKind::MainText) => "main_text",
            DocumentComponent(ComponentKind::Annex) => "annex",
            DocumentComponent(ComponentKind::Justification) => "justification",
            DocumentComponent(ComponentKind::Preamble) => "preamble",
            Grouping(GroupingKind::Parte) => "parte",
            Grouping(GroupingKind::Livro) => "livro",
            Grouping(GroupingKind::Titulo) => "titulo",
            Grouping(GroupingKind::Capitulo) => "capitulo",
            Grouping(GroupingKind::Secao) => "secao",
            Grouping(GroupingKind::Subsecao) => "subsecao",
            Article => "article",
            Caput => "caput",
            Paragraph(ParagraphKind::Numbered) => "paragraph",
            Paragraph(ParagraphKind::Sole) => "sole_paragraph",
            Inciso => "inciso",
            Alinea => "alinea",
            Item => "item",
        }
    }

    /// Inverse of [`NodeKind::as_str`].
    pub fn from_str_name(s: &str) -> Option<NodeKind> {
        use NodeKind::*;
        Some(match s {
            "document" => Document,
            "main_text" => DocumentComponent(ComponentKind::MainText),
            "annex" => DocumentComponent(ComponentKind::Annex),
            "justification" => DocumentComponent(ComponentKind::Justification),
            "preamble" => DocumentComponent(ComponentKind::Preamble),
            "parte" => Grouping(GroupingKind::Parte),
            "livro" => Grouping(GroupingKind::Livro),
            "titulo" => Grouping(GroupingKind::Titulo),
            "capitulo" => Grouping(GroupingKind::Capitulo),
            "secao" => Grouping(GroupingKind::Secao),
            "subsecao" => Grouping(GroupingKind::Subsecao),
            "article" => Article,
            "caput" => Caput,
            "paragraph" => Paragraph(ParagraphKind::Numbered),
            "sole_paragraph" => Paragraph(ParagraphKind::Sole),
            "inciso" => Inciso,
            "alinea" => Alinea,
            "item" => Item,
            _ => return None,
        })
    }
}

/// One node of the structural tree.
///
/// `span` covers the node's marker, heading and all descendants; `body_start`
/// points just past the node's own marker token, so `[body_start, first
/// child)` is the node's marker-free own text (used when enumeration chunks
/// are embedded with bracketed ancestor context).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Display ordinal token: `"1º"`, `"14"`, `"103-A"`, `"único"`, `"III"`,
    /// `"a"`, `"1"`; empty for kinds without one.
    pub ordinal: String,
    /// Title line of a grouping (`Dos Princípios Fundamentais`), if any.
    pub heading: Option<String>,
    pub span: Span,
    /// Byte offset just past this node's marker token.
    pub body_start: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// A parsed document: arena of nodes rooted at a `Document` node, plus the
/// original text every span points into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentTree {
    pub doc_id: String,
    pub source_text: String,
    pub nodes: Vec<StructuralNode>,
    pub root: NodeId,
}

impl DocumentTree {
    /// Borrow a node, rejecting handles from other trees.
    pub fn node(&self, id: NodeId) -> Result<&StructuralNode, ParseError> {
        self.nodes.get(id).ok_or(ParseError::NodeNotInTree(id))
    }

    /// The full source slice of a node — marker, heading and descendants.
    pub fn node_full_text(&self, id: NodeId) -> Result<&str, ParseError> {
        let node = self.node(id)?;
        Ok(&self.source_text[node.span.start..node.span.end])
    }

    /// Text belonging to the node itself, excluding descendants (children
    /// always form a contiguous suffix of the span, so this is the prefix up
    /// to the first child).
    pub fn own_text(&self, id: NodeId) -> Result<&str, ParseError> {
        let node = self.node(id)?;
        let end = match node.children.first() {
            Some(&c) => self.nodes[c].span.start,
            None => node.span.end,
        };
        Ok(&self.source_text[node.span.start..end])
    }

    /// Like [`DocumentTree::own_text`] but starting past the marker token —
    /// the text that reads naturally without its `Art. 1º` / `III -` prefix.
    pub fn body_text(&self, id: NodeId) -> Result<&str, ParseError> {
        let node = self.node(id)?;
        let end = match node.children.first() {
            Some(&c) => self.nodes[c].span.start,
            None => node.span.end,
        };
        Ok(&self.source_text[node.body_start.min(end)..end])
    }

    /// Ancestor chain from the root down to (and including) `id`.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, ParseError> {
        self.node(id)?;
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Pre-order traversal of all node ids.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.nodes[id].children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Check every structural invariant; used after parsing and in tests.
    ///
    /// Verifies: root is a `Document` spanning the whole text; parent/child
    /// links are mutually consistent; child spans are contained in their
    /// parent's span, mutually disjoint and ascending; child kinds are legal
    /// for their parent; every article's first child is its only caput; and
    /// all offsets fall on UTF-8 character boundaries.
    pub fn validate(&self) -> Result<(), ParseError> {
        let invalid = |reason: String| ParseError::InvalidTree(reason);
        let root = self.node(self.root)?;
        if root.kind != NodeKind::Document {
            return Err(invalid("root node is not a document".into()));
        }
        if root.span != Span::new(0, self.source_text.len()) {
            return Err(invalid("root span does not cover the source text".into()));
        }
        for node in &self.nodes {
            if !self.source_text.is_char_boundary(node.span.start)
                || !self.source_text.is_char_boundary(node.span.end)
                || !self.source_text.is_char_boundary(node.body_start)
            {
                return Err(invalid(format!("node {} offsets split a character", node.id)));
            }
            if node.span.end < node.span.start {
                return Err(invalid(format!("node {} has a negative span", node.id)));
            }
            let mut prev_end = node.span.start;
            for &c in &node.children {
                let child = self.node(c)?;
                if child.parent != Some(node.id) {
                    return Err(invalid(format!("node {c} disowns its parent {}", node.id)));
                }
                if !node.span.contains(&child.span) {
                    return Err(invalid(format!("child {c} escapes parent {} span", node.id)));
                }
                if child.span.start < prev_end {
                    return Err(invalid(format!("child {c} overlaps its preceding sibling")));
                }
                prev_end = child.span.end;
                if !node.kind.accepts_child(&child.kind) {
                    return Err(invalid(format!(
                        "{} node may not contain {}",
                        node.kind.as_str(),
                        child.kind.as_str()
                    )));
                }
            }
            if node.kind == NodeKind::Article {
                let caputs = node
                    .children
                    .iter()
                    .filter(|&&c| self.nodes[c].kind == NodeKind::Caput)
                    .count();
                let first_is_caput = node
                    .children
                    .first()
                    .is_some_and(|&c| self.nodes[c].kind == NodeKind::Caput);
                if caputs != 1 || !first_is_caput {
                    return Err(invalid(format!(
                        "article node {} must have exactly one leading caput",
                        node.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialize to the interchange JSON: text stored once, nodes flat.
    pub fn to_json(&self) -> String {
        let nodes: Vec<NodeJson> = self
            .nodes
            .iter()
            .map(|n| NodeJson {
                id: n.id,
                kind: n.kind.as_str().to_string(),
                ordinal: n.ordinal.clone(),
                heading: n.heading.clone(),
                span: n.span,
                body_start: n.body_start,
                parent_id: n.parent,
            })
            .collect();
        let doc = TreeJson { doc_id: self.doc_id.clone(), text: self.source_text.clone(), nodes };
        serde_json::to_string_pretty(&doc).expect("tree serialization cannot fail")
    }

    /// Rebuild a tree from [`DocumentTree::to_json`] output.
    pub fn from_json(json: &str) -> Result<DocumentTree, ParseError> {
        let doc: TreeJson =
            serde_json::from_str(json).map_err(|e| ParseError::InvalidTree(e.to_string()))?;
        let mut nodes: Vec<StructuralNode> = Vec::with_capacity(doc.nodes.len());
        for (pos, nj) in doc.nodes.iter().enumerate() {
            if nj.id != pos {
                return Err(ParseError::InvalidTree(format!(
                    "node ids must be dense and ordered; found {} at position {pos}",
                    nj.id
                )));
            }
            let kind = NodeKind::from_str_name(&nj.kind)
                .ok_or_else(|| ParseError::InvalidTree(format!("unknown kind {:?}", nj.kind)))?;
            nodes.push(StructuralNode {
                id: nj.id,
                kind,
                ordinal: nj.ordinal.clone(),
                heading: nj.heading.clone(),
                span: nj.span,
                body_start: nj.body_start,
                parent: nj.parent_id,
                children: Vec::new(),
            });
        }
        let mut root = None;
        for pos in 0..nodes.len() {
            match nodes[pos].parent {
                Some(p) if p < nodes.len() => nodes[p].children.push(pos),
                Some(p) => {
                    return Err(ParseError::InvalidTree(format!("node {pos} has bad parent {p}")))
                }
                None => {
                    if root.replace(pos).is_some() {
                        return Err(ParseError::InvalidTree("multiple root nodes".into()));
                    }
                }
            }
        }
        let root = root.ok_or_else(|| ParseError::InvalidTree("no root node".into()))?;
        let tree =
            DocumentTree { doc_id: doc.doc_id, source_text: doc.text, nodes, root };
        tree.validate()?;
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    doc_id: String,
    text: String,
    nodes: Vec<NodeJson>,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: NodeId,
    kind: String,
    ordinal: String,
    heading: Option<String>,
    span: Span,
    body_start: usize,
    parent_id: Option<NodeId>,
}

/// How forgiving the parser is about markers in illegal positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Illegally placed markers are treated as continuation text.
    #[default]
    Lenient,
    /// Illegally placed markers abort with `MalformedStructure`.
    Strict,
}

/// Compiled marker patterns plus strictness; see [`StructureProfile::br_lc95`].
#[derive(Debug, Clone)]
pub struct StructureProfile {
    pub name: String,
    pub strictness: Strictness,
    pub(crate) patterns: parse::MarkerPatterns,
}

impl StructureProfile {
    /// The built-in profile for Brazilian statutes (LC 95/1998 drafting
    /// rules): `Art. 5º` / `Art. 14.` / `Art. 103-A.`, `§ 1º`,
    /// `Parágrafo único.`, Roman-numeral incisos with a dash, lettered
    /// alíneas with `)`, numbered items under alíneas, and the PARTE /
    /// LIVRO / TÍTULO / CAPÍTULO / Seção / Subseção grouping keywords.
    pub fn br_lc95(strictness: Strictness) -> StructureProfile {
        StructureProfile {
            name: "br-lc95".to_string(),
            strictness,
            patterns: parse::MarkerPatterns::br_lc95(),
        }
    }

    /// Look up a built-in profile by name.
    pub fn from_name(name: &str, strictness: Strictness) -> Result<StructureProfile, ParseError> {
        match name {
            "br-lc95" => Ok(StructureProfile::br_lc95(strictness)),
            other => Err(ParseError::UnknownProfile(other.to_string())),
        }
    }
}

impl Default for StructureProfile {
    fn default() -> Self {
        StructureProfile::br_lc95(Strictness::Lenient)
    }
}
