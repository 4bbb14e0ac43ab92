//! Line-oriented state machine that builds the structural tree.

use regex::Regex;

use super::{
    ComponentKind, DocumentTree, GroupingKind, NodeId, NodeKind, ParagraphKind, ParseError, Span,
    Strictness, StructuralNode, StructureProfile,
};

/// Compiled line-start patterns for every marker the profile recognizes.
#[derive(Debug, Clone)]
pub(crate) struct MarkerPatterns {
    article: Regex,
    numbered_paragraph: Regex,
    sole_paragraph: Regex,
    inciso: Regex,
    alinea: Regex,
    item: Regex,
    grouping: Regex,
    annex: Regex,
    justification: Regex,
}

impl MarkerPatterns {
    pub(crate) fn br_lc95() -> MarkerPatterns {
        // All patterns anchor at the line start (leading indentation
        // tolerated) and capture the marker token separately from the rest
        // of the line so body offsets can be recorded.
        MarkerPatterns {
            article: Regex::new(r"^[ \t]*Art\.\s*(\d+)(\.?[ºo°])?(?:\s*-\s*([A-Z]{1,3}))?\.?\s*")
                .unwrap(),
            numbered_paragraph: Regex::new(
                r"^[ \t]*§\s*(\d+)(\.?[ºo°])?(?:\s*-\s*([A-Z]{1,3}))?\.?\s*",
            )
            .unwrap(),
            sole_paragraph: Regex::new(r"^[ \t]*(?i)par[áa]grafo\s+[úu]nico\s*[.:]?\s*").unwrap(),
            inciso: Regex::new(r"^[ \t]*([IVXLCDM]+)\s*[-–—]\s*").unwrap(),
            alinea: Regex::new(r"^[ \t]*([a-z]{1,2})\)\s*").unwrap(),
            item: Regex::new(r"^[ \t]*(\d+)\.\s*").unwrap(),
            grouping: Regex::new(
                r"^[ \t]*(?i)(parte|livro|t[íi]tulo|cap[íi]tulo|se[çc][ãa]o|subse[çc][ãa]o)\b[ \t]*",
            )
            .unwrap(),
            annex: Regex::new(r"^[ \t]*((?i:anexo))\b[ \t]*").unwrap(),
            justification: Regex::new(r"^[ \t]*(?i)justifica[çc][ãa]o\s*$").unwrap(),
        }
    }
}

/// A classified input line. Offsets are absolute byte positions of the text
/// right after the marker token.
enum LineEvent {
    /// Blank line or free text: extends whatever node is open.
    Text,
    Grouping { kind: GroupingKind, ordinal: String, heading: Option<String>, body: usize },
    Article { ordinal: String, body: usize },
    Paragraph { kind: ParagraphKind, ordinal: String, body: usize },
    Inciso { ordinal: String, body: usize },
    Alinea { ordinal: String, body: usize },
    Item { ordinal: String, body: usize },
    Annex { ordinal: String, body: usize },
    Justification,
}

fn is_roman(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| "IVXLCDM".contains(c))
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
}

/// Ordinal words accepted after a grouping keyword besides Roman numerals
/// and digits (`PARTE GERAL`, `Seção Única`, …).
fn is_grouping_word_ordinal(s: &str) -> bool {
    matches!(
        s.to_lowercase().as_str(),
        "única" | "unica" | "único" | "unico" | "geral" | "especial"
    )
}

fn grouping_kind(keyword: &str) -> GroupingKind {
    let folded: String = keyword
        .to_lowercase()
        .chars()
        .map(|c| match c {
            'í' => 'i',
            'ç' => 'c',
            'ã' => 'a',
            other => other,
        })
        .collect();
    match folded.as_str() {
        "parte" => GroupingKind::Parte,
        "livro" => GroupingKind::Livro,
        "titulo" => GroupingKind::Titulo,
        "capitulo" => GroupingKind::Capitulo,
        "secao" => GroupingKind::Secao,
        _ => GroupingKind::Subsecao,
    }
}

/// Stored ordinal for articles and paragraphs: digits, a `º` when written
/// with the ordinal mark, and the letter suffix of inserted provisions
/// (`103-A`).
fn decorated_ordinal(digits: &str, mark: Option<&str>, suffix: Option<&str>) -> String {
    let mut out = String::from(digits);
    if mark.is_some() {
        out.push('º');
    }
    if let Some(sfx) = suffix {
        out.push('-');
        out.push_str(&sfx.to_uppercase());
    }
    out
}

fn classify(content: &str, patterns: &MarkerPatterns, line_start: usize) -> LineEvent {
    if content.trim().is_empty() {
        return LineEvent::Text;
    }
    if let Some(caps) = patterns.annex.captures(content) {
        let keyword = caps.get(1).unwrap().as_str();
        let marker_end = caps.get(0).unwrap().end();
        let rest = content[marker_end..].trim();
        let first = rest.split_whitespace().next().unwrap_or("");
        let ordinal_ok = is_roman(first) || is_digits(first);
        // "ANEXO", "ANEXO I - TÍTULO" and "Anexo II" are headers; a
        // sentence like "Anexo a esta lei…" is continuation text.
        let all_caps = !keyword.chars().any(|c| c.is_lowercase());
        if all_caps || ordinal_ok || rest.is_empty() {
            let ordinal = if ordinal_ok { first.to_string() } else { String::new() };
            return LineEvent::Annex { ordinal, body: line_start + marker_end };
        }
        return LineEvent::Text;
    }
    if patterns.justification.is_match(content) {
        return LineEvent::Justification;
    }
    if let Some(caps) = patterns.grouping.captures(content) {
        let keyword_end = caps.get(0).unwrap().end();
        let rest = content[keyword_end..].trim_end();
        // The keyword alone is not enough: "Parte do produto…" is a caput
        // continuation, not a PARTE heading. Require an ordinal-looking
        // first word (Roman, arabic, or ÚNICA/GERAL/ESPECIAL).
        let mut words = rest.splitn(2, char::is_whitespace);
        let first = words.next().unwrap_or("").trim_matches(|c: char| c == '-' || c == '–');
        let tail = words.next().unwrap_or("").trim();
        let upper = first.to_uppercase();
        if is_roman(&upper) || is_digits(first) || is_grouping_word_ordinal(first) {
            let ordinal = if is_roman(&upper) { upper } else { first.to_string() };
            // An inline title after the ordinal ("CAPÍTULO I - DO NOME")
            // becomes the heading right away.
            let heading = {
                let t = tail.trim_start_matches(['-', '–', '—']).trim();
                (!t.is_empty()).then(|| t.to_string())
            };
            return LineEvent::Grouping {
                kind: grouping_kind(caps.get(1).unwrap().as_str()),
                ordinal,
                heading,
                body: line_start + keyword_end,
            };
        }
        return LineEvent::Text;
    }
    if let Some(caps) = patterns.article.captures(content) {
        let ordinal = decorated_ordinal(
            caps.get(1).unwrap().as_str(),
            caps.get(2).map(|m| m.as_str()),
            caps.get(3).map(|m| m.as_str()),
        );
        return LineEvent::Article { ordinal, body: line_start + caps.get(0).unwrap().end() };
    }
    if let Some(caps) = patterns.sole_paragraph.captures(content) {
        return LineEvent::Paragraph {
            kind: ParagraphKind::Sole,
            ordinal: "único".to_string(),
            body: line_start + caps.get(0).unwrap().end(),
        };
    }
    if let Some(caps) = patterns.numbered_paragraph.captures(content) {
        let ordinal = decorated_ordinal(
            caps.get(1).unwrap().as_str(),
            caps.get(2).map(|m| m.as_str()),
            caps.get(3).map(|m| m.as_str()),
        );
        return LineEvent::Paragraph {
            kind: ParagraphKind::Numbered,
            ordinal,
            body: line_start + caps.get(0).unwrap().end(),
        };
    }
    if let Some(caps) = patterns.inciso.captures(content) {
        let token = caps.get(1).unwrap().as_str();
        if is_roman(token) {
            return LineEvent::Inciso {
                ordinal: token.to_string(),
                body: line_start + caps.get(0).unwrap().end(),
            };
        }
        return LineEvent::Text;
    }
    if let Some(caps) = patterns.alinea.captures(content) {
        return LineEvent::Alinea {
            ordinal: caps.get(1).unwrap().as_str().to_string(),
            body: line_start + caps.get(0).unwrap().end(),
        };
    }
    if let Some(caps) = patterns.item.captures(content) {
        return LineEvent::Item {
            ordinal: caps.get(1).unwrap().as_str().to_string(),
            body: line_start + caps.get(0).unwrap().end(),
        };
    }
    LineEvent::Text
}

struct Builder {
    nodes: Vec<StructuralNode>,
    /// Open node ids, root first.
    stack: Vec<NodeId>,
    strictness: Strictness,
}

impl Builder {
    fn push(
        &mut self,
        kind: NodeKind,
        ordinal: String,
        heading: Option<String>,
        start: usize,
        body_start: usize,
    ) -> NodeId {
        let id = self.nodes.len();
        let parent = self.stack.last().copied();
        self.nodes.push(StructuralNode {
            id,
            kind,
            ordinal,
            heading,
            span: Span::new(start, start),
            body_start,
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        self.stack.push(id);
        id
    }

    /// Close stack frames (stamping their span ends with `at`) until `keep`
    /// accepts the top frame.
    fn close_until(&mut self, at: usize, keep: impl Fn(&NodeKind) -> bool) {
        while let Some(&top) = self.stack.last() {
            if keep(&self.nodes[top].kind) {
                break;
            }
            self.nodes[top].span.end = at;
            self.stack.pop();
        }
    }

    fn open_kind(&self, pred: impl Fn(&NodeKind) -> bool) -> bool {
        self.stack.iter().any(|&id| pred(&self.nodes[id].kind))
    }

    /// Handle a marker in an illegal position: strict parses abort, lenient
    /// parses fall through (the line stays continuation text).
    fn illegal(&self, line_no: usize, what: &str) -> Result<(), ParseError> {
        match self.strictness {
            Strictness::Strict => {
                let context = self
                    .stack
                    .last()
                    .map(|&id| self.nodes[id].kind.as_str())
                    .unwrap_or("nothing");
                Err(ParseError::MalformedStructure {
                    line: line_no,
                    reason: format!("{what} (open context: {context})"),
                })
            }
            Strictness::Lenient => Ok(()),
        }
    }
}

/// Parse `text` into a validated [`DocumentTree`].
///
/// Every byte of the input ends up inside the span of exactly one deepest
/// node. Unrecognized lines extend the innermost open node; markers in
/// illegal positions do the same in lenient mode and abort strict parses.
/// The resulting tree always passes [`DocumentTree::validate`].
pub fn parse_document(
    text: &str,
    profile: &StructureProfile,
    doc_id: &str,
) -> Result<DocumentTree, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let mut b = Builder { nodes: Vec::new(), stack: Vec::new(), strictness: profile.strictness };
    b.push(NodeKind::Document, String::new(), None, 0, 0);

    let mut main_text: Option<NodeId> = None;
    let mut saw_first_marker = false;

    let is_component = |k: &NodeKind| matches!(k, NodeKind::DocumentComponent(_));

    let mut line_no = 0usize;
    let mut pos = 0usize;
    while pos < text.len() {
        line_no += 1;
        let line_end = match text[pos..].find('\n') {
            Some(i) => pos + i + 1,
            None => text.len(),
        };
        let content = text[pos..line_end].trim_end_matches(['\n', '\r']);
        let line_start = pos;
        pos = line_end;

        // Inside an annex or justification everything except a new
        // component header is raw text.
        let in_raw_component = b.open_kind(|k| {
            matches!(
                k,
                NodeKind::DocumentComponent(ComponentKind::Annex)
                    | NodeKind::DocumentComponent(ComponentKind::Justification)
            )
        });
        let mut event = classify(content, &profile.patterns, line_start);
        if in_raw_component && !matches!(event, LineEvent::Annex { .. } | LineEvent::Justification)
        {
            event = LineEvent::Text;
        }

        // Free text before the first structural marker becomes a preamble
        // component (whitespace-only prefixes just fold into what follows).
        if !matches!(event, LineEvent::Text) && !saw_first_marker {
            saw_first_marker = true;
            if !text[..line_start].trim().is_empty() {
                let pre = b.push(
                    NodeKind::DocumentComponent(ComponentKind::Preamble),
                    String::new(),
                    None,
                    0,
                    0,
                );
                b.nodes[pre].span.end = line_start;
                b.stack.pop();
            }
        }

        match event {
            LineEvent::Text => {
                // A text line right after a grouping header becomes that
                // grouping's title line.
                if !content.trim().is_empty() {
                    if let Some(&top) = b.stack.last() {
                        let node = &mut b.nodes[top];
                        if matches!(node.kind, NodeKind::Grouping(_))
                            && node.heading.is_none()
                            && node.children.is_empty()
                        {
                            node.heading = Some(content.trim().to_string());
                        }
                    }
                }
                // Span extension is implicit: ends are stamped at closure.
            }
            LineEvent::Annex { ordinal, body } => {
                let start = component_start(&b, line_start, text);
                b.close_until(line_start, |k| *k == NodeKind::Document);
                b.push(NodeKind::DocumentComponent(ComponentKind::Annex), ordinal, None, start, body);
            }
            LineEvent::Justification => {
                let start = component_start(&b, line_start, text);
                b.close_until(line_start, |k| *k == NodeKind::Document);
                b.push(
                    NodeKind::DocumentComponent(ComponentKind::Justification),
                    String::new(),
                    None,
                    start,
                    line_end,
                );
            }
            LineEvent::Grouping { kind, ordinal, heading, body } => {
                ensure_main_text(&mut b, &mut main_text, line_start, text);
                let rank = kind.rank();
                b.close_until(line_start, |k| match k {
                    NodeKind::Grouping(g) => g.rank() < rank,
                    other => is_component(other),
                });
                b.push(NodeKind::Grouping(kind), ordinal, heading, line_start, body);
            }
            LineEvent::Article { ordinal, body } => {
                ensure_main_text(&mut b, &mut main_text, line_start, text);
                b.close_until(line_start, |k| matches!(k, NodeKind::Grouping(_)) || is_component(k));
                b.push(NodeKind::Article, ordinal, None, line_start, body);
                // The caput opens with the article and claims the header.
                b.push(NodeKind::Caput, String::new(), None, line_start, body);
            }
            LineEvent::Paragraph { kind, ordinal, body } => {
                if !b.open_kind(|k| *k == NodeKind::Article) {
                    b.illegal(line_no, "paragraph marker outside any article")?;
                    continue;
                }
                b.close_until(line_start, |k| *k == NodeKind::Article);
                b.push(NodeKind::Paragraph(kind), ordinal, None, line_start, body);
            }
            LineEvent::Inciso { ordinal, body } => {
                if !b.open_kind(|k| matches!(k, NodeKind::Caput | NodeKind::Paragraph(_))) {
                    b.illegal(line_no, "inciso marker outside caput or paragraph")?;
                    continue;
                }
                b.close_until(line_start, |k| matches!(k, NodeKind::Caput | NodeKind::Paragraph(_)));
                b.push(NodeKind::Inciso, ordinal, None, line_start, body);
            }
            LineEvent::Alinea { ordinal, body } => {
                if !b.open_kind(|k| *k == NodeKind::Inciso) {
                    b.illegal(line_no, "alínea marker outside any inciso")?;
                    continue;
                }
                b.close_until(line_start, |k| *k == NodeKind::Inciso);
                b.push(NodeKind::Alinea, ordinal, None, line_start, body);
            }
            LineEvent::Item { ordinal, body } => {
                // Plain numbered lines are common free text; only an open
                // alínea turns them into items.
                if !b.open_kind(|k| *k == NodeKind::Alinea) {
                    b.illegal(line_no, "item marker outside any alínea")?;
                    continue;
                }
                b.close_until(line_start, |k| *k == NodeKind::Alinea);
                b.push(NodeKind::Item, ordinal, None, line_start, body);
            }
        }
    }

    // No structural marker at all: the whole text is one preamble.
    if !saw_first_marker {
        let pre =
            b.push(NodeKind::DocumentComponent(ComponentKind::Preamble), String::new(), None, 0, 0);
        b.nodes[pre].span.end = text.len();
        b.stack.pop();
    }

    b.close_until(text.len(), |_| false);
    b.nodes[0].span = Span::new(0, text.len());

    let tree = DocumentTree {
        doc_id: doc_id.to_string(),
        source_text: text.to_string(),
        nodes: b.nodes,
        root: 0,
    };
    tree.validate()?;
    Ok(tree)
}

/// Where a new top-level component should start: normally right here, but a
/// whitespace-only prefix is folded in so the leading bytes stay owned.
fn component_start(b: &Builder, line_start: usize, text: &str) -> usize {
    if b.nodes.len() == 1 && text[..line_start].trim().is_empty() {
        0
    } else {
        line_start
    }
}

/// Create the main-text component on the first body marker.
fn ensure_main_text(b: &mut Builder, main_text: &mut Option<NodeId>, line_start: usize, text: &str) {
    if main_text.is_none() {
        let start = component_start(b, line_start, text);
        let id = b.push(
            NodeKind::DocumentComponent(ComponentKind::MainText),
            String::new(),
            None,
            start,
            start,
        );
        *main_text = Some(id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::canonical_label;
    use proptest::prelude::*;

    const DEEP: &str = "\
TÍTULO I
Das Disposições Gerais
Art. 1º Esta lei estabelece normas sobre:
I - contratos que envolvam:
a) bens móveis;
b) bens imóveis, observado:
1. o registro público;
2. a avaliação prévia.
II - serviços continuados.
§ 1º Aplicam-se subsidiariamente outras normas.
§ 2º Regulamento disporá sobre o procedimento.
Art. 2º Esta lei entra em vigor na data de sua publicação.
";

    fn parse(text: &str) -> DocumentTree {
        parse_document(text, &StructureProfile::default(), "DOC").expect("parse")
    }

    fn count(tree: &DocumentTree, pred: impl Fn(&NodeKind) -> bool) -> usize {
        tree.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    fn find_label(tree: &DocumentTree, label: &str) -> NodeId {
        tree.nodes
            .iter()
            .find(|n| canonical_label(tree, n.id).unwrap() == label)
            .unwrap_or_else(|| panic!("no node labeled {label}"))
            .id
    }

    #[test]
    fn title_one_fixture_census() {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/title1.txt"
        ))
        .expect("fixture");
        let tree =
            parse_document(&text, &StructureProfile::default(), "CRFB").expect("fixture parses");
        assert_eq!(tree.nodes.len(), 32);
        assert_eq!(count(&tree, |k| *k == NodeKind::Document), 1);
        assert_eq!(
            count(&tree, |k| matches!(k, NodeKind::DocumentComponent(ComponentKind::MainText))),
            1
        );
        assert_eq!(count(&tree, |k| matches!(k, NodeKind::Grouping(_))), 1);
        assert_eq!(count(&tree, |k| *k == NodeKind::Article), 4);
        assert_eq!(count(&tree, |k| *k == NodeKind::Caput), 4);
        assert_eq!(count(&tree, |k| matches!(k, NodeKind::Paragraph(ParagraphKind::Sole))), 2);
        assert_eq!(count(&tree, |k| *k == NodeKind::Inciso), 19);

        let titulo = find_label(&tree, "CRFB, TÍTULO I");
        assert_eq!(
            tree.nodes[titulo].heading.as_deref(),
            Some("Dos Princípios Fundamentais")
        );
        find_label(&tree, "CRFB, Texto Principal");
        find_label(&tree, "CRFB, Art. 3º");
        find_label(&tree, "CRFB, Art. 1º, caput, Inciso III");
        find_label(&tree, "CRFB, Art. 4º, Parágrafo único.");
        assert_eq!(canonical_label(&tree, tree.root).unwrap(), "CRFB");
    }

    #[test]
    fn labels_are_unique() {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/title1.txt"
        ))
        .expect("fixture");
        let tree = parse_document(&text, &StructureProfile::default(), "CRFB").unwrap();
        let mut labels: Vec<String> =
            tree.nodes.iter().map(|n| canonical_label(&tree, n.id).unwrap()).collect();
        let total = labels.len();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), total, "duplicate canonical labels");
    }

    #[test]
    fn nested_enumerations_parse_to_items() {
        let tree = parse(DEEP);
        let item = find_label(&tree, "DOC, Art. 1º, caput, Inciso I, Alínea b, Item 1");
        assert_eq!(tree.body_text(item).unwrap().trim(), "o registro público;");
        find_label(&tree, "DOC, Art. 1º, caput, Inciso I, Alínea a");
        find_label(&tree, "DOC, Art. 1º, caput, Inciso II");
        find_label(&tree, "DOC, Art. 1º, § 2º");
        // The second inciso sits under the caput, not under the alínea that
        // was open when it appeared.
        let ii = find_label(&tree, "DOC, Art. 1º, caput, Inciso II");
        let caput = find_label(&tree, "DOC, Art. 1º, caput");
        assert_eq!(tree.nodes[ii].parent, Some(caput));
    }

    #[test]
    fn article_own_text_is_empty_and_caput_claims_header() {
        let tree = parse(DEEP);
        let art = find_label(&tree, "DOC, Art. 1º");
        assert_eq!(tree.own_text(art).unwrap(), "");
        let caput = find_label(&tree, "DOC, Art. 1º, caput");
        let own = tree.own_text(caput).unwrap();
        assert!(own.starts_with("Art. 1º"), "caput keeps the article header: {own:?}");
        let body = tree.body_text(caput).unwrap();
        assert!(body.starts_with("Esta lei"), "body text drops the marker: {body:?}");
        assert!(body.ends_with("sobre:\n"));
    }

    #[test]
    fn spans_are_flush_between_siblings() {
        let tree = parse(DEEP);
        let art1 = find_label(&tree, "DOC, Art. 1º");
        let art2 = find_label(&tree, "DOC, Art. 2º");
        assert_eq!(tree.nodes[art1].span.end, tree.nodes[art2].span.start);
        assert_eq!(tree.nodes[art2].span.end, tree.source_text.len());
        let p1 = find_label(&tree, "DOC, Art. 1º, § 1º");
        let caput = find_label(&tree, "DOC, Art. 1º, caput");
        assert_eq!(tree.nodes[caput].span.end, tree.nodes[p1].span.start);
    }

    #[test]
    fn big_and_suffixed_article_numbers() {
        let text = "Art. 14. Primeiro.\nArt. 103-A. Segundo.\nArt. 250. Terceiro.\n";
        let tree = parse(text);
        find_label(&tree, "DOC, Art. 14.");
        find_label(&tree, "DOC, Art. 103-A.");
        find_label(&tree, "DOC, Art. 250.");
    }

    #[test]
    fn preamble_collects_text_before_first_marker() {
        let text = "Nós, representantes do povo, promulgamos o seguinte.\nArt. 1º Início.\n";
        let tree = parse(text);
        let pre = find_label(&tree, "DOC, Preâmbulo");
        assert_eq!(
            tree.node_full_text(pre).unwrap().trim(),
            "Nós, representantes do povo, promulgamos o seguinte."
        );
        // Main text starts where the preamble ends.
        let mt = find_label(&tree, "DOC, Texto Principal");
        assert_eq!(tree.nodes[pre].span.end, tree.nodes[mt].span.start);
        assert_eq!(tree.nodes[mt].span.end, text.len());
    }

    #[test]
    fn annex_swallows_markers_as_raw_text() {
        let text = "Art. 1º Corpo da lei.\nANEXO I\nArt. 99. Isto não é um artigo.\nII - nem isto.\n";
        let tree = parse(text);
        assert_eq!(count(&tree, |k| *k == NodeKind::Article), 1);
        assert_eq!(count(&tree, |k| *k == NodeKind::Inciso), 0);
        let annex = find_label(&tree, "DOC, Anexo I");
        assert!(tree.node_full_text(annex).unwrap().contains("Art. 99."));
    }

    #[test]
    fn annex_keyword_in_prose_is_not_a_header() {
        let text = "Art. 1º Os valores constam de tabela própria.\nAnexo a esta lei segue o demonstrativo.\n";
        let tree = parse(text);
        assert_eq!(
            count(&tree, |k| matches!(k, NodeKind::DocumentComponent(ComponentKind::Annex))),
            0
        );
        let caput = find_label(&tree, "DOC, Art. 1º, caput");
        assert!(tree.node_full_text(caput).unwrap().contains("Anexo a esta lei"));
    }

    #[test]
    fn grouping_keyword_in_prose_is_not_a_heading() {
        let text = "Art. 1º Fica criado o fundo.\nParte do produto será repassada aos Estados.\n";
        let tree = parse(text);
        assert_eq!(count(&tree, |k| matches!(k, NodeKind::Grouping(_))), 0);
    }

    #[test]
    fn lenient_treats_misplaced_markers_as_text() {
        let text = "Art. 1º Lista:\n1. um item órfão.\n";
        let tree = parse(text);
        assert_eq!(count(&tree, |k| *k == NodeKind::Item), 0);
        let caput = find_label(&tree, "DOC, Art. 1º, caput");
        assert!(tree.node_full_text(caput).unwrap().contains("um item órfão"));
    }

    #[test]
    fn strict_rejects_misplaced_markers() {
        let text = "Art. 1º Lista:\n1. um item órfão.\n";
        let profile = StructureProfile::br_lc95(Strictness::Strict);
        let err = parse_document(text, &profile, "DOC").unwrap_err();
        match err {
            ParseError::MalformedStructure { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedStructure, got {other:?}"),
        }
    }

    #[test]
    fn strict_rejects_paragraph_without_article() {
        let profile = StructureProfile::br_lc95(Strictness::Strict);
        let err = parse_document("§ 1º Sem artigo.\n", &profile, "DOC").unwrap_err();
        assert!(matches!(err, ParseError::MalformedStructure { line: 1, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        let profile = StructureProfile::default();
        assert!(matches!(parse_document("", &profile, "DOC"), Err(ParseError::EmptyInput)));
        assert!(matches!(parse_document("  \n \n", &profile, "DOC"), Err(ParseError::EmptyInput)));
    }

    #[test]
    fn text_without_markers_is_all_preamble() {
        let tree = parse("Apenas texto corrido.\nSem marcador nenhum.\n");
        assert_eq!(tree.nodes.len(), 2);
        let pre = find_label(&tree, "DOC, Preâmbulo");
        assert_eq!(tree.nodes[pre].span, Span::new(0, tree.source_text.len()));
    }

    #[test]
    fn json_round_trip_preserves_tree() {
        let tree = parse(DEEP);
        let json = tree.to_json();
        let back = DocumentTree::from_json(&json).expect("round trip");
        assert_eq!(back, tree);
    }

    #[test]
    fn skipped_grouping_levels_nest() {
        let text = "TÍTULO I\nSubseção I\nArt. 1º Algo.\nTÍTULO II\nArt. 2º Outra coisa.\n";
        let tree = parse(text);
        let sub = find_label(&tree, "DOC, TÍTULO I, Subseção I");
        let t1 = find_label(&tree, "DOC, TÍTULO I");
        assert_eq!(tree.nodes[sub].parent, Some(t1));
        // TÍTULO II must close TÍTULO I (and its subsection), not nest.
        let t2 = find_label(&tree, "DOC, TÍTULO II");
        let mt = find_label(&tree, "DOC, Texto Principal");
        assert_eq!(tree.nodes[t2].parent, Some(mt));
    }

    proptest! {
        /// Lenient parsing of arbitrary marker/text soups must either fail
        /// cleanly on empty input or produce a tree that passes validation
        /// and survives a JSON round trip.
        #[test]
        fn lenient_parse_never_breaks(lines in proptest::collection::vec(
            prop_oneof![
                Just("TÍTULO I".to_string()),
                Just("CAPÍTULO II".to_string()),
                Just("Seção Única".to_string()),
                Just("Art. 1º Texto do caput:".to_string()),
                Just("Art. 103-A. Outro artigo.".to_string()),
                Just("§ 2º Um parágrafo.".to_string()),
                Just("Parágrafo único. Só um.".to_string()),
                Just("IV - um inciso;".to_string()),
                Just("b) uma alínea:".to_string()),
                Just("3. um item.".to_string()),
                Just("ANEXO I".to_string()),
                Just("texto corrido de continuação".to_string()),
                Just("".to_string()),
                "[a-zA-Z0-9çãéº§ ().-]{0,40}",
            ],
            0..40,
        )) {
            let text = lines.join("\n");
            match parse_document(&text, &StructureProfile::default(), "DOC") {
                Ok(tree) => {
                    prop_assert!(tree.validate().is_ok());
                    let back = DocumentTree::from_json(&tree.to_json()).unwrap();
                    prop_assert_eq!(back, tree);
                }
                Err(ParseError::EmptyInput) => prop_assert!(text.trim().is_empty()),
                Err(other) => return Err(TestCaseError::fail(format!("unexpected error: {other}"))),
            }
        }
    }
}
