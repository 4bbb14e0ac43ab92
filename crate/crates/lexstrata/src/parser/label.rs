//! Canonical human-readable labels for tree nodes.
//!
//! A label is the comma-joined path from the document id down to the node,
//! e.g. `CRFB, Art. 29., caput, Inciso X` or `CRFB, TÍTULO IV, CAPÍTULO II,
//! Seção V, Subseção I`. Two simplifications keep labels citation-like: the
//! main-text component never appears as a path segment, and article labels
//! drop the grouping chain (articles are numbered document-wide, so
//! `CRFB, Art. 29.` is already unambiguous).

use super::{
    ComponentKind, DocumentTree, GroupingKind, NodeId, NodeKind, ParagraphKind, ParseError,
};

/// Render the canonical label of `id`.
///
/// Labels are unique within a tree: sibling provisions differ in their final
/// segment's ordinal, and every other segment is inherited from the parent.
pub fn canonical_label(tree: &DocumentTree, id: NodeId) -> Result<String, ParseError> {
    let path = tree.path_to(id)?;
    let mut segments = vec![tree.doc_id.clone()];
    let article_at = path.iter().position(|&n| tree.nodes[n].kind == NodeKind::Article);
    let visible = match article_at {
        Some(at) => &path[at..],
        None => &path[1..],
    };
    for &nid in visible {
        let node = &tree.nodes[nid];
        if node.kind == NodeKind::DocumentComponent(ComponentKind::MainText) && nid != id {
            continue;
        }
        segments.push(segment(&node.kind, &node.ordinal));
    }
    Ok(segments.join(", "))
}

fn segment(kind: &NodeKind, ordinal: &str) -> String {
    match kind {
        NodeKind::Document => unreachable!("document segment is the doc id"),
        NodeKind::DocumentComponent(ComponentKind::MainText) => "Texto Principal".to_string(),
        NodeKind::DocumentComponent(ComponentKind::Preamble) => "Preâmbulo".to_string(),
        NodeKind::DocumentComponent(ComponentKind::Justification) => "Justificação".to_string(),
        NodeKind::DocumentComponent(ComponentKind::Annex) => {
            if ordinal.is_empty() {
                "Anexo".to_string()
            } else {
                format!("Anexo {ordinal}")
            }
        }
        NodeKind::Grouping(g) => grouping_segment(*g, ordinal),
        NodeKind::Article => format!("Art. {}", provision_number(ordinal)),
        NodeKind::Caput => "caput".to_string(),
        NodeKind::Paragraph(ParagraphKind::Numbered) => {
            format!("§ {}", provision_number(ordinal))
        }
        NodeKind::Paragraph(ParagraphKind::Sole) => "Parágrafo único.".to_string(),
        NodeKind::Inciso => format!("Inciso {ordinal}"),
        NodeKind::Alinea => format!("Alínea {ordinal}"),
        NodeKind::Item => format!("Item {ordinal}"),
    }
}

fn grouping_segment(kind: GroupingKind, ordinal: &str) -> String {
    // PARTE through CAPÍTULO are conventionally set in caps; Seção and
    // Subseção in title case. Ordinals follow the keyword's casing except
    // Roman numerals, which are always caps.
    let (keyword, caps) = match kind {
        GroupingKind::Parte => ("PARTE", true),
        GroupingKind::Livro => ("LIVRO", true),
        GroupingKind::Titulo => ("TÍTULO", true),
        GroupingKind::Capitulo => ("CAPÍTULO", true),
        GroupingKind::Secao => ("Seção", false),
        GroupingKind::Subsecao => ("Subseção", false),
    };
    let upper = ordinal.to_uppercase();
    let rendered = if caps || is_roman(&upper) || ordinal.chars().all(|c| c.is_ascii_digit()) {
        upper
    } else {
        title_case(ordinal)
    };
    format!("{keyword} {rendered}")
}

fn is_roman(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| "IVXLCDM".contains(c))
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => {
            first.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase()
        }
        None => String::new(),
    }
}

/// Citation form of an article or paragraph number.
///
/// Numbers one through nine keep the ordinal mark and no period (`1º`,
/// `9º`); ten and up take a period (`14.`); letter-suffixed provisions
/// always take the period (`167-C.`, `4º-A.`).
fn provision_number(decorated: &str) -> String {
    let (head, suffix) = match decorated.split_once('-') {
        Some((h, s)) => (h, Some(s)),
        None => (decorated, None),
    };
    let digits: String = head.chars().filter(|c| c.is_ascii_digit()).collect();
    let n: u64 = digits.parse().unwrap_or(0);
    let mut out = if n <= 9 { format!("{n}º") } else { n.to_string() };
    if let Some(s) = suffix {
        out.push('-');
        out.push_str(&s.to_uppercase());
    }
    if n >= 10 || suffix.is_some() {
        out.push('.');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provision_numbers_follow_citation_style() {
        assert_eq!(provision_number("1º"), "1º");
        assert_eq!(provision_number("9º"), "9º");
        assert_eq!(provision_number("9"), "9º");
        assert_eq!(provision_number("10"), "10.");
        assert_eq!(provision_number("14"), "14.");
        assert_eq!(provision_number("167-C"), "167-C.");
        assert_eq!(provision_number("4º-A"), "4º-A.");
        assert_eq!(provision_number("250"), "250.");
    }

    #[test]
    fn grouping_segments_follow_house_casing() {
        assert_eq!(grouping_segment(GroupingKind::Titulo, "IV"), "TÍTULO IV");
        assert_eq!(grouping_segment(GroupingKind::Capitulo, "II"), "CAPÍTULO II");
        assert_eq!(grouping_segment(GroupingKind::Secao, "V"), "Seção V");
        assert_eq!(grouping_segment(GroupingKind::Subsecao, "I"), "Subseção I");
        assert_eq!(grouping_segment(GroupingKind::Parte, "geral"), "PARTE GERAL");
        assert_eq!(grouping_segment(GroupingKind::Secao, "ÚNICA"), "Seção Única");
        assert_eq!(grouping_segment(GroupingKind::Secao, "única"), "Seção Única");
    }
}
