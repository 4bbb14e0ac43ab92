//! Synthetic spans for label-only candidate streams.
//!
//! Replay fixtures carry canonical labels but no source offsets, so
//! containment dedup needs spans reconstructed from the labels alone. Labels
//! are parsed into structural paths, the paths are arranged in a trie — with
//! articles routed under their grouping chain via a hierarchy lookup table —
//! and every trie node is assigned a nested interval by an Euler-tour walk
//! that reserves one slot per node, making each parent interval strictly
//! wider than its children and sibling intervals disjoint.

use std::collections::BTreeMap;

use super::{DocSpan, SelectError};

/// Where articles sit inside the grouping hierarchy, one row per grouping
/// ("TÍTULO II, CAPÍTULO IV" spans articles 14–16). Used to decide whether a
/// grouping-level label contains an article-level label.
#[derive(Debug, Clone, Default)]
pub struct HierarchyTable {
    rows: Vec<HierarchyRow>,
}

#[derive(Debug, Clone)]
struct HierarchyRow {
    /// Normalized grouping keys, outermost first.
    keys: Vec<String>,
    first: u32,
    last: u32,
}

impl HierarchyTable {
    /// A table with no rows: articles attach directly to the document, so
    /// grouping labels and article labels come out disjoint.
    pub fn empty() -> HierarchyTable {
        HierarchyTable::default()
    }

    /// Load from CSV with columns `grouping_path,first_article,last_article`
    /// (the path comma-separated in canonical label form, bounds as article
    /// numbers like `1º` or `14`).
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<HierarchyTable, SelectError> {
        let bad = |msg: String| SelectError::BadHierarchyTable(msg);
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in csv.records().enumerate() {
            let record = record.map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
            let (path, first, last) = match (record.get(0), record.get(1), record.get(2)) {
                (Some(p), Some(f), Some(l)) => (p, f, l),
                _ => return Err(bad(format!("row {}: expected 3 columns", i + 2))),
            };
            let mut keys = Vec::new();
            for seg in path.split(", ") {
                let key = normalize_grouping(seg)
                    .ok_or_else(|| bad(format!("row {}: {seg:?} is not a grouping", i + 2)))?;
                keys.push(key);
            }
            let parse_bound = |s: &str| {
                parse_article_ordinal(s)
                    .map(|(n, _)| n)
                    .ok_or_else(|| bad(format!("row {}: bad article bound {s:?}", i + 2)))
            };
            let (first, last) = (parse_bound(first)?, parse_bound(last)?);
            if keys.is_empty() || first > last {
                return Err(bad(format!("row {}: empty path or inverted range", i + 2)));
            }
            rows.push(HierarchyRow { keys, first, last });
        }
        Ok(HierarchyTable { rows })
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<HierarchyTable, SelectError> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            SelectError::BadHierarchyTable(format!("{}: {e}", path.as_ref().display()))
        })?;
        HierarchyTable::from_csv_reader(file)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Deepest grouping chain whose article range covers `number`.
    fn locate(&self, number: u32) -> Option<&HierarchyRow> {
        self.rows
            .iter()
            .filter(|r| r.first <= number && number <= r.last)
            .max_by_key(|r| r.keys.len())
    }
}

/// One step of a structural path. Ordering gives siblings a stable,
/// human-sensible order (articles numerically, then by suffix).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TrieKey {
    Component(String),
    Grouping(String),
    Article(u32, Option<String>),
    Segment(String),
}

/// Normalize a grouping segment ("TÍTULO IV", "Seção Única") to an
/// accent-folded uppercase key, or None when it is not a grouping.
fn normalize_grouping(segment: &str) -> Option<String> {
    let folded: String = segment
        .to_uppercase()
        .chars()
        .map(|c| match c {
            'Í' => 'I',
            'Ç' => 'C',
            'Ã' => 'A',
            'Ú' => 'U',
            other => other,
        })
        .collect();
    let (keyword, ordinal) = folded.split_once(' ')?;
    let known = matches!(keyword, "PARTE" | "LIVRO" | "TITULO" | "CAPITULO" | "SECAO" | "SUBSECAO");
    (known && !ordinal.trim().is_empty())
        .then(|| format!("{keyword} {}", ordinal.trim()))
}

/// Parse an article ordinal in any canonical form — `1º`, `5º`, `14`,
/// `14.`, `167-C.` — into (number, letter suffix).
fn parse_article_ordinal(token: &str) -> Option<(u32, Option<String>)> {
    let token = token.trim().trim_end_matches('.');
    let (head, suffix) = match token.split_once('-') {
        Some((h, s)) => {
            let s = s.trim();
            let ok = !s.is_empty()
                && s.len() <= 3
                && s.chars().all(|c| c.is_ascii_alphabetic());
            if !ok {
                return None;
            }
            (h, Some(s.to_uppercase()))
        }
        None => (token, None),
    };
    let digits = head.trim_end_matches(['º', 'o', '°']);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, suffix))
}

fn is_roman(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| "IVXLCDM".contains(c))
}

/// Parse a below-article segment: `caput`, `§ 4º`, `Parágrafo único.`,
/// `Inciso XXXVIII`, `Alínea b`, `Item 1`.
fn parse_tail_segment(segment: &str) -> Option<TrieKey> {
    if segment == "caput" || segment == "Parágrafo único." || segment == "Parágrafo único" {
        return Some(TrieKey::Segment(segment.trim_end_matches('.').to_string()));
    }
    if let Some(num) = segment.strip_prefix("§ ") {
        parse_article_ordinal(num)?;
        return Some(TrieKey::Segment(format!("§ {}", num.trim_end_matches('.'))));
    }
    if let Some(ord) = segment.strip_prefix("Inciso ") {
        return is_roman(ord).then(|| TrieKey::Segment(segment.to_string()));
    }
    if let Some(ord) = segment.strip_prefix("Alínea ") {
        let ok = !ord.is_empty() && ord.len() <= 2 && ord.chars().all(|c| c.is_ascii_lowercase());
        return ok.then(|| TrieKey::Segment(segment.to_string()));
    }
    if let Some(ord) = segment.strip_prefix("Item ") {
        let ok = !ord.is_empty() && ord.chars().all(|c| c.is_ascii_digit());
        return ok.then(|| TrieKey::Segment(segment.to_string()));
    }
    None
}

fn is_component(segment: &str) -> bool {
    segment == "Texto Principal"
        || segment == "Preâmbulo"
        || segment == "Justificação"
        || segment == "Anexo"
        || segment.starts_with("Anexo ")
}

/// Decompose a canonical label into its document id and trie path.
fn chain_for_label(
    label: &str,
    table: &HierarchyTable,
) -> Result<(String, Vec<TrieKey>), SelectError> {
    let malformed = || SelectError::MalformedLabel(label.to_string());
    let mut parts = label.split(", ");
    let doc_id = parts.next().filter(|d| !d.trim().is_empty()).ok_or_else(malformed)?;
    let segments: Vec<&str> = parts.collect();
    let mut keys = Vec::new();

    let mut rest = segments.as_slice();
    if let Some(&first) = rest.first() {
        if let Some(ordinal) = first.strip_prefix("Art. ") {
            // Article-rooted: route under the grouping chain the hierarchy
            // table places it in (if any).
            let (number, suffix) = parse_article_ordinal(ordinal).ok_or_else(malformed)?;
            if let Some(row) = table.locate(number) {
                keys.extend(row.keys.iter().cloned().map(TrieKey::Grouping));
            }
            keys.push(TrieKey::Article(number, suffix));
            rest = &rest[1..];
        } else if normalize_grouping(first).is_some() {
            // Grouping chain: every segment must be a grouping.
            for seg in rest {
                let key = normalize_grouping(seg).ok_or_else(malformed)?;
                keys.push(TrieKey::Grouping(key));
            }
            rest = &[];
        } else if is_component(first) {
            keys.push(TrieKey::Component(first.to_string()));
            rest = &rest[1..];
        }
    }
    for seg in rest {
        keys.push(parse_tail_segment(seg).ok_or_else(malformed)?);
    }
    Ok((doc_id.to_string(), keys))
}

#[derive(Default)]
struct TrieNode {
    children: BTreeMap<TrieKey, TrieNode>,
    start: usize,
    end: usize,
}

fn number_trie(node: &mut TrieNode, counter: &mut usize) {
    node.start = *counter;
    *counter += 1;
    for child in node.children.values_mut() {
        number_trie(child, counter);
    }
    *counter += 1;
    node.end = *counter;
}

/// Assign nested synthetic spans to canonical labels.
///
/// A label that is a structural prefix of another receives a strictly
/// containing interval; labels on disjoint branches receive disjoint
/// intervals. Grouping↔article containment follows `table`; with an empty
/// table, articles hang directly off the document and grouping labels are
/// disjoint from every article label.
pub fn spans_from_labels(
    labels: &[String],
    table: &HierarchyTable,
) -> Result<Vec<DocSpan>, SelectError> {
    let mut chains = Vec::with_capacity(labels.len());
    let mut roots: BTreeMap<String, TrieNode> = BTreeMap::new();
    for label in labels {
        let (doc_id, keys) = chain_for_label(label, table)?;
        let mut node = roots.entry(doc_id.clone()).or_default();
        for key in &keys {
            node = node.children.entry(key.clone()).or_default();
        }
        chains.push((doc_id, keys));
    }
    let mut counter = 0usize;
    for root in roots.values_mut() {
        number_trie(root, &mut counter);
    }
    let spans = chains
        .into_iter()
        .map(|(doc_id, keys)| {
            let mut node = &roots[&doc_id];
            for key in &keys {
                node = &node.children[key];
            }
            DocSpan { doc_id, start: node.start, end: node.end }
        })
        .collect();
    Ok(spans)
}
