//! Replay and evaluation tooling for retrieval comparisons.
//!
//! This module re-runs the chunk-selection walk over previously recorded
//! ranked streams (one CSV row per retrieved chunk), joins the outcome with
//! human relevance grades, and renders comparison reports. It deliberately
//! works from *data* — a ranked CSV plus an optional hierarchy table — so a
//! recorded retrieval run can be audited without re-embedding anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selector::{
    Candidate, DocSpan, HierarchyTable, SelectError, SelectionParams, SelectionResult, StopReason,
    select_chunks, spans_from_labels,
};

/// Label given to the synthetic end-of-stream candidate appended during
/// replay.
///
/// Recorded streams only contain the chunks that were *selected*, so the
/// stream ends exactly where the original walk stopped. Appending one
/// synthetic candidate lets the selector re-derive the stop reason (budget
/// versus deviation floor) instead of reporting `Exhausted` for every
/// stream. The sentinel lives in its own pseudo-document so it can never be
/// skipped as a duplicate span, and its similarity is below every floor.
pub const SENTINEL_LABEL: &str = "__sentinel__";

/// Errors produced by the evaluation helpers.
#[derive(Debug, Error)]
pub enum EvalError {
    /// The input CSV could not be parsed or violated its ordering contract.
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    /// A selected chunk has no relevance grade.
    #[error("missing annotation for {question_id}/{method}: `{label}`")]
    MissingAnnotation {
        question_id: String,
        method: Method,
        label: String,
    },
    /// The selection walk itself failed.
    #[error(transparent)]
    Select(#[from] SelectError),
    /// A corpus comparison was requested over zero documents.
    #[error("empty corpus: nothing to compare")]
    EmptyCorpus,
    /// Chunking a corpus document failed.
    #[error(transparent)]
    Chunk(#[from] crate::chunker::ChunkError),
    /// Embedding failed while building or querying a comparison index.
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    /// The in-memory comparison index misbehaved.
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
}

/// Which retrieval granularity produced a stream.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Chunks drawn from every structural layer.
    Multilayer,
    /// Chunks drawn from basic units only.
    Flat,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Multilayer => "multilayer",
            Method::Flat => "flat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Method, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multilayer" => Ok(Method::Multilayer),
            "flat" => Ok(Method::Flat),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Human relevance grade for one selected chunk.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Grade {
    /// The chunk is required to answer the question.
    Essential,
    /// The chunk helps but is not required.
    Complementary,
    /// The chunk does not contribute to the answer.
    Unnecessary,
}

impl Grade {
    pub fn as_str(&self) -> &'static str {
        match self {
            Grade::Essential => "E",
            Grade::Complementary => "C",
            Grade::Unnecessary => "U",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Grade, String> {
        match s.trim() {
            "E" | "e" => Ok(Grade::Essential),
            "C" | "c" => Ok(Grade::Complementary),
            "U" | "u" => Ok(Grade::Unnecessary),
            other => Err(format!("unknown grade `{other}`")),
        }
    }
}

/// One row of a recorded ranked stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub question_id: String,
    pub method: Method,
    /// 1-based position within its (question, method) stream.
    pub rank: usize,
    pub label: String,
    pub similarity: f64,
    pub token_count: usize,
}

/// One relevance grade, keyed by (question, method, label).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAnnotation {
    pub question_id: String,
    pub method: Method,
    pub label: String,
    pub grade: Grade,
}

/// Replay outcome for one (question, method) stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedStream {
    pub question_id: String,
    pub method: Method,
    pub result: SelectionResult,
}

/// Summary of one replayed stream, suitable for tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub question_id: String,
    pub method: Method,
    pub chunk_count: usize,
    pub total_tokens: usize,
    pub max_similarity: f64,
    pub min_similarity: f64,
}

/// Relevance-grade tallies for one method, over all selected chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodProportions {
    pub method: Method,
    pub essential: usize,
    pub complementary: usize,
    pub unnecessary: usize,
}

impl MethodProportions {
    pub fn total(&self) -> usize {
        self.essential + self.complementary + self.unnecessary
    }

    pub fn count(&self, grade: Grade) -> usize {
        match grade {
            Grade::Essential => self.essential,
            Grade::Complementary => self.complementary,
            Grade::Unnecessary => self.unnecessary,
        }
    }

    /// Share of `grade` among all graded chunks, in percent.
    pub fn percent(&self, grade: Grade) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        100.0 * self.count(grade) as f64 / self.total() as f64
    }
}

/// Everything the `report` command renders.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ComparisonRow>,
    pub stop_reasons: Vec<(String, Method, StopReason)>,
    pub proportions: Vec<MethodProportions>,
    /// Number of questions whose top-ranked chunk is identical across
    /// methods. Recomputed from the replayed streams, never transcribed.
    pub first_rank_coincidences: usize,
    /// Number of distinct questions that have streams for both methods.
    pub paired_questions: usize,
}

const REPLAY_HEADERS: [&str; 6] = [
    "question_id",
    "method",
    "rank",
    "label",
    "similarity",
    "token_count",
];

const ANNOTATION_HEADERS: [&str; 4] = ["question_id", "method", "label", "grade"];

fn check_headers(found: &csv::StringRecord, expected: &[&str]) -> Result<(), EvalError> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(EvalError::MalformedCsv(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

fn field(record: &csv::StringRecord, idx: usize, line: u64) -> Result<&str, EvalError> {
    record.get(idx).ok_or_else(|| {
        EvalError::MalformedCsv(format!("line {line}: missing column {}", idx + 1))
    })
}

/// Reads a ranked-stream CSV.
///
/// The file must carry the header
/// `question_id,method,rank,label,similarity,token_count`, group each
/// (question, method) stream contiguously, and number ranks 1, 2, … within
/// each stream. Violations yield [`EvalError::MalformedCsv`].
pub fn read_replay_csv<R: Read>(reader: R) -> Result<Vec<ReplayRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::MalformedCsv(e.to_string()))?
        .clone();
    check_headers(&headers, &REPLAY_HEADERS)?;

    let mut rows = Vec::new();
    let mut finished: BTreeSet<(String, Method)> = BTreeSet::new();
    let mut current: Option<(String, Method, usize)> = None;

    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2; // header is line 1
        let record = record.map_err(|e| EvalError::MalformedCsv(e.to_string()))?;
        let question_id = field(&record, 0, line)?.trim().to_string();
        let method: Method = field(&record, 1, line)?
            .parse()
            .map_err(|e| EvalError::MalformedCsv(format!("line {line}: {e}")))?;
        let rank: usize = field(&record, 2, line)?.trim().parse().map_err(|_| {
            EvalError::MalformedCsv(format!("line {line}: rank is not a positive integer"))
        })?;
        let label = field(&record, 3, line)?.trim().to_string();
        let similarity: f64 = field(&record, 4, line)?.trim().parse().map_err(|_| {
            EvalError::MalformedCsv(format!("line {line}: similarity is not a number"))
        })?;
        let token_count: usize = field(&record, 5, line)?.trim().parse().map_err(|_| {
            EvalError::MalformedCsv(format!("line {line}: token_count is not an integer"))
        })?;
        if !similarity.is_finite() {
            return Err(EvalError::MalformedCsv(format!(
                "line {line}: similarity must be finite"
            )));
        }

        let key = (question_id.clone(), method);
        match &mut current {
            Some((q, m, expected)) if *q == key.0 && *m == key.1 => {
                *expected += 1;
                if rank != *expected {
                    return Err(EvalError::MalformedCsv(format!(
                        "line {line}: expected rank {expected} for {q}/{m}, found {rank}"
                    )));
                }
            }
            _ => {
                if let Some((q, m, _)) = current.take() {
                    finished.insert((q, m));
                }
                if finished.contains(&key) {
                    return Err(EvalError::MalformedCsv(format!(
                        "line {line}: stream {}/{} is not contiguous",
                        key.0, key.1
                    )));
                }
                if rank != 1 {
                    return Err(EvalError::MalformedCsv(format!(
                        "line {line}: stream {}/{} must start at rank 1, found {rank}",
                        key.0, key.1
                    )));
                }
                current = Some((key.0.clone(), key.1, 1));
            }
        }

        rows.push(ReplayRow {
            question_id,
            method,
            rank,
            label,
            similarity,
            token_count,
        });
    }

    if rows.is_empty() {
        return Err(EvalError::MalformedCsv("no data rows".to_string()));
    }
    Ok(rows)
}

/// Reads a relevance-annotation CSV
/// (`question_id,method,label,grade`; one row per selected chunk).
pub fn read_annotations_csv<R: Read>(reader: R) -> Result<Vec<RelevanceAnnotation>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::MalformedCsv(e.to_string()))?
        .clone();
    check_headers(&headers, &ANNOTATION_HEADERS)?;

    let mut rows = Vec::new();
    let mut seen: BTreeSet<(String, Method, String)> = BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| EvalError::MalformedCsv(e.to_string()))?;
        let question_id = field(&record, 0, line)?.trim().to_string();
        let method: Method = field(&record, 1, line)?
            .parse()
            .map_err(|e| EvalError::MalformedCsv(format!("line {line}: {e}")))?;
        let label = field(&record, 2, line)?.trim().to_string();
        let grade: Grade = field(&record, 3, line)?
            .parse()
            .map_err(|e| EvalError::MalformedCsv(format!("line {line}: {e}")))?;
        if !seen.insert((question_id.clone(), method, label.clone())) {
            return Err(EvalError::MalformedCsv(format!(
                "line {line}: duplicate annotation for {question_id}/{method}: `{label}`"
            )));
        }
        rows.push(RelevanceAnnotation {
            question_id,
            method,
            label,
            grade,
        });
    }
    Ok(rows)
}

fn sentinel_candidate() -> Candidate {
    Candidate {
        label: SENTINEL_LABEL.to_string(),
        // Below any finite deviation floor, and trivially sorted after any
        // real candidate.
        similarity: f64::NEG_INFINITY,
        token_count: 1,
        span: DocSpan::new(SENTINEL_LABEL, 0, 1),
    }
}

/// Replays already-grouped rows. See [`replay_streams`].
pub fn replay_rows(
    rows: &[ReplayRow],
    params: &SelectionParams,
    table: &HierarchyTable,
) -> Result<Vec<ReplayedStream>, EvalError> {
    let mut streams = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len()
            && rows[end].question_id == rows[start].question_id
            && rows[end].method == rows[start].method
        {
            end += 1;
        }
        let group = &rows[start..end];
        let labels: Vec<String> = group.iter().map(|r| r.label.clone()).collect();
        let spans = spans_from_labels(&labels, table)?;
        let mut candidates: Vec<Candidate> = group
            .iter()
            .zip(spans)
            .map(|(row, span)| Candidate {
                label: row.label.clone(),
                similarity: row.similarity,
                token_count: row.token_count,
                span,
            })
            .collect();
        candidates.push(sentinel_candidate());

        let mut result = select_chunks(candidates, params)?;
        // A stream shorter than the minimum fill admits the sentinel itself;
        // strip it so callers only ever see recorded chunks. The walk really
        // did exhaust the stream in that case.
        if let Some(sentinel) = result.selected.pop_if(|c| c.label == SENTINEL_LABEL) {
            result.cumulative_tokens -= sentinel.token_count;
        }
        streams.push(ReplayedStream {
            question_id: group[0].question_id.clone(),
            method: group[0].method,
            result,
        });
        start = end;
    }
    Ok(streams)
}

/// Re-runs the selection walk over every stream in a ranked CSV.
///
/// Each stream is replayed with one synthetic end-of-stream candidate so the
/// original stop reason (budget versus deviation floor) is re-derived rather
/// than guessed. `table` supplies grouping→article containment for labels
/// whose nesting is not decidable from the label text alone; pass
/// [`HierarchyTable::empty`] when no such table exists.
pub fn replay_streams<R: Read>(
    reader: R,
    params: &SelectionParams,
    table: &HierarchyTable,
) -> Result<Vec<ReplayedStream>, EvalError> {
    let rows = read_replay_csv(reader)?;
    replay_rows(&rows, params, table)
}

/// Tabulates replayed streams: one row per (question, method).
pub fn comparison_rows(streams: &[ReplayedStream]) -> Vec<ComparisonRow> {
    streams
        .iter()
        .map(|stream| {
            let sims = stream.result.selected.iter().map(|c| c.similarity);
            let max_similarity = sims.clone().fold(f64::NEG_INFINITY, f64::max);
            let min_similarity = sims.fold(f64::INFINITY, f64::min);
            ComparisonRow {
                question_id: stream.question_id.clone(),
                method: stream.method,
                chunk_count: stream.result.selected.len(),
                total_tokens: stream.result.cumulative_tokens,
                max_similarity,
                min_similarity,
            }
        })
        .collect()
}

/// Replays a ranked CSV and summarises each stream.
pub fn replay_appendix<R: Read>(
    reader: R,
    params: &SelectionParams,
    table: &HierarchyTable,
) -> Result<Vec<ComparisonRow>, EvalError> {
    Ok(comparison_rows(&replay_streams(reader, params, table)?))
}

/// Tallies relevance grades over every chunk selected by the replay.
///
/// Every selected chunk must have a grade; a gap yields
/// [`EvalError::MissingAnnotation`]. Methods are reported in
/// multilayer-then-flat order, and only when present in `streams`.
pub fn relevance_proportions(
    streams: &[ReplayedStream],
    annotations: &[RelevanceAnnotation],
) -> Result<Vec<MethodProportions>, EvalError> {
    let mut grades: BTreeMap<(String, Method, String), Grade> = BTreeMap::new();
    for a in annotations {
        grades.insert((a.question_id.clone(), a.method, a.label.clone()), a.grade);
    }

    let mut tallies: BTreeMap<Method, MethodProportions> = BTreeMap::new();
    for stream in streams {
        for candidate in &stream.result.selected {
            let key = (
                stream.question_id.clone(),
                stream.method,
                candidate.label.clone(),
            );
            let grade = grades
                .get(&key)
                .copied()
                .ok_or_else(|| EvalError::MissingAnnotation {
                    question_id: stream.question_id.clone(),
                    method: stream.method,
                    label: candidate.label.clone(),
                })?;
            let tally = tallies.entry(stream.method).or_insert(MethodProportions {
                method: stream.method,
                essential: 0,
                complementary: 0,
                unnecessary: 0,
            });
            match grade {
                Grade::Essential => tally.essential += 1,
                Grade::Complementary => tally.complementary += 1,
                Grade::Unnecessary => tally.unnecessary += 1,
            }
        }
    }
    Ok(tallies.into_values().collect())
}

/// Linear-interpolation quantile of an ascending-sorted, non-empty slice.
///
/// Uses the `pos = p · (n − 1)` convention: the value at fractional position
/// `pos` is interpolated between its two neighbours.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "p must be in [0, 1]");
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Exports per-stream similarity extremes plus distribution summaries as a
/// tidy CSV (`method,series,label,value`).
///
/// For each method and each series (`max`, `min`) the per-question values are
/// listed first (labelled by question id), followed by `median`, `q1`, `q3`
/// and `iqr` rows computed with linear interpolation. The layout feeds
/// box-plot tooling directly.
pub fn export_similarity_stats(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("method,series,label,value\n");
    for method in [Method::Multilayer, Method::Flat] {
        let method_rows: Vec<&ComparisonRow> =
            rows.iter().filter(|r| r.method == method).collect();
        if method_rows.is_empty() {
            continue;
        }
        for series in ["max", "min"] {
            let value = |r: &ComparisonRow| match series {
                "max" => r.max_similarity,
                _ => r.min_similarity,
            };
            for row in &method_rows {
                let _ = writeln!(
                    out,
                    "{method},{series},{},{}",
                    row.question_id,
                    value(row)
                );
            }
            let mut values: Vec<f64> = method_rows.iter().map(|r| value(r)).collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite similarity"));
            let q1 = quantile_sorted(&values, 0.25);
            let median = quantile_sorted(&values, 0.5);
            let q3 = quantile_sorted(&values, 0.75);
            let _ = writeln!(out, "{method},{series},median,{median}");
            let _ = writeln!(out, "{method},{series},q1,{q1}");
            let _ = writeln!(out, "{method},{series},q3,{q3}");
            let _ = writeln!(out, "{method},{series},iqr,{}", q3 - q1);
        }
    }
    out
}

/// Counts questions whose top-ranked chunk is identical across both methods.
///
/// Only questions with a stream for each method participate. The second
/// element of the return value is that paired-question count.
pub fn first_rank_coincidences(streams: &[ReplayedStream]) -> (usize, usize) {
    let mut firsts: BTreeMap<String, (Option<String>, Option<String>)> = BTreeMap::new();
    for stream in streams {
        let first = stream.result.selected.first().map(|c| c.label.clone());
        let entry = firsts.entry(stream.question_id.clone()).or_default();
        match stream.method {
            Method::Multilayer => entry.0 = first,
            Method::Flat => entry.1 = first,
        }
    }
    let mut coincide = 0;
    let mut paired = 0;
    for (ml, flat) in firsts.values() {
        if let (Some(ml), Some(flat)) = (ml, flat) {
            paired += 1;
            if ml == flat {
                coincide += 1;
            }
        }
    }
    (coincide, paired)
}

/// Builds the full report payload from replayed streams and grades.
pub fn build_report(
    streams: &[ReplayedStream],
    annotations: &[RelevanceAnnotation],
) -> Result<EvalReport, EvalError> {
    let rows = comparison_rows(streams);
    let stop_reasons = streams
        .iter()
        .map(|s| (s.question_id.clone(), s.method, s.result.stop_reason))
        .collect();
    let proportions = relevance_proportions(streams, annotations)?;
    let (first_rank_coincidences, paired_questions) = self::first_rank_coincidences(streams);
    Ok(EvalReport {
        rows,
        stop_reasons,
        proportions,
        first_rank_coincidences,
        paired_questions,
    })
}

/// One benchmark query for [`compare_methods`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
}

/// Knobs for a live method comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Embedding provider for both corpus and queries. Defaults to the
    /// deterministic local embedder, so comparisons run fully offline.
    pub provider: crate::embed::ProviderConfig,
    /// Selection-walk parameters applied to each ranked stream.
    pub selection: SelectionParams,
    /// Candidates retrieved per query before selection.
    pub top_k: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            provider: crate::embed::ProviderConfig::default(),
            selection: SelectionParams::default(),
            top_k: 50,
        }
    }
}

/// Outcome of one query under both granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryComparison {
    pub query: EvalQuery,
    pub multilayer: ComparisonRow,
    pub flat: ComparisonRow,
    /// Whether both methods put the same chunk first.
    pub top_coincides: bool,
}

/// Corpus census plus per-query selections for both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub multilayer_chunks: usize,
    pub flat_chunks: usize,
    /// Multilayer chunk counts per layer, coarse to fine.
    pub per_layer: Vec<(String, usize)>,
    pub provider_fingerprint: String,
    pub queries: Vec<QueryComparison>,
}

/// Chunks, embeds, and indexes `corpus` under both granularities, then runs
/// every query through retrieval and selection on each.
///
/// The multilayer corpus always has at least as many chunks as the flat one
/// (flat chunks are the multilayer basic-unit subset). With an empty query
/// list the report still carries the corpus census. Everything runs
/// in-memory; nothing is persisted.
pub fn compare_methods(
    corpus: &[crate::parser::DocumentTree],
    queries: &[EvalQuery],
    cfg: &CompareConfig,
) -> Result<ComparisonReport, EvalError> {
    use crate::chunker::{Chunk, build_flat_chunks, build_multilayer_chunks};
    use crate::embed::EmbeddingService;
    use crate::index::{VectorIndex, VectorRecord};
    use crate::tokenizer::TokenizerSpec;

    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let tokenizer = TokenizerSpec::default();
    let service = EmbeddingService::new(cfg.provider.clone())?;

    let mut multilayer: Vec<Chunk> = Vec::new();
    let mut flat: Vec<Chunk> = Vec::new();
    for tree in corpus {
        multilayer.extend(build_multilayer_chunks(tree, &tokenizer)?);
        flat.extend(build_flat_chunks(tree, &tokenizer)?);
    }

    let mut per_layer_map: BTreeMap<crate::chunker::Layer, usize> = BTreeMap::new();
    for chunk in &multilayer {
        *per_layer_map.entry(chunk.layer).or_insert(0) += 1;
    }
    let per_layer: Vec<(String, usize)> = per_layer_map
        .into_iter()
        .map(|(layer, n)| (layer.as_str().to_string(), n))
        .collect();

    let build_index = |chunks: &[Chunk]| -> Result<VectorIndex, EvalError> {
        let mut index = VectorIndex::new(
            service.dims(),
            &tokenizer.name,
            &service.fingerprint(),
        );
        if chunks.is_empty() {
            // A corpus without basic units has an empty flat side; queries
            // against it fail with EmptyIndex, but the census still works.
            return Ok(index);
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.embed_text.clone()).collect();
        let vectors = service.embed_texts(&texts)?;
        index.add_records(
            chunks
                .iter()
                .zip(vectors)
                .map(|(c, v)| VectorRecord::from_chunk(c, v))
                .collect(),
        )?;
        Ok(index)
    };
    let ml_index = build_index(&multilayer)?;
    let flat_index = build_index(&flat)?;

    let mut comparisons = Vec::with_capacity(queries.len());
    for query in queries {
        let query_vector = service.embed_one(&query.text)?;
        let run = |index: &VectorIndex, method: Method| -> Result<ReplayedStream, EvalError> {
            let hits = index.search(&query_vector, cfg.top_k)?;
            let candidates: Vec<Candidate> = hits
                .into_iter()
                .map(|hit| Candidate {
                    label: hit.label,
                    similarity: hit.similarity,
                    token_count: hit.token_count,
                    span: hit.span,
                })
                .collect();
            let result = select_chunks(candidates, &cfg.selection)?;
            Ok(ReplayedStream {
                question_id: query.id.clone(),
                method,
                result,
            })
        };
        let ml_stream = run(&ml_index, Method::Multilayer)?;
        let flat_stream = run(&flat_index, Method::Flat)?;
        let top_coincides = match (
            ml_stream.result.selected.first(),
            flat_stream.result.selected.first(),
        ) {
            (Some(a), Some(b)) => a.label == b.label,
            _ => false,
        };
        let rows = comparison_rows(&[ml_stream, flat_stream]);
        let mut rows = rows.into_iter();
        comparisons.push(QueryComparison {
            query: query.clone(),
            multilayer: rows.next().expect("two rows"),
            flat: rows.next().expect("two rows"),
            top_coincides,
        });
    }

    Ok(ComparisonReport {
        multilayer_chunks: multilayer.len(),
        flat_chunks: flat.len(),
        per_layer,
        provider_fingerprint: service.fingerprint(),
        queries: comparisons,
    })
}

impl ComparisonReport {
    /// Renders the comparison as Markdown. Byte-deterministic.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Method comparison\n");
        let _ = writeln!(out, "Embedding provider: `{}`\n", self.provider_fingerprint);

        let _ = writeln!(out, "## Corpus\n");
        let _ = writeln!(out, "| Corpus | Chunks |");
        let _ = writeln!(out, "|---|---|");
        let _ = writeln!(out, "| multilayer | {} |", self.multilayer_chunks);
        let _ = writeln!(out, "| flat | {} |", self.flat_chunks);
        let _ = writeln!(out, "\n### Multilayer chunks per layer\n");
        let _ = writeln!(out, "| Layer | Chunks |");
        let _ = writeln!(out, "|---|---|");
        for (layer, n) in &self.per_layer {
            let _ = writeln!(out, "| {layer} | {n} |");
        }

        if !self.queries.is_empty() {
            let _ = writeln!(out, "\n## Queries\n");
            let _ = writeln!(
                out,
                "| Query | ML chunks | ML tokens | Flat chunks | Flat tokens | Same top chunk |"
            );
            let _ = writeln!(out, "|---|---|---|---|---|---|");
            for q in &self.queries {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    q.query.id,
                    q.multilayer.chunk_count,
                    q.multilayer.total_tokens,
                    q.flat.chunk_count,
                    q.flat.total_tokens,
                    if q.top_coincides { "yes" } else { "no" }
                );
            }
            let coincide = self.queries.iter().filter(|q| q.top_coincides).count();
            let _ = writeln!(
                out,
                "\nThe top-ranked chunk coincides across methods in {} of {} \
                 queries (recomputed from these runs).",
                coincide,
                self.queries.len()
            );
        }
        out
    }

    /// Renders per-query rows as CSV, one line per (query, method).
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "question_id,method,chunk_count,total_tokens,max_similarity,min_similarity\n",
        );
        for q in &self.queries {
            for row in [&q.multilayer, &q.flat] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    row.question_id,
                    row.method,
                    row.chunk_count,
                    row.total_tokens,
                    row.max_similarity,
                    row.min_similarity
                );
            }
        }
        out
    }
}

/// Human-readable form of a stop reason, as used in reports.
pub fn stop_reason_str(reason: StopReason) -> &'static str {
    match reason {
        StopReason::BudgetExceeded => "budget exceeded",
        StopReason::DeviationFloor => "deviation floor",
        StopReason::Exhausted => "exhausted",
    }
}

impl EvalReport {
    /// Renders the report as Markdown. Byte-deterministic for fixed inputs.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Retrieval replay report\n");

        let _ = writeln!(out, "## Per-question selection\n");
        let _ = writeln!(
            out,
            "| Question | Method | Chunks | Tokens | Max sim | Min sim | Stop reason |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        for (row, (q, m, reason)) in self.rows.iter().zip(&self.stop_reasons) {
            debug_assert_eq!((&row.question_id, row.method), (q, *m));
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.6} | {:.6} | {} |",
                row.question_id,
                row.method,
                row.chunk_count,
                row.total_tokens,
                row.max_similarity,
                row.min_similarity,
                stop_reason_str(*reason)
            );
        }

        let _ = writeln!(out, "\n## Relevance grades\n");
        let _ = writeln!(
            out,
            "| Method | Essential | Complementary | Unnecessary | Graded chunks |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|");
        for p in &self.proportions {
            let cell = |g: Grade| format!("{} ({:.2}%)", p.count(g), p.percent(g));
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                p.method,
                cell(Grade::Essential),
                cell(Grade::Complementary),
                cell(Grade::Unnecessary),
                p.total()
            );
        }

        let _ = writeln!(out, "\n## First-ranked chunk agreement\n");
        let _ = writeln!(
            out,
            "The top-ranked chunk coincides across methods in {} of {} paired \
             questions (recomputed from the replayed streams).",
            self.first_rank_coincidences, self.paired_questions
        );
        out
    }

    /// Renders the per-stream summary table as CSV.
    pub fn rows_csv(&self) -> String {
        comparison_rows_csv(&self.rows)
    }
}

/// Renders per-stream comparison rows as CSV, one line per stream.
pub fn comparison_rows_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "question_id,method,chunk_count,total_tokens,max_similarity,min_similarity\n",
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.question_id,
            row.method,
            row.chunk_count,
            row.total_tokens,
            row.max_similarity,
            row.min_similarity
        );
    }
    out
}
