//! Context selection over a similarity-ranked candidate stream.
//!
//! Candidates arrive sorted by descending similarity. Selection walks the
//! stream once and admits candidates under three rules: a candidate whose
//! span is already covered by an individually selected candidate is skipped
//! (containment dedup); a minimum number of segments is always admitted
//! regardless of thresholds; after that minimum, the walk stops as soon as
//! the admitted token total has exceeded the budget or the next candidate's
//! similarity falls below a fixed fraction of the top similarity — whichever
//! comes first. The chunk that crosses the budget is itself admitted: both
//! thresholds are tested when considering the *next* admission.

pub mod labels;

pub use labels::{HierarchyTable, spans_from_labels};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from selection and label handling.
#[derive(Debug, Error)]
pub enum SelectError {
    /// The candidate stream yielded nothing.
    #[error("candidate stream is empty")]
    EmptyCandidateStream,
    /// Similarities increased (or were not comparable) along the stream.
    #[error("candidate stream is not sorted by descending similarity at position {position}")]
    UnsortedStream { position: usize },
    /// Parameters outside their documented ranges.
    #[error("invalid selection parameters: {0}")]
    InvalidParams(String),
    /// A label did not follow the canonical grammar.
    #[error("malformed label {0:?}")]
    MalformedLabel(String),
    /// The grouping/article hierarchy table could not be read.
    #[error("bad hierarchy table: {0}")]
    BadHierarchyTable(String),
}

/// A byte span qualified by its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

impl DocSpan {
    pub fn new(doc_id: impl Into<String>, start: usize, end: usize) -> DocSpan {
        DocSpan { doc_id: doc_id.into(), start, end }
    }
}

/// True iff both spans are in the same document and `outer` covers `inner`.
/// A span contains itself; a part never contains its whole.
pub fn span_contains(outer: &DocSpan, inner: &DocSpan) -> bool {
    outer.doc_id == inner.doc_id && outer.start <= inner.start && inner.end <= outer.end
}

/// One ranked retrieval result offered to the selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub similarity: f64,
    pub token_count: usize,
    pub span: DocSpan,
}

/// Tuning knobs of the selection walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Token total after which no further admissions happen (strictly
    /// greater-than; the crossing chunk is kept).
    pub token_budget: usize,
    /// Fractional similarity drop tolerated relative to the top candidate:
    /// the floor is `(1 - deviation) * max_similarity`.
    pub deviation: f64,
    /// Admissions guaranteed before either threshold applies.
    pub min_segments: usize,
    /// Optional hard cap on how much of the stream is considered.
    pub max_candidates: Option<usize>,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams { token_budget: 2500, deviation: 0.25, min_segments: 7, max_candidates: None }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectError> {
        if self.token_budget == 0 {
            return Err(SelectError::InvalidParams("token_budget must be positive".into()));
        }
        if !(self.deviation > 0.0 && self.deviation < 1.0) {
            return Err(SelectError::InvalidParams(format!(
                "deviation must be in (0, 1), got {}",
                self.deviation
            )));
        }
        if self.min_segments == 0 {
            return Err(SelectError::InvalidParams("min_segments must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why the walk ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Admitted tokens had exceeded the budget when the next candidate was
    /// considered.
    BudgetExceeded,
    /// The next candidate's similarity fell below the deviation floor.
    DeviationFloor,
    /// The stream (or the `max_candidates` cap) ran out first.
    Exhausted,
}

/// Outcome of one selection walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Admitted candidates, in stream order.
    pub selected: Vec<Candidate>,
    /// Sum of the admitted candidates' token counts.
    pub cumulative_tokens: usize,
    /// Similarity of the stream's first candidate.
    pub max_similarity: f64,
    pub stop_reason: StopReason,
}

/// Run the selection walk over a descending-similarity candidate stream.
///
/// The stream is consumed at most once and never reordered. Containment
/// dedup is active from the first candidate on (also while filling the first
/// `min_segments`), and tests against each individually selected span — not
/// their union — so a whole is still admitted after its parts.
pub fn select_chunks(
    candidates: impl IntoIterator<Item = Candidate>,
    params: &SelectionParams,
) -> Result<SelectionResult, SelectError> {
    params.validate()?;
    let cap = params.max_candidates.unwrap_or(usize::MAX);

    let mut selected: Vec<Candidate> = Vec::new();
    let mut cumulative = 0usize;
    let mut max_similarity = f64::NAN;
    let mut floor = f64::NAN;
    let mut prev = f64::INFINITY;
    let mut position = 0usize;
    let mut stop_reason = StopReason::Exhausted;

    for candidate in candidates.into_iter().take(cap) {
        position += 1;
        // NaN yields no ordering, so unordered values are rejected alongside
        // genuinely ascending ones.
        let ordered = matches!(
            candidate.similarity.partial_cmp(&prev),
            Some(std::cmp::Ordering::Less | std::cmp::Ordering::Equal)
        );
        if !ordered {
            return Err(SelectError::UnsortedStream { position });
        }
        prev = candidate.similarity;
        if position == 1 {
            max_similarity = candidate.similarity;
            floor = (1.0 - params.deviation) * max_similarity;
        }

        if selected.iter().any(|s| span_contains(&s.span, &candidate.span)) {
            continue;
        }
        if selected.len() >= params.min_segments {
            if cumulative > params.token_budget {
                stop_reason = StopReason::BudgetExceeded;
                break;
            }
            if candidate.similarity < floor {
                stop_reason = StopReason::DeviationFloor;
                break;
            }
        }
        cumulative += candidate.token_count;
        selected.push(candidate);
    }

    if position == 0 {
        return Err(SelectError::EmptyCandidateStream);
    }
    Ok(SelectionResult { selected, cumulative_tokens: cumulative, max_similarity, stop_reason })
}
