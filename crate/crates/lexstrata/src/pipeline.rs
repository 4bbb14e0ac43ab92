//! End-to-end retrieval pipeline: corpus → index → answer bundle.
//!
//! `index_corpus` parses statute files, chunks every structural layer,
//! embeds the chunk texts, and persists a searchable index — atomically, so
//! a failed build never leaves a half-written index behind. `answer` embeds
//! a question, retrieves across all layers at once, runs the selection walk,
//! and assembles a deterministic prompt (optionally also calling a chat
//! endpoint for the generated answer).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{Chunk, ChunkError, build_multilayer_chunks, read_chunks_jsonl,
    write_chunks_jsonl};
use crate::embed::{EmbedError, EmbeddingService, ProviderConfig};
use crate::index::{IndexError, SearchHit, VectorIndex, VectorRecord};
use crate::parser::{ParseError, StructureProfile, parse_document};
use crate::selector::{Candidate, SelectError, SelectionParams, SelectionResult, select_chunks};
use crate::tokenizer::{DEFAULT_TOKENIZER, TokenizerSpec};

/// File holding the indexed chunks (labels and texts) inside an index
/// directory, next to the vector files.
pub const CHUNKS_FILE: &str = "chunks.jsonl";

/// Instruction line that opens every assembled prompt.
pub const PROMPT_HEADER: &str = "Answer the question using only the excerpts below.";

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// `index_corpus` was given no files.
    #[error("empty corpus: no documents to index")]
    EmptyCorpus,
    /// A prompt was requested over zero selected chunks.
    #[error("empty selection: no chunks to assemble a prompt from")]
    EmptySelection,
    /// The index was built by a different embedding provider.
    #[error("provider fingerprint mismatch: index has `{index}`, service has `{service}`")]
    FingerprintMismatch { index: String, service: String },
    /// The configuration is unusable.
    #[error("bad pipeline config: {0}")]
    Config(String),
    /// The index directory's files disagree with each other.
    #[error("inconsistent index: {0}")]
    InconsistentIndex(String),
    /// The generation endpoint failed or answered garbage.
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("pipeline io: {0}")]
    Io(#[from] std::io::Error),
    #[error("pipeline config parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// Chat-completion settings for the optional generation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
    /// Chat-completions endpoint. Generation is refused without one.
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: "gpt-4".to_string(),
            max_output_tokens: 1000,
            temperature: 0.3,
            endpoint: None,
            api_key_env: None,
        }
    }
}

/// Everything the pipeline needs, loadable from JSON or `key=value` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Structure profile used for parsing (`br-lc95`).
    pub profile: String,
    /// Abort on misplaced markers instead of extending the innermost node.
    pub strict: bool,
    /// Token counting rule name; must match the rule this build supports.
    pub tokenizer: String,
    pub provider: ProviderConfig,
    /// Directory the index is written to and read from.
    pub index_dir: PathBuf,
    pub selection: SelectionParams,
    /// Candidates retrieved per query before the selection walk.
    pub top_k: usize,
    pub generation: GenerationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            profile: "br-lc95".to_string(),
            strict: false,
            tokenizer: DEFAULT_TOKENIZER.to_string(),
            provider: ProviderConfig::default(),
            index_dir: PathBuf::from("index"),
            selection: SelectionParams::default(),
            top_k: 50,
            generation: GenerationConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Loads a config file: JSON when the first non-blank byte is `{`,
    /// otherwise dotted `key=value` lines over the defaults (for example
    /// `provider.dims=512` or `selection.token_budget=2000`; `#` starts a
    /// comment).
    pub fn from_file(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path)?;
        Self::from_str_auto(&text)
    }

    /// Same as [`PipelineConfig::from_file`] but from an in-memory string.
    pub fn from_str_auto(text: &str) -> Result<PipelineConfig, PipelineError> {
        let config = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            Self::from_key_values(text)?
        };
        config.validate()?;
        Ok(config)
    }

    fn from_key_values(text: &str) -> Result<PipelineConfig, PipelineError> {
        let mut root = serde_json::to_value(PipelineConfig::default())?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(PipelineError::Config(format!(
                    "line {}: empty key",
                    lineno + 1
                )));
            }
            let parsed = parse_scalar(value.trim());
            set_dotted(&mut root, key, parsed).map_err(|e| {
                PipelineError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(serde_json::from_value(root)?)
    }

    /// Cross-field checks beyond what each component validates itself.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.tokenizer != DEFAULT_TOKENIZER {
            return Err(PipelineError::Config(format!(
                "unknown tokenizer `{}` (this build supports `{DEFAULT_TOKENIZER}`)",
                self.tokenizer
            )));
        }
        if self.top_k == 0 {
            return Err(PipelineError::Config("top_k must be at least 1".to_string()));
        }
        self.provider.validate()?;
        self.selection.validate()?;
        // The profile name is resolved eagerly so typos fail here, not at
        // first parse.
        self.structure_profile()?;
        Ok(())
    }

    /// The parser profile this config names.
    pub fn structure_profile(&self) -> Result<StructureProfile, ParseError> {
        let strictness = if self.strict {
            crate::parser::Strictness::Strict
        } else {
            crate::parser::Strictness::Lenient
        };
        StructureProfile::from_name(&self.profile, strictness)
    }
}

/// Writes a scalar into `root` at a dotted path, e.g. `provider.dims`.
fn set_dotted(
    root: &mut serde_json::Value,
    key: &str,
    value: serde_json::Value,
) -> Result<(), String> {
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let object = cursor
            .as_object_mut()
            .ok_or_else(|| format!("`{}` is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            object.insert((*part).to_string(), value);
            return Ok(());
        }
        cursor = object
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err("empty key".to_string())
}

/// `true`/`false`, integer, float, quoted or bare string — in that order.
fn parse_scalar(raw: &str) -> serde_json::Value {
    match raw {
        "true" => return serde_json::Value::Bool(true),
        "false" => return serde_json::Value::Bool(false),
        "null" => return serde_json::Value::Null,
        _ => {}
    }
    if let Ok(n) = raw.parse::<u64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(n) = raw.parse::<i64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(f) = raw.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return serde_json::Value::Number(n);
        }
    }
    let unquoted = raw
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(raw);
    serde_json::Value::String(unquoted.to_string())
}

/// Token-count histogram buckets, fixed so reports are comparable.
const HISTOGRAM_BUCKETS: [(usize, usize, &str); 8] = [
    (0, 10, "0-10"),
    (11, 25, "11-25"),
    (26, 50, "26-50"),
    (51, 100, "51-100"),
    (101, 250, "101-250"),
    (251, 500, "251-500"),
    (501, 1000, "501-1000"),
    (1001, usize::MAX, ">1000"),
];

/// What `index_corpus` built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub documents: usize,
    pub chunks: usize,
    /// Chunk counts per layer, coarse to fine.
    pub per_layer: Vec<(String, usize)>,
    /// Chunk counts per token-count bucket, ascending.
    pub token_histogram: Vec<(String, usize)>,
    pub index_dir: PathBuf,
    pub provider_fingerprint: String,
}

/// Parses, chunks, embeds, and indexes `files` into `config.index_dir`.
///
/// Document ids are the file stems. The index is staged in a sibling
/// directory and swapped in only after every file is written, so failures
/// leave any existing index untouched. Alongside the vector files the
/// directory receives `chunks.jsonl` with the indexed chunks, which `answer`
/// uses to reconstruct prompt texts.
pub fn index_corpus(
    config: &PipelineConfig,
    files: &[PathBuf],
) -> Result<BuildReport, PipelineError> {
    if files.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    config.validate()?;
    let profile = config.structure_profile()?;
    let tokenizer = TokenizerSpec {
        name: config.tokenizer.clone(),
    };
    let service = EmbeddingService::new(config.provider.clone())?;

    let mut chunks: Vec<Chunk> = Vec::new();
    for file in files {
        let text = fs::read_to_string(file)?;
        let doc_id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                PipelineError::Config(format!("cannot derive a document id from {file:?}"))
            })?;
        let tree = parse_document(&text, &profile, &doc_id)?;
        chunks.extend(build_multilayer_chunks(&tree, &tokenizer)?);
    }

    let texts: Vec<String> = chunks.iter().map(|c| c.embed_text.clone()).collect();
    let vectors = service.embed_texts(&texts)?;
    let mut index = VectorIndex::new(service.dims(), &tokenizer.name, &service.fingerprint());
    index.add_records(
        chunks
            .iter()
            .zip(vectors)
            .map(|(c, v)| VectorRecord::from_chunk(c, v))
            .collect(),
    )?;

    // Stage next to the final location (same filesystem), then swap.
    let staging = staging_dir(&config.index_dir)?;
    let built = (|| -> Result<(), PipelineError> {
        index.save(&staging)?;
        let file = fs::File::create(staging.join(CHUNKS_FILE))?;
        write_chunks_jsonl(&chunks, std::io::BufWriter::new(file))?;
        Ok(())
    })();
    if let Err(e) = built {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if config.index_dir.exists() {
        fs::remove_dir_all(&config.index_dir)?;
    }
    fs::rename(&staging, &config.index_dir)?;

    let mut per_layer: BTreeMap<crate::chunker::Layer, usize> = BTreeMap::new();
    for chunk in &chunks {
        *per_layer.entry(chunk.layer).or_insert(0) += 1;
    }
    let mut token_histogram: Vec<(String, usize)> = HISTOGRAM_BUCKETS
        .iter()
        .map(|(_, _, name)| ((*name).to_string(), 0))
        .collect();
    for chunk in &chunks {
        let slot = HISTOGRAM_BUCKETS
            .iter()
            .position(|(lo, hi, _)| (*lo..=*hi).contains(&chunk.token_count))
            .expect("buckets cover all counts");
        token_histogram[slot].1 += 1;
    }

    Ok(BuildReport {
        documents: files.len(),
        chunks: chunks.len(),
        per_layer: per_layer
            .into_iter()
            .map(|(layer, n)| (layer.as_str().to_string(), n))
            .collect(),
        token_histogram,
        index_dir: config.index_dir.clone(),
        provider_fingerprint: service.fingerprint(),
    })
}

fn staging_dir(final_dir: &Path) -> Result<PathBuf, PipelineError> {
    let name = final_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| PipelineError::Config(format!("bad index dir {final_dir:?}")))?;
    let staging = final_dir.with_file_name(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    Ok(staging)
}

/// Result of answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBundle {
    pub query: String,
    /// Provider identity the query vector was produced with; always equal
    /// to the index's fingerprint (enforced before searching).
    pub query_vector_fingerprint: String,
    pub selection: SelectionResult,
    pub prompt: String,
    /// Present only when generation was requested.
    pub answer: Option<String>,
}

/// Loads the configured index and embedding service together, refusing
/// mismatched pairs.
///
/// The index must have been built by the same provider fingerprint and
/// tokenizer the config describes; mismatches are refused rather than
/// silently returning garbage similarities.
pub fn open_index(
    config: &PipelineConfig,
) -> Result<(VectorIndex, EmbeddingService), PipelineError> {
    config.validate()?;
    let index = VectorIndex::load(&config.index_dir)?;
    let service = EmbeddingService::new(config.provider.clone())?;
    let manifest = index.manifest();
    if manifest.provider_fingerprint != service.fingerprint() {
        return Err(PipelineError::FingerprintMismatch {
            index: manifest.provider_fingerprint,
            service: service.fingerprint(),
        });
    }
    if manifest.tokenizer != config.tokenizer {
        return Err(PipelineError::Config(format!(
            "index counts tokens with `{}`, config says `{}`",
            manifest.tokenizer, config.tokenizer
        )));
    }
    Ok((index, service))
}

/// Embeds `query`, retrieves across every layer of the index, runs the
/// selection walk, and assembles the prompt. With `generate` the prompt is
/// also sent to the configured chat endpoint.
pub fn answer(
    config: &PipelineConfig,
    query: &str,
    generate: bool,
) -> Result<AnswerBundle, PipelineError> {
    let (index, service) = open_index(config)?;
    let query_vector = service.embed_one(query)?;
    let hits = index.search(&query_vector, config.top_k)?;
    let candidates: Vec<Candidate> = hits.iter().map(candidate_from_hit).collect();
    let selection = select_chunks(candidates, &config.selection)?;

    let texts = chunk_texts(&config.index_dir)?;
    let blocks: Vec<(String, String)> = selection
        .selected
        .iter()
        .map(|c| {
            let text = texts.get(&c.label).cloned().ok_or_else(|| {
                PipelineError::InconsistentIndex(format!(
                    "chunk `{}` is indexed but missing from {CHUNKS_FILE}",
                    c.label
                ))
            })?;
            Ok((c.label.clone(), text))
        })
        .collect::<Result<_, PipelineError>>()?;
    let prompt = assemble_prompt(&blocks, query)?;

    let answer = if generate {
        Some(generate_answer(&config.generation, &prompt)?)
    } else {
        None
    };

    Ok(AnswerBundle {
        query: query.to_string(),
        query_vector_fingerprint: service.fingerprint(),
        selection,
        prompt,
        answer,
    })
}

fn candidate_from_hit(hit: &SearchHit) -> Candidate {
    Candidate {
        label: hit.label.clone(),
        similarity: hit.similarity,
        token_count: hit.token_count,
        span: hit.span.clone(),
    }
}

/// Label → embedding text of every indexed chunk.
fn chunk_texts(index_dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let file = fs::File::open(index_dir.join(CHUNKS_FILE))?;
    let chunks = read_chunks_jsonl(std::io::BufReader::new(file))?;
    Ok(chunks
        .into_iter()
        .map(|c| (c.label, c.embed_text))
        .collect())
}

/// Assembles the deterministic generation prompt.
///
/// Layout: the instruction header, one `label\ntext` block per selected
/// chunk (selection order), and the question — all separated by blank
/// lines. Blocks carry the same text that was embedded, so the prompt's
/// token count is at least the selection's cumulative token count.
pub fn assemble_prompt(
    blocks: &[(String, String)],
    question: &str,
) -> Result<String, PipelineError> {
    if blocks.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    let mut prompt = String::from(PROMPT_HEADER);
    for (label, text) in blocks {
        prompt.push_str("\n\n");
        prompt.push_str(label);
        prompt.push('\n');
        prompt.push_str(text);
    }
    prompt.push_str("\n\nQuestion: ");
    prompt.push_str(question);
    prompt.push('\n');
    Ok(prompt)
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Sends `prompt` to the configured chat endpoint and returns the answer.
pub fn generate_answer(config: &GenerationConfig, prompt: &str) -> Result<String, PipelineError> {
    let endpoint = config.endpoint.as_deref().ok_or_else(|| {
        PipelineError::Config("generation requires an endpoint".to_string())
    })?;
    let key_env = config.api_key_env.as_deref().ok_or_else(|| {
        PipelineError::Config("generation requires api_key_env naming the key variable".to_string())
    })?;
    let api_key = std::env::var(key_env)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| PipelineError::Embed(EmbedError::MissingApiKey(key_env.to_string())))?;

    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(120))
        .no_proxy()
        .build()
        .map_err(|e| PipelineError::Generation(e.to_string()))?;
    let body = ChatRequest {
        model: &config.model,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
        max_tokens: config.max_output_tokens,
        temperature: config.temperature,
    };
    let response = client
        .post(endpoint)
        .bearer_auth(&api_key)
        .json(&body)
        .send()
        .map_err(|e| PipelineError::Generation(e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        let text = response.text().unwrap_or_default();
        let snippet: String = text.chars().take(200).collect();
        return Err(PipelineError::Generation(format!("status {status}: {snippet}")));
    }
    let parsed: ChatResponse = response
        .json()
        .map_err(|e| PipelineError::Generation(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| PipelineError::Generation("response carried no choices".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::Layer;

    fn fixture(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    fn test_config(index_dir: PathBuf) -> PipelineConfig {
        PipelineConfig {
            index_dir,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_loads_from_json_and_key_values() {
        let json = r#"{
            "profile": "br-lc95",
            "provider": {"dims": 64},
            "selection": {"token_budget": 1200, "deviation": 0.2, "min_segments": 3},
            "index_dir": "out/idx",
            "top_k": 10
        }"#;
        let from_json = PipelineConfig::from_str_auto(json).unwrap();
        assert_eq!(from_json.provider.dims, 64);
        assert_eq!(from_json.selection.token_budget, 1200);
        assert_eq!(from_json.index_dir, PathBuf::from("out/idx"));
        assert_eq!(from_json.top_k, 10);
        // Unset fields keep their defaults.
        assert_eq!(from_json.tokenizer, DEFAULT_TOKENIZER);
        assert_eq!(from_json.generation.max_output_tokens, 1000);
        assert!((from_json.generation.temperature - 0.3).abs() < 1e-12);

        let kv = "\
            # comment\n\
            provider.dims=64\n\
            selection.token_budget=1200\n\
            selection.deviation=0.2\n\
            selection.min_segments=3\n\
            index_dir=out/idx\n\
            top_k=10\n";
        let from_kv = PipelineConfig::from_str_auto(kv).unwrap();
        assert_eq!(from_kv, from_json);
    }

    #[test]
    fn config_rejects_nonsense() {
        assert!(matches!(
            PipelineConfig::from_str_auto("top_k=0"),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_str_auto("tokenizer=bpe-paid"),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_str_auto("profile=unknown-profile"),
            Err(PipelineError::Parse(ParseError::UnknownProfile(_)))
        ));
        assert!(matches!(
            PipelineConfig::from_str_auto("just a line without equals"),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_str_auto("provider.dims=3"),
            Err(PipelineError::Embed(EmbedError::InvalidDims(_)))
        ));
    }

    #[test]
    fn index_corpus_builds_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path().join("index"));
        let report = index_corpus(&config, &[fixture("title1.txt")]).unwrap();

        assert_eq!(report.documents, 1);
        assert_eq!(report.chunks, 32);
        assert_eq!(
            report.per_layer,
            vec![
                ("document".to_string(), 1),
                ("document_component".to_string(), 1),
                ("basic_unit_hierarchy".to_string(), 1),
                ("basic_unit".to_string(), 4),
                ("basic_unit_component".to_string(), 6),
                ("enumeration".to_string(), 19),
            ]
        );
        let histogram_total: usize = report.token_histogram.iter().map(|(_, n)| n).sum();
        assert_eq!(histogram_total, 32);
        assert_eq!(report.token_histogram.len(), 8);
        assert_eq!(report.provider_fingerprint, "deterministic-local:feature-hash-v1:256");

        // All four files are in place and the index loads.
        for file in ["manifest.json", "meta.jsonl", "vectors.f32", CHUNKS_FILE] {
            assert!(config.index_dir.join(file).exists(), "{file} missing");
        }
        let index = VectorIndex::load(&config.index_dir).unwrap();
        assert_eq!(index.len(), 32);
        assert_eq!(index.manifest().doc_ids, vec!["title1"]);

        // Rebuilding over an existing index replaces it cleanly.
        let report2 = index_corpus(&config, &[fixture("title1.txt")]).unwrap();
        assert_eq!(report2.chunks, 32);
        assert_eq!(VectorIndex::load(&config.index_dir).unwrap().len(), 32);
    }

    #[test]
    fn index_corpus_requires_files_and_preserves_the_old_index_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path().join("index"));
        assert!(matches!(
            index_corpus(&config, &[]),
            Err(PipelineError::EmptyCorpus)
        ));

        index_corpus(&config, &[fixture("title1.txt")]).unwrap();
        let before = fs::read(config.index_dir.join("vectors.f32")).unwrap();

        // A missing file fails the build; the existing index must survive.
        let err = index_corpus(
            &config,
            &[fixture("title1.txt"), dir.path().join("nope.txt")],
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Io(_)));
        let after = fs::read(config.index_dir.join("vectors.f32")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn answer_retrieves_the_article_its_query_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path().join("index"));
        index_corpus(&config, &[fixture("title1.txt")]).unwrap();

        // The query is the verbatim text of one basic unit; retrieval must
        // put that unit's own chunk family first.
        let query = "São Poderes da União, independentes e harmônicos entre si, \
                     o Legislativo, o Executivo e o Judiciário.";
        let bundle = answer(&config, query, false).unwrap();

        assert!(!bundle.selection.selected.is_empty());
        let top = &bundle.selection.selected[0];
        assert!(
            top.label.starts_with("title1, Art. 2º"),
            "expected the quoted article's family on top, got `{}`",
            top.label
        );
        assert_eq!(
            bundle.query_vector_fingerprint,
            "deterministic-local:feature-hash-v1:256"
        );
        assert!(bundle.answer.is_none());

        // The prompt is deterministic, carries the header, every selected
        // label, and the question, and outweighs the selection in tokens.
        let again = answer(&config, query, false).unwrap();
        assert_eq!(bundle.prompt, again.prompt);
        assert!(bundle.prompt.starts_with(PROMPT_HEADER));
        assert!(bundle.prompt.ends_with(&format!("Question: {query}\n")));
        for candidate in &bundle.selection.selected {
            assert!(bundle.prompt.contains(&candidate.label));
        }
        let tokenizer = TokenizerSpec::default();
        assert!(tokenizer.count(&bundle.prompt) >= bundle.selection.cumulative_tokens);
    }

    #[test]
    fn answer_enforces_matching_fingerprints() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path().join("index"));
        index_corpus(&config, &[fixture("title1.txt")]).unwrap();

        let mut other = config.clone();
        other.provider.dims = 128;
        let err = answer(&other, "qualquer pergunta", false).unwrap_err();
        assert!(matches!(err, PipelineError::FingerprintMismatch { .. }), "{err}");

        let mut other = config.clone();
        other.provider.model = "feature-hash-v2".to_string();
        assert!(matches!(
            answer(&other, "qualquer pergunta", false),
            Err(PipelineError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn prompts_require_a_selection() {
        assert!(matches!(
            assemble_prompt(&[], "pergunta"),
            Err(PipelineError::EmptySelection)
        ));
        let blocks = vec![("Rótulo".to_string(), "Texto do trecho.".to_string())];
        let prompt = assemble_prompt(&blocks, "Qual?").unwrap();
        assert_eq!(
            prompt,
            format!("{PROMPT_HEADER}\n\nRótulo\nTexto do trecho.\n\nQuestion: Qual?\n")
        );
    }

    #[test]
    fn generation_calls_the_chat_endpoint() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let mut request = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap_or(0);
                if n == 0 {
                    break;
                }
                request.extend_from_slice(&buf[..n]);
                if request.windows(4).any(|w| w == b"\r\n\r\n") {
                    let text = String::from_utf8_lossy(&request);
                    let len: usize = text
                        .lines()
                        .find_map(|l| {
                            let (k, v) = l.split_once(':')?;
                            k.eq_ignore_ascii_case("content-length")
                                .then(|| v.trim().parse().ok())?
                        })
                        .unwrap_or(0);
                    let header_end =
                        request.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
                    while request.len() < header_end + len {
                        let n = stream.read(&mut buf).unwrap_or(0);
                        if n == 0 {
                            break;
                        }
                        request.extend_from_slice(&buf[..n]);
                    }
                    break;
                }
            }
            let body = r#"{"choices":[{"message":{"content":"Os Poderes são três."}}]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8_lossy(&request).to_string()
        });

        std::env::set_var("LEXSTRATA_TEST_CHAT_KEY", "sk-chat");
        let config = GenerationConfig {
            endpoint: Some(endpoint),
            api_key_env: Some("LEXSTRATA_TEST_CHAT_KEY".to_string()),
            ..GenerationConfig::default()
        };
        let answer = generate_answer(&config, "Quais são os Poderes da União?").unwrap();
        assert_eq!(answer, "Os Poderes são três.");

        let request = handle.join().unwrap();
        let lower = request.to_ascii_lowercase();
        assert!(lower.contains("authorization: bearer sk-chat"));
        assert!(request.contains("\"model\":\"gpt-4\""));
        assert!(request.contains("\"max_tokens\":1000"));
        assert!(request.contains("\"temperature\":0.3"));
        assert!(request.contains("\"role\":\"user\""));
        assert!(request.contains("Poderes da União"));
    }

    #[test]
    fn generation_without_an_endpoint_or_key_is_refused() {
        let config = GenerationConfig::default();
        assert!(matches!(
            generate_answer(&config, "p"),
            Err(PipelineError::Config(_))
        ));
        let config = GenerationConfig {
            endpoint: Some("http://127.0.0.1:1/v1".to_string()),
            api_key_env: Some("LEXSTRATA_TEST_CHAT_KEY_NEVER_SET".to_string()),
            ..GenerationConfig::default()
        };
        assert!(matches!(
            generate_answer(&config, "p"),
            Err(PipelineError::Embed(EmbedError::MissingApiKey(_)))
        ));
    }

    #[test]
    fn layers_cover_search_hits() {
        // An indexed Title I corpus answers queries with hits from several
        // layers, not only articles.
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path().join("index"));
        index_corpus(&config, &[fixture("title1.txt")]).unwrap();
        let index = VectorIndex::load(&config.index_dir).unwrap();
        let service = EmbeddingService::new(config.provider.clone()).unwrap();
        let qv = service.embed_one("fundamentos da república").unwrap();
        let hits = index.search(&qv, 32).unwrap();
        let layers: std::collections::BTreeSet<Layer> = hits.iter().map(|h| h.layer).collect();
        assert!(layers.len() >= 3, "expected several layers, got {layers:?}");
    }
}
