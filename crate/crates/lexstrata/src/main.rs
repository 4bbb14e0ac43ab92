//! Command-line front end: parse, chunk, index, query, ask, replay,
//! compare, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};

use lexstrata::chunker::{Chunk, Layer, build_flat_chunks, build_multilayer_chunks,
    write_chunks_jsonl};
use lexstrata::embed::ProviderKind;
use lexstrata::eval::{self, CompareConfig, EvalQuery};
use lexstrata::parser::{DocumentTree, NodeKind, StructureProfile, Strictness, parse_document};
use lexstrata::pipeline::{self, PipelineConfig};
use lexstrata::selector::HierarchyTable;
use lexstrata::tokenizer::TokenizerSpec;

#[derive(Parser)]
#[command(
    name = "lexstrata",
    version,
    about = "Multi-layer retrieval over hierarchically structured legislative text"
)]
struct Cli {
    /// Pipeline configuration file (JSON, or `key=value` lines such as
    /// `provider.dims=512`). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a statute file and print its structural outline.
    Parse {
        /// Plain-text statute, one provision per line.
        file: PathBuf,
        /// Structure profile name.
        #[arg(long, default_value = "br-lc95")]
        profile: String,
        /// Abort on misplaced markers instead of absorbing them.
        #[arg(long)]
        strict: bool,
        /// Emit the node list as JSON instead of an outline.
        #[arg(long)]
        json: bool,
    },
    /// Chunk a statute file and write the chunks as JSONL.
    Chunk {
        /// Plain-text statute, one provision per line.
        file: PathBuf,
        /// Emit only whole basic units instead of all six layers.
        #[arg(long)]
        flat: bool,
        /// Structure profile name.
        #[arg(long, default_value = "br-lc95")]
        profile: String,
        /// Abort on misplaced markers instead of absorbing them.
        #[arg(long)]
        strict: bool,
        /// Output file; stdout when omitted (census is then suppressed).
        #[arg(short, long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Parse, chunk, embed, and index a corpus of statute files.
    Index {
        /// Statute files; each file becomes one document (id = file stem).
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        /// Index directory (overrides the configured one).
        #[arg(short, long, value_name = "DIR")]
        output: Option<PathBuf>,
        /// Embedding provider (overrides the configured one).
        #[arg(long, value_name = "local|remote")]
        provider: Option<ProviderKind>,
        /// Embedding width (overrides the configured one).
        #[arg(long)]
        dims: Option<usize>,
        /// Print the build report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Retrieve the closest chunks for a query, without selection.
    Query {
        /// Index directory (the configured one when omitted).
        index_dir: Option<PathBuf>,
        /// Query text.
        #[arg(long)]
        text: String,
        /// Number of hits to return.
        #[arg(short = 'k', long, default_value_t = 10)]
        top_k: usize,
        /// Print hits as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Answer a question: retrieve, select under budget, assemble a prompt.
    Ask {
        /// Index directory (the configured one when omitted).
        index_dir: Option<PathBuf>,
        /// The question.
        #[arg(long)]
        text: String,
        /// Token budget for selection (overrides the configured one).
        #[arg(long)]
        budget: Option<usize>,
        /// Allowed similarity deviation 0..1 (overrides the configured one).
        #[arg(long)]
        deviation: Option<f64>,
        /// Chunks admitted before budget/deviation stops apply.
        #[arg(long)]
        min_segments: Option<usize>,
        /// Also call the configured chat endpoint with the prompt.
        #[arg(long)]
        generate: bool,
        /// Print the assembled prompt.
        #[arg(long)]
        show_prompt: bool,
        /// Print the full answer bundle as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run the selection walk over recorded ranked candidate streams.
    Replay {
        /// CSV with columns question_id,method,rank,label,similarity,token_count.
        appendix: PathBuf,
        /// Grouping hierarchy CSV (label containment falls back to label
        /// prefixes only when omitted).
        #[arg(long, value_name = "FILE")]
        hierarchy: Option<PathBuf>,
        /// Relevance annotations CSV; enables the proportions section.
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,
        /// Token budget for selection.
        #[arg(long, default_value_t = 2500)]
        budget: usize,
        /// Allowed similarity deviation 0..1.
        #[arg(long, default_value_t = 0.25)]
        deviation: f64,
        /// Chunks admitted before budget/deviation stops apply.
        #[arg(long, default_value_t = 7)]
        min_segments: usize,
        /// Print per-stream rows as CSV instead of markdown.
        #[arg(long)]
        csv: bool,
        /// Print replayed streams as JSON instead of markdown.
        #[arg(long)]
        json: bool,
    },
    /// Index a corpus at both granularities and compare retrieval.
    Compare {
        /// Statute files; each file becomes one document (id = file stem).
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// JSON file with an array of {"id", "text"} queries; census-only
        /// comparison when omitted.
        #[arg(long, value_name = "FILE")]
        queries: Option<PathBuf>,
        /// Candidates retrieved per query before selection.
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        /// Print per-query rows as CSV instead of markdown.
        #[arg(long)]
        csv: bool,
        /// Print the comparison report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild the full evaluation report from recorded fixture files.
    Report {
        /// Directory holding appendix_q1-q8.csv, crfb_hierarchy.csv, and
        /// annotations.csv.
        #[arg(long, default_value = "fixtures", value_name = "DIR")]
        fixtures: PathBuf,
        /// Output directory for report.md and the CSV exports.
        #[arg(short, long, default_value = "eval-out", value_name = "DIR")]
        output: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Parse { file, profile, strict, json } => {
            cmd_parse(&file, &profile, strict, json)
        }
        Command::Chunk { file, flat, profile, strict, output } => {
            cmd_chunk(&file, flat, &profile, strict, output.as_deref())
        }
        Command::Index { corpus, output, provider, dims, json } => {
            cmd_index(config, &corpus, output, provider, dims, json)
        }
        Command::Query { index_dir, text, top_k, json } => {
            cmd_query(config, index_dir, &text, top_k, json)
        }
        Command::Ask {
            index_dir,
            text,
            budget,
            deviation,
            min_segments,
            generate,
            show_prompt,
            json,
        } => cmd_ask(
            config,
            index_dir,
            &text,
            budget,
            deviation,
            min_segments,
            generate,
            show_prompt,
            json,
        ),
        Command::Replay {
            appendix,
            hierarchy,
            annotations,
            budget,
            deviation,
            min_segments,
            csv,
            json,
        } => cmd_replay(
            &appendix,
            hierarchy.as_deref(),
            annotations.as_deref(),
            budget,
            deviation,
            min_segments,
            csv,
            json,
        ),
        Command::Compare { corpus, queries, top_k, csv, json } => {
            cmd_compare(config, &corpus, queries.as_deref(), top_k, csv, json)
        }
        Command::Report { fixtures, output } => cmd_report(&fixtures, &output),
    }
}

/// Writes `text` to stdout; a closed pipe (e.g. `| head`) ends the process
/// quietly instead of panicking.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    let done = out.write_all(text.as_bytes()).and_then(|()| out.flush());
    match done {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(e).context("writing to stdout"),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p)
            .with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn parse_file(file: &Path, profile: &str, strict: bool) -> anyhow::Result<DocumentTree> {
    let strictness = if strict { Strictness::Strict } else { Strictness::Lenient };
    let profile = StructureProfile::from_name(profile, strictness)?;
    let text =
        fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let doc_id = doc_id_of(file)?;
    Ok(parse_document(&text, &profile, &doc_id)?)
}

fn doc_id_of(file: &Path) -> anyhow::Result<String> {
    file.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .with_context(|| format!("cannot derive a document id from {}", file.display()))
}

fn kind_str(kind: &NodeKind) -> &'static str {
    use lexstrata::parser::{ComponentKind, GroupingKind, ParagraphKind};
    match kind {
        NodeKind::Document => "document",
        NodeKind::DocumentComponent(ComponentKind::MainText) => "main_text",
        NodeKind::DocumentComponent(ComponentKind::Annex) => "annex",
        NodeKind::DocumentComponent(ComponentKind::Justification) => "justification",
        NodeKind::DocumentComponent(ComponentKind::Preamble) => "preamble",
        NodeKind::Grouping(GroupingKind::Parte) => "parte",
        NodeKind::Grouping(GroupingKind::Livro) => "livro",
        NodeKind::Grouping(GroupingKind::Titulo) => "titulo",
        NodeKind::Grouping(GroupingKind::Capitulo) => "capitulo",
        NodeKind::Grouping(GroupingKind::Secao) => "secao",
        NodeKind::Grouping(GroupingKind::Subsecao) => "subsecao",
        NodeKind::Article => "article",
        NodeKind::Caput => "caput",
        NodeKind::Paragraph(ParagraphKind::Numbered) => "paragraph",
        NodeKind::Paragraph(ParagraphKind::Sole) => "sole_paragraph",
        NodeKind::Inciso => "inciso",
        NodeKind::Alinea => "alinea",
        NodeKind::Item => "item",
    }
}

fn cmd_parse(file: &Path, profile: &str, strict: bool, json: bool) -> anyhow::Result<()> {
    let tree = parse_file(file, profile, strict)?;
    if json {
        let nodes: Vec<serde_json::Value> = tree
            .preorder()
            .into_iter()
            .map(|id| {
                let node = &tree.nodes[id];
                serde_json::json!({
                    "id": node.id,
                    "kind": kind_str(&node.kind),
                    "ordinal": node.ordinal,
                    "heading": node.heading,
                    "start": node.span.start,
                    "end": node.span.end,
                    "parent": node.parent,
                })
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&nodes)?;
        text.push('\n');
        return emit(&text);
    }
    let mut out = String::new();
    let mut depth = vec![0usize; tree.nodes.len()];
    for id in tree.preorder() {
        let node = &tree.nodes[id];
        if let Some(parent) = node.parent {
            depth[id] = depth[parent] + 1;
        }
        let _ = write!(out, "{}{}", "  ".repeat(depth[id]), kind_str(&node.kind));
        if !node.ordinal.is_empty() {
            let _ = write!(out, " {}", node.ordinal);
        }
        if let Some(heading) = &node.heading {
            let _ = write!(out, " — {heading}");
        }
        let _ = writeln!(out, "  [{}..{})", node.span.start, node.span.end);
    }
    emit(&out)
}

fn layer_census(chunks: &[Chunk]) -> String {
    let mut per_layer: BTreeMap<Layer, usize> = BTreeMap::new();
    for chunk in chunks {
        *per_layer.entry(chunk.layer).or_insert(0) += 1;
    }
    let mut out = format!("{} chunk(s)\n", chunks.len());
    for (layer, n) in per_layer {
        let _ = writeln!(out, "  {:<22} {n}", layer.as_str());
    }
    out
}

fn cmd_chunk(
    file: &Path,
    flat: bool,
    profile: &str,
    strict: bool,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let tree = parse_file(file, profile, strict)?;
    let tokenizer = TokenizerSpec::default();
    let chunks = if flat {
        build_flat_chunks(&tree, &tokenizer)?
    } else {
        build_multilayer_chunks(&tree, &tokenizer)?
    };
    match output {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_chunks_jsonl(&chunks, std::io::BufWriter::new(file))?;
            emit(&format!("{}wrote {}\n", layer_census(&chunks), path.display()))
        }
        None => {
            let stdout = std::io::stdout();
            match write_chunks_jsonl(&chunks, stdout.lock()) {
                Ok(()) => Ok(()),
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
                Err(e) => Err(e).context("writing to stdout"),
            }
        }
    }
}

fn cmd_index(
    mut config: PipelineConfig,
    corpus: &[PathBuf],
    output: Option<PathBuf>,
    provider: Option<ProviderKind>,
    dims: Option<usize>,
    json: bool,
) -> anyhow::Result<()> {
    if let Some(dir) = output {
        config.index_dir = dir;
    }
    if let Some(kind) = provider {
        config.provider.kind = kind;
    }
    if let Some(dims) = dims {
        config.provider.dims = dims;
    }
    let report = pipeline::index_corpus(&config, corpus)?;
    if json {
        return emit(&format!("{}\n", serde_json::to_string_pretty(&report)?));
    }
    let mut out = format!(
        "indexed {} document(s), {} chunk(s) → {}\n",
        report.documents,
        report.chunks,
        report.index_dir.display()
    );
    let _ = writeln!(out, "provider: {}", report.provider_fingerprint);
    let _ = writeln!(out, "chunks per layer:");
    for (layer, n) in &report.per_layer {
        let _ = writeln!(out, "  {layer:<22} {n}");
    }
    let _ = writeln!(out, "chunks per token-count bucket:");
    for (bucket, n) in &report.token_histogram {
        let _ = writeln!(out, "  {bucket:<22} {n}");
    }
    emit(&out)
}

fn cmd_query(
    mut config: PipelineConfig,
    index_dir: Option<PathBuf>,
    text: &str,
    top_k: usize,
    json: bool,
) -> anyhow::Result<()> {
    if let Some(dir) = index_dir {
        config.index_dir = dir;
    }
    let (index, service) = pipeline::open_index(&config)?;
    let query_vector = service.embed_one(text)?;
    let hits = index.search(&query_vector, top_k)?;
    if json {
        return emit(&format!("{}\n", serde_json::to_string_pretty(&hits)?));
    }
    let mut out = String::new();
    for (i, hit) in hits.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>3}. {:+.6}  {:>5} tok  {:<22} {}",
            i + 1,
            hit.similarity,
            hit.token_count,
            hit.layer.as_str(),
            hit.label
        );
    }
    emit(&out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ask(
    mut config: PipelineConfig,
    index_dir: Option<PathBuf>,
    text: &str,
    budget: Option<usize>,
    deviation: Option<f64>,
    min_segments: Option<usize>,
    generate: bool,
    show_prompt: bool,
    json: bool,
) -> anyhow::Result<()> {
    if let Some(dir) = index_dir {
        config.index_dir = dir;
    }
    if let Some(budget) = budget {
        config.selection.token_budget = budget;
    }
    if let Some(deviation) = deviation {
        config.selection.deviation = deviation;
    }
    if let Some(min_segments) = min_segments {
        config.selection.min_segments = min_segments;
    }
    let bundle = pipeline::answer(&config, text, generate)?;
    if json {
        return emit(&format!("{}\n", serde_json::to_string_pretty(&bundle)?));
    }
    let mut out = format!("query: {}\n", bundle.query);
    let _ = writeln!(
        out,
        "selected {} chunk(s), {} token(s), stopped: {}",
        bundle.selection.selected.len(),
        bundle.selection.cumulative_tokens,
        eval::stop_reason_str(bundle.selection.stop_reason)
    );
    for (i, c) in bundle.selection.selected.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>3}. {:+.6}  {:>5} tok  {}",
            i + 1,
            c.similarity,
            c.token_count,
            c.label
        );
    }
    if show_prompt {
        let _ = writeln!(out, "--- prompt ---\n{}\n--- end prompt ---", bundle.prompt);
    } else {
        let tokenizer = TokenizerSpec::default();
        let _ = writeln!(
            out,
            "prompt: {} token(s); use --show-prompt to print it",
            tokenizer.count(&bundle.prompt)
        );
    }
    if let Some(answer) = &bundle.answer {
        let _ = writeln!(out, "answer: {answer}");
    }
    emit(&out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_replay(
    appendix: &Path,
    hierarchy: Option<&Path>,
    annotations: Option<&Path>,
    budget: usize,
    deviation: f64,
    min_segments: usize,
    csv: bool,
    json: bool,
) -> anyhow::Result<()> {
    let params = lexstrata::selector::SelectionParams {
        token_budget: budget,
        deviation,
        min_segments,
        max_candidates: None,
    };
    let table = match hierarchy {
        Some(path) => HierarchyTable::from_csv_path(path)?,
        None => HierarchyTable::empty(),
    };
    let file = fs::File::open(appendix)
        .with_context(|| format!("opening {}", appendix.display()))?;
    let streams = eval::replay_streams(std::io::BufReader::new(file), &params, &table)?;

    if json {
        let rows = eval::comparison_rows(&streams);
        let out: Vec<serde_json::Value> = streams
            .iter()
            .zip(&rows)
            .map(|(stream, row)| {
                serde_json::json!({
                    "question_id": stream.question_id,
                    "method": stream.method,
                    "chunk_count": row.chunk_count,
                    "total_tokens": row.total_tokens,
                    "max_similarity": row.max_similarity,
                    "min_similarity": row.min_similarity,
                    "stop_reason": eval::stop_reason_str(stream.result.stop_reason),
                    "labels": stream
                        .result
                        .selected
                        .iter()
                        .map(|c| c.label.clone())
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        return emit(&format!("{}\n", serde_json::to_string_pretty(&out)?));
    }
    if csv {
        return emit(&eval::comparison_rows_csv(&eval::comparison_rows(&streams)));
    }
    match annotations {
        Some(path) => {
            let file = fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let annotations = eval::read_annotations_csv(std::io::BufReader::new(file))?;
            let report = eval::build_report(&streams, &annotations)?;
            emit(&report.to_markdown())
        }
        None => {
            let rows = eval::comparison_rows(&streams);
            let mut out = String::from("| Question | Method | Chunks | Tokens | Stop |\n");
            out.push_str("|---|---|---:|---:|---|\n");
            for (stream, row) in streams.iter().zip(&rows) {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    row.question_id,
                    row.method,
                    row.chunk_count,
                    row.total_tokens,
                    eval::stop_reason_str(stream.result.stop_reason)
                );
            }
            emit(&out)
        }
    }
}

fn cmd_compare(
    config: PipelineConfig,
    corpus: &[PathBuf],
    queries: Option<&Path>,
    top_k: usize,
    csv: bool,
    json: bool,
) -> anyhow::Result<()> {
    let profile = config.structure_profile()?;
    let trees: Vec<DocumentTree> = corpus
        .iter()
        .map(|file| {
            let text = fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))?;
            Ok(parse_document(&text, &profile, &doc_id_of(file)?)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let queries: Vec<EvalQuery> = match queries {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing queries from {}", path.display()))?
        }
        None => Vec::new(),
    };
    let compare_config = CompareConfig {
        provider: config.provider.clone(),
        selection: config.selection.clone(),
        top_k,
    };
    let report = eval::compare_methods(&trees, &queries, &compare_config)?;
    if json {
        emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))
    } else if csv {
        emit(&report.rows_csv())
    } else {
        emit(&report.to_markdown())
    }
}

fn cmd_report(fixtures: &Path, output: &Path) -> anyhow::Result<()> {
    let open = |name: &str| -> anyhow::Result<std::io::BufReader<fs::File>> {
        let path = fixtures.join(name);
        Ok(std::io::BufReader::new(fs::File::open(&path).with_context(
            || format!("opening {}", path.display()),
        )?))
    };
    let table = HierarchyTable::from_csv_path(fixtures.join("crfb_hierarchy.csv"))?;
    let params = lexstrata::selector::SelectionParams::default();
    let streams = eval::replay_streams(open("appendix_q1-q8.csv")?, &params, &table)?;
    let annotations = eval::read_annotations_csv(open("annotations.csv")?)?;
    let report = eval::build_report(&streams, &annotations)?;
    let stats = eval::export_similarity_stats(&report.rows);

    fs::create_dir_all(output)
        .with_context(|| format!("creating {}", output.display()))?;
    let artifacts: [(&str, String); 3] = [
        ("report.md", report.to_markdown()),
        ("selection_rows.csv", report.rows_csv()),
        ("similarity_stats.csv", stats),
    ];
    let mut out = String::new();
    for (name, content) in &artifacts {
        let path = output.join(name);
        let mut file = fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        file.write_all(content.as_bytes())?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    let _ = writeln!(
        out,
        "replayed {} stream(s); first-rank coincidence on {} of {} paired question(s)",
        streams.len(),
        report.first_rank_coincidences,
        report.paired_questions
    );
    emit(&out)
}
