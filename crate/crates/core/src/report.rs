//! Run bundle: JSON artifacts, run metrics and the Markdown report.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::BackendDescriptor;
use crate::chunker::{Chunk, ChunkPlan};
use crate::concepts::ResearchConcept;
use crate::digest::sha256_hex;
use crate::ingest::{PaperSourceKind, SectionSpan, SourceFile};
use crate::nlr::{total_summary_tokens, NlrSummary};
use crate::segment::{BlockKind, CodeBlock};
use crate::tracemap::TraceMap;
use crate::SCHEMA_VERSION;

pub const BLOCKS_FILE: &str = "blocks.json";
pub const CHUNKS_FILE: &str = "chunks.json";
pub const NLR_FILE: &str = "nlr.json";
pub const CONCEPTS_FILE: &str = "concepts.json";
pub const TRACEMAP_FILE: &str = "tracemap.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.md";

/// Every file of a complete bundle.
pub const BUNDLE_FILES: [&str; 8] =
    [BLOCKS_FILE, CHUNKS_FILE, NLR_FILE, CONCEPTS_FILE, TRACEMAP_FILE, METRICS_FILE, RUN_FILE, REPORT_FILE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksArtifact {
    pub schema_version: u32,
    pub commit_id: String,
    pub files: Vec<SourceFile>,
    pub blocks: Vec<CodeBlock>,
    pub warnings: Vec<String>,
}

impl BlocksArtifact {
    pub fn leaves(&self) -> Vec<&CodeBlock> {
        self.blocks.iter().filter(|b| b.kind.is_leaf()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunksArtifact {
    pub schema_version: u32,
    pub plan: ChunkPlan,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlrArtifact {
    pub schema_version: u32,
    pub model_id: String,
    pub prompt_digest: String,
    pub summaries: Vec<NlrSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperInfo {
    pub source_kind: PaperSourceKind,
    pub char_count: usize,
    pub text_digest: String,
    pub section_spans: Vec<SectionSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptsArtifact {
    pub schema_version: u32,
    pub paper: PaperInfo,
    pub concepts: Vec<ResearchConcept>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMapArtifact {
    pub schema_version: u32,
    pub link_threshold: f64,
    pub essential_min_lines: usize,
    #[serde(flatten)]
    pub map: TraceMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockCounts {
    pub total: usize,
    pub file: usize,
    pub class: usize,
    pub function: usize,
    pub notebook_cell: usize,
    pub line_group: usize,
}

/// Content metrics of one run. Every field is a recount of the sibling
/// artifacts, so the file is as reproducible as they are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub n_files: usize,
    pub n_blocks: BlockCounts,
    pub n_chunks: usize,
    pub n_oversized_chunks: usize,
    pub n_concepts: usize,
    pub n_anchor_verified: usize,
    /// One link per linked concept.
    pub n_links: usize,
    /// Concept-block pairs across all links.
    pub n_link_pairs: usize,
    pub n_unimplemented_concepts: usize,
    pub n_unmapped_blocks: usize,
    pub avg_blocks_per_linked_concept: f64,
    pub total_summary_token_estimate: usize,
    /// Leaf blocks only; file blocks would count every line twice.
    pub total_code_token_estimate: usize,
    /// `None` when there is no code at all.
    pub compression_ratio: Option<f64>,
}

/// Request accounting. Lives in run.json because it depends on cache state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub n_requests: u64,
    pub n_retries: u64,
    pub cache_hits: usize,
    pub summaries_generated: usize,
    pub wall_time_ms: u64,
}

pub fn compute_metrics(
    n_files: usize,
    blocks: &[CodeBlock],
    chunks: &[Chunk],
    concepts: &[ResearchConcept],
    map: &TraceMap,
    summaries: &[NlrSummary],
) -> RunMetrics {
    let mut counts = BlockCounts { total: blocks.len(), ..Default::default() };
    for b in blocks {
        *match b.kind {
            BlockKind::File => &mut counts.file,
            BlockKind::Class => &mut counts.class,
            BlockKind::Function => &mut counts.function,
            BlockKind::NotebookCell => &mut counts.notebook_cell,
            BlockKind::LineGroup => &mut counts.line_group,
        } += 1;
    }
    let n_link_pairs: usize = map.links.iter().map(|l| l.block_ids.len()).sum();
    let linked = map.links.iter().map(|l| l.concept_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    let avg = if linked == 0 { 0.0 } else { n_link_pairs as f64 / linked as f64 };
    let code: usize = blocks.iter().filter(|b| b.kind.is_leaf()).map(|b| b.token_estimate).sum();
    let summary = total_summary_tokens(summaries);
    RunMetrics {
        schema_version: SCHEMA_VERSION,
        n_files,
        n_blocks: counts,
        n_chunks: chunks.len(),
        n_oversized_chunks: chunks.iter().filter(|c| c.oversized).count(),
        n_concepts: concepts.len(),
        n_anchor_verified: concepts.iter().filter(|c| c.anchor_verified).count(),
        n_links: map.links.len(),
        n_link_pairs,
        n_unimplemented_concepts: map.unimplemented_concepts.len(),
        n_unmapped_blocks: map.unmapped_blocks.len(),
        avg_blocks_per_linked_concept: avg,
        total_summary_token_estimate: summary,
        total_code_token_estimate: code,
        compression_ratio: (code > 0).then(|| summary as f64 / code as f64),
    }
}

/// Reproducible identity of a run: no paths, no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub schema_version: u32,
    pub commit_id: Option<String>,
    pub paper_digest: Option<String>,
    pub backend: BackendDescriptor,
    pub prompt_digests: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Contents of run.json, the only bundle file allowed to vary between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub command: String,
    pub status: RunStatus,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub manifest_digest: String,
    pub manifest: RunManifest,
    pub config: crate::config::RunConfig,
    pub stages_completed: Vec<String>,
    pub execution: ExecutionStats,
    pub error: Option<RunFailure>,
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_text(out_dir, name, &text)
}

pub fn write_text(out_dir: &Path, name: &str, text: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(out_dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(out_dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(out_dir: &Path, name: &str) -> std::io::Result<T> {
    let text = std::fs::read_to_string(out_dir.join(name))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

/// Everything the Markdown report is rendered from.
pub struct ReportInput<'a> {
    pub manifest: &'a RunManifest,
    pub blocks: &'a [CodeBlock],
    pub summaries: &'a [NlrSummary],
    pub concepts: &'a [ResearchConcept],
    pub map: &'a TraceMap,
    pub metrics: &'a RunMetrics,
    /// `(stage, warning)` pairs in stage order.
    pub warnings: &'a [(String, String)],
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn kind_label(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::File => "file",
        BlockKind::Class => "class",
        BlockKind::Function => "function",
        BlockKind::NotebookCell => "notebook cell",
        BlockKind::LineGroup => "line group",
    }
}

fn ratio(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn render_report(input: &ReportInput<'_>) -> String {
    let blocks: HashMap<&str, &CodeBlock> = input.blocks.iter().map(|b| (b.id.as_str(), b)).collect();
    let summaries: HashMap<&str, &NlrSummary> = input.summaries.iter().map(|s| (s.block_id.as_str(), s)).collect();
    let concepts: HashMap<&str, &ResearchConcept> = input.concepts.iter().map(|c| (c.id.as_str(), c)).collect();
    let m = input.metrics;
    let mut out = String::new();

    let _ = writeln!(out, "# Trace report\n");
    let _ = writeln!(out, "- Manifest digest: `{}`", input.manifest.digest());
    let _ = writeln!(out, "- Commit: `{}`", input.manifest.commit_id.as_deref().unwrap_or("unknown"));
    let _ = writeln!(
        out,
        "- Backend: {} (`{}`)",
        match input.manifest.backend.kind {
            crate::backend::BackendKind::Remote => "remote",
            crate::backend::BackendKind::Lexical => "lexical",
        },
        input.manifest.backend.model_id
    );
    let _ = writeln!(out, "- Tool version: {}\n", input.manifest.tool_version);

    let _ = writeln!(out, "## Metrics\n");
    let _ = writeln!(out, "| Metric | Value |\n|---|---|");
    let rows: [(&str, String); 18] = [
        ("Files", m.n_files.to_string()),
        ("Blocks", m.n_blocks.total.to_string()),
        ("File blocks", m.n_blocks.file.to_string()),
        ("Class blocks", m.n_blocks.class.to_string()),
        ("Function blocks", m.n_blocks.function.to_string()),
        ("Notebook cell blocks", m.n_blocks.notebook_cell.to_string()),
        ("Line group blocks", m.n_blocks.line_group.to_string()),
        ("Chunks", m.n_chunks.to_string()),
        ("Oversized chunks", m.n_oversized_chunks.to_string()),
        ("Concepts", m.n_concepts.to_string()),
        ("Verified anchors", m.n_anchor_verified.to_string()),
        ("Trace links", m.n_links.to_string()),
        ("Linked concept-block pairs", m.n_link_pairs.to_string()),
        ("Unimplemented concepts", m.n_unimplemented_concepts.to_string()),
        ("Unmapped code blocks", m.n_unmapped_blocks.to_string()),
        ("Avg blocks per linked concept", format!("{:.2}", m.avg_blocks_per_linked_concept)),
        ("Summary / code tokens", format!("{} / {}", m.total_summary_token_estimate, m.total_code_token_estimate)),
        ("Compression ratio", ratio(m.compression_ratio)),
    ];
    for (name, value) in rows {
        let _ = writeln!(out, "| {name} | {value} |");
    }
    out.push('\n');

    let _ = writeln!(out, "## Concepts\n");
    if input.concepts.is_empty() {
        let _ = writeln!(out, "none\n");
    } else {
        let _ = writeln!(
            out,
            "Extracted concepts are not filtered for relevance; some may be background rather than \
             contributions and need a reviewer's judgement.\n"
        );
    }
    let links: HashMap<&str, &crate::tracemap::TraceLink> =
        input.map.links.iter().map(|l| (l.concept_id.as_str(), l)).collect();
    for c in input.concepts {
        let _ = writeln!(out, "### {}: {}\n", c.id, one_line(&c.name));
        let _ = writeln!(
            out,
            "Category: {}\n",
            serde_json::to_value(c.category).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        );
        if !c.description.is_empty() {
            let _ = writeln!(out, "{}\n", one_line(&c.description));
        }
        let status = if c.anchor_verified { "verified" } else { "not found in the paper" };
        let _ = writeln!(out, "> {}\n\nAnchor: {status}\n", one_line(&c.anchor_quote));
        let _ = writeln!(out, "Locations:\n");
        match links.get(c.id.as_str()) {
            None => {
                let _ = writeln!(out, "- none\n");
            }
            Some(link) => {
                for id in &link.block_ids {
                    let (location, kind) =
                        blocks.get(id.as_str()).map_or((id.clone(), "block"), |b| (b.location(), kind_label(b.kind)));
                    let intent = summaries.get(id.as_str()).map_or("no summary", |s| s.intent.as_str());
                    let _ = writeln!(out, "- `{location}` ({kind}): {}", one_line(intent));
                }
                let _ = writeln!(
                    out,
                    "\nConfidence {:.2}. Rationale: {}\n",
                    link.confidence,
                    if link.rationale.trim().is_empty() { "none given".to_string() } else { one_line(&link.rationale) }
                );
            }
        }
    }

    let _ = writeln!(out, "## Unimplemented concepts\n");
    if input.map.unimplemented_concepts.is_empty() {
        let _ = writeln!(out, "none");
    }
    for id in &input.map.unimplemented_concepts {
        let name = concepts.get(id.as_str()).map_or(String::new(), |c| one_line(&c.name));
        let _ = writeln!(out, "- {name} (`{id}`)");
    }
    out.push('\n');

    let _ = writeln!(out, "## Unmapped code blocks\n");
    let _ = writeln!(
        out,
        "Leaf blocks with no trace link that look essential. Unless the backend named them itself, \"essential\" is a size proxy: at least the configured minimum line count.\n"
    );
    if input.map.unmapped_blocks.is_empty() {
        let _ = writeln!(out, "none");
    }
    for id in &input.map.unmapped_blocks {
        match blocks.get(id.as_str()) {
            Some(b) => {
                let intent = summaries.get(id.as_str()).map_or("no summary", |s| s.intent.as_str());
                let _ = writeln!(
                    out,
                    "- `{}` ({}, {} lines): {}",
                    b.location(),
                    kind_label(b.kind),
                    b.line_count(),
                    one_line(intent)
                );
            }
            None => {
                let _ = writeln!(out, "- `{id}`");
            }
        }
    }
    out.push('\n');

    let _ = writeln!(out, "## Warnings\n");
    if input.warnings.is_empty() {
        let _ = writeln!(out, "none");
    }
    for (stage, w) in input.warnings {
        let _ = writeln!(out, "- [{stage}] {}", one_line(w));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ConceptCategory;
    use crate::tracemap::TraceLink;

    fn concept(i: usize) -> ResearchConcept {
        ResearchConcept {
            id: format!("C{i}"),
            name: format!("concept {i}"),
            description: String::new(),
            category: ConceptCategory::Method,
            anchor_quote: format!("concept {i}"),
            anchor_span: Some((0, 9)),
            anchor_verified: true,
            alternate_anchors: Vec::new(),
        }
    }

    fn link(c: usize, n: usize) -> TraceLink {
        TraceLink {
            concept_id: format!("C{c}"),
            block_ids: (0..n).map(|i| format!("b{i}")).collect(),
            rationale: String::new(),
            confidence: 0.5,
        }
    }

    #[test]
    fn average_over_linked_concepts() {
        let concepts: Vec<_> = (1..=4).map(concept).collect();
        let map = TraceMap {
            links: vec![link(1, 2), link(2, 1), link(3, 3)],
            unimplemented_concepts: vec!["C4".into()],
            ..Default::default()
        };
        let m = compute_metrics(0, &[], &[], &concepts, &map, &[]);
        assert_eq!(m.avg_blocks_per_linked_concept, (2.0 + 1.0 + 3.0) / 3.0);
        assert_eq!(m.n_links, 3);
        assert_eq!(m.n_link_pairs, 6);
        assert_eq!(m.compression_ratio, None);
    }

    #[test]
    fn empty_map_has_zero_average() {
        let m = compute_metrics(0, &[], &[], &[concept(1)], &TraceMap::default(), &[]);
        assert_eq!((m.n_links, m.avg_blocks_per_linked_concept), (0, 0.0));
    }

    fn manifest() -> RunManifest {
        RunManifest {
            tool_version: "0".into(),
            schema_version: 1,
            commit_id: None,
            paper_digest: None,
            backend: {
                use crate::backend::GenerationBackend;
                crate::backend::lexical::LexicalBackend::new(100).descriptor().clone()
            },
            prompt_digests: BTreeMap::new(),
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn report_lists_each_location_and_placeholders() {
        let mut blocks = Vec::new();
        for i in 0..2 {
            let mut b =
                CodeBlock::new("a.py", BlockKind::Function, i * 10 + 1, i * 10 + 5, format!("def f{i}(): pass"));
            b.id = format!("b{i}");
            blocks.push(b);
        }
        let concepts = vec![concept(1)];
        let map = TraceMap { links: vec![link(1, 2)], ..Default::default() };
        let metrics = compute_metrics(1, &blocks, &[], &concepts, &map, &[]);
        let md = render_report(&ReportInput {
            manifest: &manifest(),
            blocks: &blocks,
            summaries: &[],
            concepts: &concepts,
            map: &map,
            metrics: &metrics,
            warnings: &[],
        });
        assert!(md.contains("- `a.py:1-5` (function)"));
        assert!(md.contains("- `a.py:11-15` (function)"));
        assert_eq!(md.matches("### C1:").count(), 1);
        let unimplemented = md.split("## Unimplemented concepts\n\n").nth(1).unwrap();
        assert!(unimplemented.starts_with("none\n"));
        assert!(md.ends_with("## Warnings\n\nnone\n"));
    }
}
