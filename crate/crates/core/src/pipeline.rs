//! Stage orchestration shared by `run` and the per-stage commands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::backend::lexical::LexicalBackend;
use crate::backend::remote::{RemoteBackend, RemoteConfig};
use crate::backend::{prompts, BackendKind, GenerationBackend, Metered, RequestLog, TaskId};
use crate::chunker::pack_chunks;
use crate::concepts::extract_concepts;
use crate::config::RunConfig;
use crate::digest::sha256_hex;
use crate::ingest::{acquire_repo, load_paper, read_source, workspace_dir, LanguageHint, PaperDocument, RepoSnapshot};
use crate::nlr::{summarize_blocks, NlrCache};
use crate::report::{
    compute_metrics, read_json, render_report, write_json, write_text, BlocksArtifact, ChunksArtifact,
    ConceptsArtifact, ExecutionStats, NlrArtifact, PaperInfo, ReportInput, RunFailure, RunManifest, RunMetrics,
    RunRecord, RunStatus, TraceMapArtifact, BLOCKS_FILE, CHUNKS_FILE, CONCEPTS_FILE, METRICS_FILE, NLR_FILE,
    REPORT_FILE, RUN_FILE, TRACEMAP_FILE,
};
use crate::segment::segment_file;
use crate::tracemap::{build_trace_map, validate_trace_map};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Segment,
    Summarize,
    Concepts,
    Map,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Segment => "segment",
            Self::Summarize => "summarize",
            Self::Concepts => "concepts",
            Self::Map => "map",
            Self::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Segment,
    Summarize,
    Concepts,
    Map,
    Report,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Segment => "segment",
            Self::Summarize => "summarize",
            Self::Concepts => "concepts",
            Self::Map => "map",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{stage}: missing prior stage artifact {file} (run `{needs}` first)")]
    MissingPriorStage { stage: Stage, file: String, needs: &'static str },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Stage { stage, .. } | Self::MissingPriorStage { stage, .. } => *stage,
        }
    }
}

fn fail(stage: Stage) -> impl FnOnce(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn err_msg<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// What a finished command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub execution: ExecutionStats,
}

// ---- stages ----

pub fn ingest_repo(cfg: &RunConfig) -> Result<RepoSnapshot, PipelineError> {
    let repo = cfg.require_repo().map_err(err_msg(Stage::Ingest))?;
    acquire_repo(repo, cfg.reference.as_deref(), &workspace_dir(&cfg.out_dir), &cfg.ingest)
        .map_err(err_msg(Stage::Ingest))
}

pub fn ingest_paper(cfg: &RunConfig) -> Result<PaperDocument, PipelineError> {
    let paper = cfg.require_paper().map_err(err_msg(Stage::Ingest))?;
    load_paper(paper, cfg.extractor.as_deref()).map_err(err_msg(Stage::Ingest))
}

pub fn segment_stage(
    cfg: &RunConfig,
    snapshot: &RepoSnapshot,
    backend: &dyn GenerationBackend,
) -> Result<BlocksArtifact, PipelineError> {
    let mut warnings = snapshot.warnings.clone();
    let mut blocks = Vec::new();
    let grouping_backend = cfg.segment.llm_grouping.then_some(backend);
    for file in &snapshot.files {
        let (content, warning) = read_source(&snapshot.root_path, file).map_err(err_msg(Stage::Segment))?;
        warnings.extend(warning);
        let (file_blocks, w) = segment_file(file, &content, &cfg.segment, grouping_backend);
        warnings.extend(w);
        blocks.extend(file_blocks);
    }
    Ok(BlocksArtifact {
        schema_version: SCHEMA_VERSION,
        commit_id: snapshot.commit_id.clone(),
        files: snapshot.files.clone(),
        blocks,
        warnings,
    })
}

pub fn nlr_cache_dir(out_dir: &Path) -> PathBuf {
    workspace_dir(out_dir).join("cache").join("nlr")
}

pub struct SummarizeResult {
    pub chunks: ChunksArtifact,
    pub nlr: NlrArtifact,
    pub cache_hits: usize,
    pub generated: usize,
}

pub fn summarize_stage(
    cfg: &RunConfig,
    blocks: &BlocksArtifact,
    backend: &dyn GenerationBackend,
) -> Result<SummarizeResult, PipelineError> {
    let plan = cfg.chunk_plan();
    let leaves = blocks.leaves();
    let chunks = pack_chunks(&leaves, &plan).map_err(err_msg(Stage::Summarize))?;
    let languages: HashMap<String, LanguageHint> =
        blocks.files.iter().map(|f| (f.rel_path.clone(), f.language_hint)).collect();
    let cache = NlrCache::open(nlr_cache_dir(&cfg.out_dir)).map_err(err_msg(Stage::Summarize))?;
    let outcome = summarize_blocks(&leaves, &chunks, &languages, backend, Some(&cache), &cfg.nlr())
        .map_err(err_msg(Stage::Summarize))?;
    Ok(SummarizeResult {
        chunks: ChunksArtifact { schema_version: SCHEMA_VERSION, plan, chunks },
        nlr: NlrArtifact {
            schema_version: SCHEMA_VERSION,
            model_id: backend.descriptor().model_id.clone(),
            prompt_digest: prompts::template(TaskId::Summarize).digest(),
            summaries: outcome.summaries,
            warnings: outcome.warnings,
        },
        cache_hits: outcome.cache_hits,
        generated: outcome.generated,
    })
}

pub fn paper_info(paper: &PaperDocument) -> PaperInfo {
    PaperInfo {
        source_kind: paper.source_kind,
        char_count: paper.char_count,
        text_digest: sha256_hex(&paper.text),
        section_spans: paper.section_spans.clone(),
    }
}

pub fn concepts_stage(
    cfg: &RunConfig,
    paper: &PaperDocument,
    backend: &dyn GenerationBackend,
) -> Result<ConceptsArtifact, PipelineError> {
    let (concepts, warnings) =
        extract_concepts(paper, backend, cfg.chunk_plan().effective_budget()).map_err(err_msg(Stage::Concepts))?;
    Ok(ConceptsArtifact { schema_version: SCHEMA_VERSION, paper: paper_info(paper), concepts, warnings })
}

pub fn map_stage(
    cfg: &RunConfig,
    blocks: &BlocksArtifact,
    nlr: &NlrArtifact,
    concepts: &ConceptsArtifact,
    backend: &dyn GenerationBackend,
) -> Result<TraceMapArtifact, PipelineError> {
    if concepts.concepts.is_empty() {
        return Err(fail(Stage::Map)("no concepts to map".into()));
    }
    let map_cfg = cfg.map();
    let raw = build_trace_map(&concepts.concepts, &nlr.summaries, &blocks.blocks, backend, &map_cfg)
        .map_err(err_msg(Stage::Map))?;
    let map = validate_trace_map(&raw, &concepts.concepts, &blocks.blocks, map_cfg.essential_min_lines);
    Ok(TraceMapArtifact {
        schema_version: SCHEMA_VERSION,
        link_threshold: map_cfg.link_threshold,
        essential_min_lines: map_cfg.essential_min_lines,
        map,
    })
}

/// All stage warnings, tagged with the stage that raised them.
pub fn collect_warnings(
    blocks: &BlocksArtifact,
    nlr: &NlrArtifact,
    concepts: &ConceptsArtifact,
    map: &TraceMapArtifact,
) -> Vec<(String, String)> {
    let tag = |stage: Stage, ws: &[String]| {
        ws.iter().map(move |w| (stage.as_str().to_string(), w.clone())).collect::<Vec<_>>()
    };
    [
        tag(Stage::Segment, &blocks.warnings),
        tag(Stage::Summarize, &nlr.warnings),
        tag(Stage::Concepts, &concepts.warnings),
        tag(Stage::Map, &map.map.warnings),
    ]
    .concat()
}

pub fn report_stage(
    manifest: &RunManifest,
    blocks: &BlocksArtifact,
    chunks: &ChunksArtifact,
    nlr: &NlrArtifact,
    concepts: &ConceptsArtifact,
    map: &TraceMapArtifact,
) -> (RunMetrics, String) {
    let metrics = compute_metrics(
        blocks.files.len(),
        &blocks.blocks,
        &chunks.chunks,
        &concepts.concepts,
        &map.map,
        &nlr.summaries,
    );
    let warnings = collect_warnings(blocks, nlr, concepts, map);
    let report = render_report(&ReportInput {
        manifest,
        blocks: &blocks.blocks,
        summaries: &nlr.summaries,
        concepts: &concepts.concepts,
        map: &map.map,
        metrics: &metrics,
        warnings: &warnings,
    });
    (metrics, report)
}

pub fn manifest(
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
    commit_id: Option<String>,
    paper_digest: Option<String>,
) -> RunManifest {
    RunManifest {
        tool_version: crate::TOOL_VERSION.to_string(),
        schema_version: SCHEMA_VERSION,
        commit_id,
        paper_digest,
        backend: backend.descriptor().clone(),
        prompt_digests: prompts::digests(),
        config: cfg.tuning(),
    }
}

/// The configured backend. A remote backend built without a credential is
/// only good for its descriptor (commands that send no requests).
pub fn build_backend(cfg: &RunConfig, credential: Option<String>) -> Box<dyn GenerationBackend> {
    match cfg.backend.kind {
        BackendKind::Remote => Box::new(RemoteBackend::with_credential(
            RemoteConfig {
                base_url: cfg.backend.base_url.clone(),
                model_id: cfg.backend.model.clone(),
                api_key_env: cfg.backend.api_key_env.clone(),
                context_budget_tokens: cfg.context_budget_tokens,
                parallelism: cfg.backend.parallelism,
                ..RemoteConfig::default()
            },
            credential.unwrap_or_default(),
        )),
        BackendKind::Lexical => Box::new(LexicalBackend::new(cfg.context_budget_tokens)),
    }
}

// ---- command execution ----

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Session<'a> {
    cfg: &'a RunConfig,
    log: &'a RequestLog,
    started: Instant,
    record: Option<RunRecord>,
    stages: Vec<String>,
    execution: ExecutionStats,
    written: Vec<PathBuf>,
    command: Command,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a RunConfig, log: &'a RequestLog, command: Command) -> Self {
        Self {
            cfg,
            log,
            started: Instant::now(),
            record: None,
            stages: Vec::new(),
            execution: ExecutionStats::default(),
            written: Vec::new(),
            command,
        }
    }

    fn write<T: serde::Serialize>(&mut self, stage: Stage, name: &str, value: &T) -> Result<(), PipelineError> {
        write_json(&self.cfg.out_dir, name, value).map_err(|e| fail(stage)(format!("writing {name}: {e}")))?;
        self.note_written(name);
        Ok(())
    }

    fn note_written(&mut self, name: &str) {
        let path = self.cfg.out_dir.join(name);
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    /// Records the manifest in run.json before any generation request.
    fn open_record(&mut self, manifest: RunManifest) -> Result<(), PipelineError> {
        let record = RunRecord {
            schema_version: SCHEMA_VERSION,
            command: self.command.as_str().to_string(),
            status: RunStatus::Running,
            started_at: now(),
            finished_at: None,
            manifest_digest: manifest.digest(),
            manifest,
            config: self.cfg.clone(),
            stages_completed: Vec::new(),
            execution: ExecutionStats::default(),
            error: None,
        };
        write_json(&self.cfg.out_dir, RUN_FILE, &record)
            .map_err(|e| fail(Stage::Ingest)(format!("writing {RUN_FILE}: {e}")))?;
        self.note_written(RUN_FILE);
        self.record = Some(record);
        Ok(())
    }

    fn done(&mut self, stage: Stage) {
        self.stages.push(stage.as_str().to_string());
    }

    fn close_record(&mut self, error: Option<&PipelineError>) -> std::io::Result<()> {
        self.execution.n_requests = self.log.requests();
        self.execution.n_retries = self.log.retries();
        self.execution.wall_time_ms = self.started.elapsed().as_millis() as u64;
        let Some(record) = self.record.as_mut() else { return Ok(()) };
        record.status = if error.is_some() { RunStatus::Failed } else { RunStatus::Succeeded };
        record.finished_at = Some(now());
        record.stages_completed = self.stages.clone();
        record.execution = self.execution;
        record.error = error.map(|e| RunFailure { stage: e.stage().as_str().to_string(), message: e.to_string() });
        write_json(&self.cfg.out_dir, RUN_FILE, record)
    }
}

fn load<T: serde::de::DeserializeOwned>(
    out_dir: &Path,
    stage: Stage,
    file: &str,
    needs: &'static str,
) -> Result<T, PipelineError> {
    let path = out_dir.join(file);
    if !path.exists() {
        return Err(PipelineError::MissingPriorStage { stage, file: file.to_string(), needs });
    }
    read_json(out_dir, file).map_err(|e| fail(stage)(format!("cannot read {file}: {e}")))
}

/// Runs `command`. Every generation request goes through a metered wrapper
/// around `backend`, so run.json carries the request and retry counts.
pub fn execute(command: Command, cfg: &RunConfig, backend: &dyn GenerationBackend) -> Result<Outcome, PipelineError> {
    let log = RequestLog::default();
    let mut session = Session::new(cfg, &log, command);
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| fail(Stage::Ingest)(format!("{}: {e}", cfg.out_dir.display())))?;
    let result = execute_in(&mut session, backend);
    if let Err(e) = session.close_record(result.as_ref().err()) {
        log::error!("could not update {RUN_FILE}: {e}");
    }
    result.map(|()| Outcome { written: session.written, execution: session.execution })
}

fn execute_in(s: &mut Session<'_>, raw_backend: &dyn GenerationBackend) -> Result<(), PipelineError> {
    let cfg = s.cfg;
    let out = cfg.out_dir.as_path();
    let backend = Metered::new(raw_backend, s.log);
    let backend: &dyn GenerationBackend = &backend;

    match s.command {
        Command::Run => {
            let snapshot = ingest_repo(cfg)?;
            let paper = ingest_paper(cfg)?;
            s.done(Stage::Ingest);
            s.open_record(manifest(cfg, backend, Some(snapshot.commit_id.clone()), Some(sha256_hex(&paper.text))))?;
            let blocks = segment_stage(cfg, &snapshot, backend)?;
            s.write(Stage::Segment, BLOCKS_FILE, &blocks)?;
            s.done(Stage::Segment);
            let summarized = summarize_stage(cfg, &blocks, backend)?;
            s.execution.cache_hits = summarized.cache_hits;
            s.execution.summaries_generated = summarized.generated;
            s.write(Stage::Summarize, CHUNKS_FILE, &summarized.chunks)?;
            s.write(Stage::Summarize, NLR_FILE, &summarized.nlr)?;
            s.done(Stage::Summarize);
            let concepts = concepts_stage(cfg, &paper, backend)?;
            s.write(Stage::Concepts, CONCEPTS_FILE, &concepts)?;
            s.done(Stage::Concepts);
            let map = map_stage(cfg, &blocks, &summarized.nlr, &concepts, backend)?;
            s.write(Stage::Map, TRACEMAP_FILE, &map)?;
            s.done(Stage::Map);
            finish_report(s, backend, &blocks, &summarized.chunks, &summarized.nlr, &concepts, &map)
        }
        Command::Segment => {
            let snapshot = ingest_repo(cfg)?;
            s.done(Stage::Ingest);
            let blocks = segment_stage(cfg, &snapshot, backend)?;
            s.write(Stage::Segment, BLOCKS_FILE, &blocks)?;
            s.done(Stage::Segment);
            Ok(())
        }
        Command::Summarize => {
            let blocks: BlocksArtifact = load(out, Stage::Summarize, BLOCKS_FILE, "segment")?;
            s.open_record(manifest(cfg, backend, Some(blocks.commit_id.clone()), None))?;
            let summarized = summarize_stage(cfg, &blocks, backend)?;
            s.execution.cache_hits = summarized.cache_hits;
            s.execution.summaries_generated = summarized.generated;
            s.write(Stage::Summarize, CHUNKS_FILE, &summarized.chunks)?;
            s.write(Stage::Summarize, NLR_FILE, &summarized.nlr)?;
            s.done(Stage::Summarize);
            Ok(())
        }
        Command::Concepts => {
            let paper = ingest_paper(cfg)?;
            s.done(Stage::Ingest);
            s.open_record(manifest(cfg, backend, None, Some(sha256_hex(&paper.text))))?;
            let concepts = concepts_stage(cfg, &paper, backend)?;
            s.write(Stage::Concepts, CONCEPTS_FILE, &concepts)?;
            s.done(Stage::Concepts);
            Ok(())
        }
        Command::Map => {
            let concepts: ConceptsArtifact = load(out, Stage::Map, CONCEPTS_FILE, "concepts")?;
            let blocks: BlocksArtifact = load(out, Stage::Map, BLOCKS_FILE, "segment")?;
            let nlr: NlrArtifact = load(out, Stage::Map, NLR_FILE, "summarize")?;
            s.open_record(manifest(
                cfg,
                backend,
                Some(blocks.commit_id.clone()),
                Some(concepts.paper.text_digest.clone()),
            ))?;
            let map = map_stage(cfg, &blocks, &nlr, &concepts, backend)?;
            s.write(Stage::Map, TRACEMAP_FILE, &map)?;
            s.done(Stage::Map);
            Ok(())
        }
        Command::Report => {
            let blocks: BlocksArtifact = load(out, Stage::Report, BLOCKS_FILE, "segment")?;
            let chunks: ChunksArtifact = load(out, Stage::Report, CHUNKS_FILE, "summarize")?;
            let nlr: NlrArtifact = load(out, Stage::Report, NLR_FILE, "summarize")?;
            let concepts: ConceptsArtifact = load(out, Stage::Report, CONCEPTS_FILE, "concepts")?;
            let map: TraceMapArtifact = load(out, Stage::Report, TRACEMAP_FILE, "map")?;
            let m = manifest(cfg, backend, Some(blocks.commit_id.clone()), Some(concepts.paper.text_digest.clone()));
            s.open_record(m)?;
            finish_report(s, backend, &blocks, &chunks, &nlr, &concepts, &map)
        }
    }
}

fn finish_report(
    s: &mut Session<'_>,
    backend: &dyn GenerationBackend,
    blocks: &BlocksArtifact,
    chunks: &ChunksArtifact,
    nlr: &NlrArtifact,
    concepts: &ConceptsArtifact,
    map: &TraceMapArtifact,
) -> Result<(), PipelineError> {
    let m = manifest(s.cfg, backend, Some(blocks.commit_id.clone()), Some(concepts.paper.text_digest.clone()));
    let (metrics, report) = report_stage(&m, blocks, chunks, nlr, concepts, map);
    s.write(Stage::Report, METRICS_FILE, &metrics)?;
    write_text(&s.cfg.out_dir, REPORT_FILE, &report)
        .map_err(|e| fail(Stage::Report)(format!("writing {REPORT_FILE}: {e}")))?;
    s.note_written(REPORT_FILE);
    s.done(Stage::Report);
    Ok(())
}
