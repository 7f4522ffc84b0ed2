//! Repository acquisition, source discovery and paper loading.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// Placeholder commit id for directories that are not clean git checkouts.
pub const DIRTY_WORKTREE: &str = "dirty-worktree";

/// Bytes inspected when deciding whether a file is binary.
pub const BINARY_SNIFF_BYTES: usize = 8192;

pub const DEFAULT_MAX_FILE_BYTES: u64 = 1_048_576;

const VCS_DIRS: &[&str] = &[".git", ".hg", ".svn", ".bzr"];

/// Name of the per-run workspace directory kept next to the artifacts.
pub const WORKSPACE_DIR: &str = ".papertrace";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("clone of {source_url} failed: {stderr}")]
    CloneFailed { source_url: String, stderr: String },
    #[error("ref {0:?} not found")]
    RefNotFound(String),
    #[error("repository source {0:?} is neither an existing directory nor a git URL")]
    SourceNotFound(String),
    #[error("paper extractor failed: {0}")]
    ExtractorFailed(String),
    #[error("paper {0} is empty")]
    EmptyPaper(PathBuf),
    #[error("invalid glob {pattern:?}: {message}")]
    InvalidGlob { pattern: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageHint {
    Python,
    Notebook,
    GenericBraced,
    Plain,
    Unknown,
}

impl LanguageHint {
    pub fn from_path(path: &str) -> Self {
        let ext = Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
        match ext.as_str() {
            "py" | "pyw" | "pyi" => Self::Python,
            "ipynb" => Self::Notebook,
            "c" | "h" | "cc" | "cpp" | "cxx" | "hpp" | "hh" | "cu" | "java" | "js" | "jsx" | "mjs" | "ts" | "tsx"
            | "go" | "rs" | "cs" | "swift" | "kt" | "kts" | "scala" | "php" | "r" => Self::GenericBraced,
            "sh" | "bash" | "jl" | "m" | "rb" | "pl" | "lua" | "f" | "f90" | "sql" | "txt" => Self::Plain,
            _ => Self::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub rel_path: String,
    pub byte_len: u64,
    pub language_hint: LanguageHint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub root_path: PathBuf,
    pub commit_id: String,
    pub files: Vec<SourceFile>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub include_globs: Vec<String>,
    pub exclude_globs: Vec<String>,
    pub max_file_bytes: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            include_globs: vec![
                "**/*.{py,pyw,pyi,ipynb}".into(),
                "**/*.{c,h,cc,cpp,cxx,hpp,hh,cu}".into(),
                "**/*.{java,js,jsx,mjs,ts,tsx,go,rs,cs,swift,kt,kts,scala,php}".into(),
                "**/*.{r,R,jl,m,sh,rb,pl,lua,f,f90,sql}".into(),
            ],
            exclude_globs: vec![
                "**/__pycache__/**".into(),
                "**/.ipynb_checkpoints/**".into(),
                "**/node_modules/**".into(),
                "**/.venv/**".into(),
                "**/venv/**".into(),
                "**/.papertrace/**".into(),
            ],
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
        }
    }
}

fn build_globset(patterns: &[String]) -> Result<GlobSet, IngestError> {
    let mut builder = GlobSetBuilder::new();
    for pattern in patterns {
        let glob = Glob::new(pattern)
            .map_err(|e| IngestError::InvalidGlob { pattern: pattern.clone(), message: e.to_string() })?;
        builder.add(glob);
    }
    builder.build().map_err(|e| IngestError::InvalidGlob { pattern: patterns.join(", "), message: e.to_string() })
}

/// Lists candidate source files under `root` in lexicographic order of their
/// repo-relative path. Returns the files and the warnings produced while
/// filtering.
pub fn discover_files(root: &Path, filters: &IngestConfig) -> Result<(Vec<SourceFile>, Vec<String>), IngestError> {
    let include = build_globset(&filters.include_globs)?;
    let exclude = build_globset(&filters.exclude_globs)?;
    let mut files = Vec::new();
    let mut warnings = Vec::new();

    let walker = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| !(e.file_type().is_dir() && e.depth() > 0 && VCS_DIRS.iter().any(|d| e.file_name() == *d)));
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("skipped unreadable entry: {e}"));
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let Ok(rel) = entry.path().strip_prefix(root) else { continue };
        let rel_path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if !include.is_match(&rel_path) || exclude.is_match(&rel_path) {
            continue;
        }
        let byte_len = match entry.metadata() {
            Ok(m) => m.len(),
            Err(e) => {
                warnings.push(format!("skipped {rel_path}: {e}"));
                continue;
            }
        };
        if byte_len > filters.max_file_bytes {
            warnings.push(format!(
                "skipped {rel_path}: {byte_len} bytes exceeds max_file_bytes {}",
                filters.max_file_bytes
            ));
            continue;
        }
        match sniff_binary(entry.path()) {
            Ok(false) => {}
            Ok(true) => {
                warnings.push(format!("skipped {rel_path}: binary content (NUL byte)"));
                continue;
            }
            Err(e) => {
                warnings.push(format!("skipped {rel_path}: {e}"));
                continue;
            }
        }
        let language_hint = LanguageHint::from_path(&rel_path);
        files.push(SourceFile { rel_path, byte_len, language_hint });
    }
    files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    files.dedup_by(|a, b| a.rel_path == b.rel_path);
    Ok((files, warnings))
}

fn sniff_binary(path: &Path) -> std::io::Result<bool> {
    let mut buf = Vec::with_capacity(BINARY_SNIFF_BYTES);
    fs::File::open(path)?.take(BINARY_SNIFF_BYTES as u64).read_to_end(&mut buf)?;
    Ok(buf.contains(&0))
}

/// Reads a source file as UTF-8, replacing invalid sequences with U+FFFD.
/// The second value is a warning when a replacement happened.
pub fn read_source(root: &Path, file: &SourceFile) -> Result<(String, Option<String>), IngestError> {
    let path = root.join(&file.rel_path);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    Ok(decode_lossy(bytes, &file.rel_path))
}

fn decode_lossy(bytes: Vec<u8>, label: &str) -> (String, Option<String>) {
    match String::from_utf8(bytes) {
        Ok(s) => (s, None),
        Err(e) => (
            String::from_utf8_lossy(e.as_bytes()).into_owned(),
            Some(format!("{label}: invalid UTF-8 replaced with U+FFFD")),
        ),
    }
}

fn git(dir: &Path, args: &[&str]) -> std::io::Result<std::process::Output> {
    Command::new("git").arg("-C").arg(dir).args(args).env("GIT_TERMINAL_PROMPT", "0").output()
}

fn looks_like_git_url(source: &str) -> bool {
    source.contains("://") || source.starts_with("git@") || source.ends_with(".git")
}

fn head_commit(dir: &Path) -> Option<String> {
    let out = git(dir, &["rev-parse", "HEAD"]).ok()?;
    if !out.status.success() {
        return None;
    }
    let id = String::from_utf8_lossy(&out.stdout).trim().to_string();
    (id.len() == 40 && id.chars().all(|c| c.is_ascii_hexdigit())).then_some(id)
}

fn clone_into(source: &str, dest: &Path) -> Result<(), IngestError> {
    if dest.exists() {
        fs::remove_dir_all(dest).map_err(io_err(dest))?;
    }
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let out = Command::new("git")
        .args(["clone", "--quiet", "--no-recurse-submodules", source])
        .arg(dest)
        .env("GIT_TERMINAL_PROMPT", "0")
        .output()
        .map_err(|e| IngestError::CloneFailed { source_url: source.to_string(), stderr: e.to_string() })?;
    if !out.status.success() {
        return Err(IngestError::CloneFailed {
            source_url: source.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(())
}

fn checkout(dir: &Path, reference: &str) -> Result<(), IngestError> {
    let out = git(dir, &["checkout", "--quiet", "--detach", reference]).map_err(io_err(dir))?;
    if !out.status.success() {
        return Err(IngestError::RefNotFound(reference.to_string()));
    }
    Ok(())
}

/// Materializes the repository and lists its source files.
///
/// Local directories without a ref are read in place; URLs and local
/// directories with an explicit ref are cloned into `workspace/checkout`.
/// A directory that is not itself a git repository (no `.git` entry), has no
/// commits, or has uncommitted changes gets commit id `dirty-worktree`.
pub fn acquire_repo(
    source: &str,
    reference: Option<&str>,
    workspace: &Path,
    filters: &IngestConfig,
) -> Result<RepoSnapshot, IngestError> {
    let mut warnings = Vec::new();
    let local = Path::new(source);
    let (root, commit_id) = if local.is_dir() {
        let is_repo = local.join(".git").exists();
        match (is_repo, reference) {
            (true, Some(r)) => {
                let dest = workspace.join("checkout");
                clone_into(source, &dest)?;
                checkout(&dest, r)?;
                let id = head_commit(&dest).ok_or_else(|| IngestError::RefNotFound(r.to_string()))?;
                (dest, id)
            }
            (true, None) => {
                let root = local.to_path_buf();
                let id = match head_commit(&root) {
                    None => {
                        warnings.push("repository has no commits; using dirty-worktree".to_string());
                        DIRTY_WORKTREE.to_string()
                    }
                    Some(id) if worktree_is_dirty(&root) => {
                        warnings
                            .push(format!("working tree has uncommitted changes on top of {id}; using dirty-worktree"));
                        DIRTY_WORKTREE.to_string()
                    }
                    Some(id) => id,
                };
                (root, id)
            }
            (false, Some(r)) => return Err(IngestError::RefNotFound(r.to_string())),
            (false, None) => {
                warnings.push("source directory is not a git repository; using dirty-worktree".to_string());
                (local.to_path_buf(), DIRTY_WORKTREE.to_string())
            }
        }
    } else if looks_like_git_url(source) {
        let dest = workspace.join("checkout");
        clone_into(source, &dest)?;
        if let Some(r) = reference {
            checkout(&dest, r)?;
        }
        let id = head_commit(&dest).unwrap_or_else(|| {
            warnings.push("cloned repository has no commits; using dirty-worktree".to_string());
            DIRTY_WORKTREE.to_string()
        });
        (dest, id)
    } else {
        return Err(IngestError::SourceNotFound(source.to_string()));
    };

    let (files, discover_warnings) = discover_files(&root, filters)?;
    warnings.extend(discover_warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RepoSnapshot { root_path: root, commit_id, files, warnings })
}

fn worktree_is_dirty(dir: &Path) -> bool {
    match git(dir, &["status", "--porcelain"]) {
        Ok(out) if out.status.success() => !out.stdout.is_empty(),
        _ => true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaperSourceKind {
    ExtractedPdf,
    PlainText,
}

/// A heading and the char range `[start, end)` of its section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub heading: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaperDocument {
    pub source_kind: PaperSourceKind,
    pub text: String,
    pub char_count: usize,
    pub section_spans: Vec<SectionSpan>,
}

impl PaperDocument {
    pub fn from_text(source_kind: PaperSourceKind, text: String) -> Self {
        let section_spans = detect_sections(&text);
        let char_count = text.chars().count();
        Self { source_kind, text, char_count, section_spans }
    }
}

/// Loads the paper. Text and Markdown are read directly; PDFs go through the
/// extractor command template, whose `{input}` placeholder receives the path.
pub fn load_paper(input: &Path, extractor: Option<&str>) -> Result<PaperDocument, IngestError> {
    let is_pdf = input.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pdf"));
    if !input.exists() {
        return Err(IngestError::Io {
            path: input.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "paper not found"),
        });
    }
    let (raw, kind) = if is_pdf {
        let template = extractor.ok_or_else(|| {
            IngestError::ExtractorFailed(format!(
                "{} is a PDF but no extractor command is configured (e.g. --extractor \"pdftotext {{input}} -\")",
                input.display()
            ))
        })?;
        (run_extractor(template, input)?, PaperSourceKind::ExtractedPdf)
    } else {
        let bytes = fs::read(input).map_err(io_err(input))?;
        let (text, warning) = decode_lossy(bytes, &input.display().to_string());
        if let Some(w) = warning {
            log::warn!("{w}");
        }
        (text, PaperSourceKind::PlainText)
    };
    let text = normalize_newlines(&raw);
    if text.trim().is_empty() {
        return Err(IngestError::EmptyPaper(input.to_path_buf()));
    }
    Ok(PaperDocument::from_text(kind, text))
}

fn run_extractor(template: &str, input: &Path) -> Result<String, IngestError> {
    let parts = shlex::split(template)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| IngestError::ExtractorFailed(format!("cannot parse extractor template {template:?}")))?;
    let input_str = input.to_string_lossy();
    let args: Vec<String> = parts.iter().map(|p| p.replace("{input}", &input_str)).collect();
    let out = Command::new(&args[0])
        .args(&args[1..])
        .output()
        .map_err(|e| IngestError::ExtractorFailed(format!("{}: {e}", args[0])))?;
    if !out.status.success() {
        return Err(IngestError::ExtractorFailed(format!(
            "{} exited with {}: {}",
            args[0],
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(decode_lossy(out.stdout, "extractor output").0)
}

/// CRLF and lone CR become LF; a leading byte-order mark is dropped.
pub fn normalize_newlines(text: &str) -> String {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Heading text if `line` looks like a section heading: a Markdown heading,
/// a numbered heading ("2.1 Method"), or a short all-caps line.
pub fn heading_text(line: &str) -> Option<String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.chars().count() > 100 {
        return None;
    }
    if let Some(rest) = trimmed.strip_prefix('#') {
        let hashes = 1 + rest.chars().take_while(|c| *c == '#').count();
        let rest = rest.trim_start_matches('#');
        if hashes <= 6 && rest.starts_with(char::is_whitespace) {
            let heading = rest.trim().trim_end_matches('#').trim();
            return (!heading.is_empty()).then(|| heading.to_string());
        }
        return None;
    }
    if is_numbered_heading(trimmed) || is_caps_heading(trimmed) {
        return Some(trimmed.to_string());
    }
    None
}

fn is_numbered_heading(line: &str) -> bool {
    let number_len = line
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
        .map(|(i, c)| i + c.len_utf8())
        .last()
        .unwrap_or(0);
    if number_len == 0 || !line.starts_with(|c: char| c.is_ascii_digit()) {
        return false;
    }
    let rest = &line[number_len..];
    if !rest.starts_with(' ') {
        return false;
    }
    let title = rest.trim();
    let words = title.split_whitespace().count();
    title.chars().next().is_some_and(char::is_uppercase)
        && (1..=10).contains(&words)
        && !title.ends_with(['.', ',', ';', ':'])
}

fn is_caps_heading(line: &str) -> bool {
    let letters: Vec<char> = line.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() >= 4
        && letters.iter().all(|c| c.is_uppercase())
        && line.split_whitespace().count() <= 10
        && !line.ends_with(['.', ',', ';'])
}

/// Finds heading lines outside fenced code blocks. Each section runs from its
/// heading line to the next heading (or the end of the text).
pub fn detect_sections(text: &str) -> Vec<SectionSpan> {
    let mut starts: Vec<(String, usize)> = Vec::new();
    let mut offset = 0;
    let mut in_fence = false;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches('\n');
        if body.trim_start().starts_with("```") || body.trim_start().starts_with("~~~") {
            in_fence = !in_fence;
        } else if !in_fence {
            if let Some(h) = heading_text(body) {
                starts.push((h, offset));
            }
        }
        offset += line.chars().count();
    }
    let total = offset;
    let mut spans = Vec::with_capacity(starts.len());
    for (i, (heading, start)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(total, |next| next.1);
        spans.push(SectionSpan { heading: heading.clone(), start: *start, end });
    }
    spans
}

/// Per-run workspace (cache, clones) under the output directory.
pub fn workspace_dir(out_dir: &Path) -> PathBuf {
    out_dir.join(WORKSPACE_DIR)
}
