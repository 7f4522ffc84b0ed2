//! Splits source files into code blocks.
//!
//! Every file yields one `File` parent block plus leaf blocks: top-level
//! classes and functions (indentation rules for Python, brace matching for
//! braced languages), notebook code cells, and line groups for everything
//! left over. Leaves cover every non-blank line exactly once.

use serde::{Deserialize, Serialize};

use crate::backend::schema::{self, GroupItem, GroupLinesPayload, LineGroups, NumberedLine};
use crate::backend::{GenerationBackend, PromptRequest, TaskId};
use crate::digest::{sha256_fields, sha256_hex, short};
use crate::ingest::{LanguageHint, SourceFile};

mod braced;
mod notebook;
mod python;

pub use crate::text::estimate_tokens;
pub use notebook::{parse_notebook, NotebookCellSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    File,
    Class,
    Function,
    NotebookCell,
    LineGroup,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [Self::File, Self::Class, Self::Function, Self::NotebookCell, Self::LineGroup];

    pub fn is_leaf(self) -> bool {
        self != Self::File
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub id: String,
    pub rel_path: String,
    pub kind: BlockKind,
    pub start_line: usize,
    pub end_line: usize,
    pub content: String,
    pub content_digest: String,
    pub token_estimate: usize,
    pub parent_id: Option<String>,
    pub cell_index: Option<usize>,
}

impl CodeBlock {
    pub fn new(rel_path: &str, kind: BlockKind, start_line: usize, end_line: usize, content: String) -> Self {
        let content_digest = sha256_hex(&content);
        let id = block_id(rel_path, start_line, end_line, &content_digest);
        Self {
            id,
            rel_path: rel_path.to_string(),
            kind,
            start_line,
            end_line,
            token_estimate: estimate_tokens(&content),
            content,
            content_digest,
            parent_id: None,
            cell_index: None,
        }
    }

    pub fn line_count(&self) -> usize {
        self.end_line + 1 - self.start_line
    }

    /// `path:start-end`, as shown in reports.
    pub fn location(&self) -> String {
        format!("{}:{}-{}", self.rel_path, self.start_line, self.end_line)
    }
}

/// Short digest of `(rel_path, start, end, content_digest)`.
pub fn block_id(rel_path: &str, start_line: usize, end_line: usize, content_digest: &str) -> String {
    short(&sha256_fields([rel_path, &start_line.to_string(), &end_line.to_string(), content_digest]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub blank_gap: usize,
    pub min_group_lines: usize,
    pub max_group_lines: usize,
    pub llm_grouping: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { blank_gap: 2, min_group_lines: 3, max_group_lines: 80, llm_grouping: false }
    }
}

/// 1-based inclusive line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

/// A top-level class or function found by a structural scanner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Structural {
    pub kind: BlockKind,
    pub range: LineRange,
}

pub(crate) fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

fn join_lines(lines: &[&str], range: LineRange) -> String {
    lines[range.start - 1..range.end].join("\n")
}

/// Segments one file. Returns the blocks (File parent first, then leaves in
/// line order) and any warnings.
pub fn segment_file(
    file: &SourceFile,
    content: &str,
    cfg: &SegmentConfig,
    backend: Option<&dyn GenerationBackend>,
) -> (Vec<CodeBlock>, Vec<String>) {
    let mut warnings = Vec::new();
    if content.trim().is_empty() {
        return (Vec::new(), warnings);
    }
    if file.language_hint == LanguageHint::Notebook {
        match parse_notebook(content) {
            Ok(cells) => return (notebook::segment_cells(&file.rel_path, &cells), warnings),
            Err(e) => warnings.push(format!("{}: notebook parse error ({e}); segmented as plain text", file.rel_path)),
        }
    }
    let lines: Vec<&str> = content.lines().collect();
    let structural = match file.language_hint {
        LanguageHint::Python => python::scan(&lines),
        LanguageHint::GenericBraced => braced::scan(&lines, braced::hash_comments(&file.rel_path)),
        _ => Vec::new(),
    };
    let (mut blocks, group_warnings) = assemble(&file.rel_path, &lines, &structural, cfg, backend);
    warnings.extend(group_warnings);
    let file_block = CodeBlock::new(&file.rel_path, BlockKind::File, 1, lines.len(), lines.join("\n"));
    for b in &mut blocks {
        b.parent_id = Some(file_block.id.clone());
    }
    blocks.insert(0, file_block);
    (blocks, warnings)
}

/// Turns structural spans plus grouped residual lines into leaf blocks.
pub(crate) fn assemble(
    rel_path: &str,
    lines: &[&str],
    structural: &[Structural],
    cfg: &SegmentConfig,
    backend: Option<&dyn GenerationBackend>,
) -> (Vec<CodeBlock>, Vec<String>) {
    let mut regions = Vec::new();
    let mut cursor = 1;
    for s in structural {
        if s.range.start > cursor {
            regions.push(LineRange { start: cursor, end: s.range.start - 1 });
        }
        cursor = s.range.end + 1;
    }
    if cursor <= lines.len() {
        regions.push(LineRange { start: cursor, end: lines.len() });
    }
    let (groups, warnings) = group_lines(rel_path, lines, &regions, cfg, backend);
    let mut blocks: Vec<CodeBlock> = structural
        .iter()
        .map(|s| CodeBlock::new(rel_path, s.kind, s.range.start, s.range.end, join_lines(lines, s.range)))
        .chain(groups)
        .collect();
    blocks.sort_by_key(|b| b.start_line);
    (blocks, warnings)
}

/// Groups residual top-level lines into `LineGroup` blocks, one region at a
/// time. With `llm_grouping` and a backend, the backend's proposal is used
/// when it partitions the region's non-blank lines; otherwise the
/// deterministic rule applies and a warning is recorded.
pub fn group_lines(
    rel_path: &str,
    lines: &[&str],
    regions: &[LineRange],
    cfg: &SegmentConfig,
    backend: Option<&dyn GenerationBackend>,
) -> (Vec<CodeBlock>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut blocks = Vec::new();
    for region in regions {
        let numbered: Vec<NumberedLine> =
            (region.start..=region.end).map(|n| NumberedLine { line: n, text: lines[n - 1].to_string() }).collect();
        if numbered.iter().all(|l| is_blank(&l.text)) {
            continue;
        }
        let payload = GroupLinesPayload {
            lines: numbered,
            blank_gap: cfg.blank_gap,
            min_group_lines: cfg.min_group_lines,
            max_group_lines: cfg.max_group_lines,
        };
        let deterministic = || deterministic_groups(&payload);
        let ranges = match backend.filter(|_| cfg.llm_grouping) {
            None => deterministic(),
            Some(backend) => match propose_groups(backend, &payload) {
                Ok(groups) => match validate_partition(&payload.lines, &groups) {
                    Ok(ranges) => ranges,
                    Err(why) => {
                        warnings.push(format!(
                            "{rel_path}:{}-{}: proposed line groups rejected ({why}); using deterministic grouping",
                            region.start, region.end
                        ));
                        deterministic()
                    }
                },
                Err(e) => {
                    warnings.push(format!(
                        "{rel_path}:{}-{}: line grouping request failed ({e}); using deterministic grouping",
                        region.start, region.end
                    ));
                    deterministic()
                }
            },
        };
        blocks.extend(
            ranges
                .into_iter()
                .map(|r| CodeBlock::new(rel_path, BlockKind::LineGroup, r.start, r.end, join_lines(lines, r))),
        );
    }
    (blocks, warnings)
}

fn propose_groups(
    backend: &dyn GenerationBackend,
    payload: &GroupLinesPayload,
) -> Result<Vec<GroupItem>, crate::backend::BackendError> {
    let value = serde_json::to_value(payload).expect("payload serializes");
    let budget = backend.descriptor().context_budget_tokens;
    let request = PromptRequest::build(TaskId::GroupLines, value, 1024, budget);
    let response = backend.generate(&request)?;
    Ok(schema::decode::<LineGroups>(&response.parsed).groups)
}

/// Accepts proposed groups only if they are ascending, non-overlapping,
/// inside the region, and cover every non-blank line. Groups are trimmed to
/// their non-blank extent; all-blank groups are dropped.
fn validate_partition(lines: &[NumberedLine], groups: &[GroupItem]) -> Result<Vec<LineRange>, String> {
    let first = lines.first().map_or(0, |l| l.line);
    let last = lines.last().map_or(0, |l| l.line);
    let blank = |n: usize| is_blank(&lines[n - first].text);
    let mut out = Vec::new();
    let mut prev_end = first.saturating_sub(1);
    for g in groups {
        if g.start_line > g.end_line {
            return Err(format!("group {}-{} is reversed", g.start_line, g.end_line));
        }
        if g.start_line < first || g.end_line > last {
            return Err(format!("group {}-{} lies outside lines {first}-{last}", g.start_line, g.end_line));
        }
        if g.start_line <= prev_end {
            return Err(format!("group {}-{} overlaps or is out of order", g.start_line, g.end_line));
        }
        prev_end = g.end_line;
        let start = (g.start_line..=g.end_line).find(|&n| !blank(n));
        let end = (g.start_line..=g.end_line).rev().find(|&n| !blank(n));
        if let (Some(start), Some(end)) = (start, end) {
            out.push(LineRange { start, end });
        }
    }
    let covered: usize = out.iter().map(|r| (r.start..=r.end).filter(|&n| !blank(n)).count()).sum();
    let needed = lines.iter().filter(|l| !is_blank(&l.text)).count();
    if covered != needed {
        return Err(format!("groups cover {covered} of {needed} non-blank lines"));
    }
    Ok(out)
}

/// The lexical backend's answer to a grouping request.
pub fn lexical_groups(payload: &GroupLinesPayload) -> Vec<GroupItem> {
    deterministic_groups(payload).into_iter().map(|r| GroupItem { start_line: r.start, end_line: r.end }).collect()
}

/// Splits at runs of at least `blank_gap` blank lines, merges groups shorter
/// than `min_group_lines` into a neighbour, then splits groups longer than
/// `max_group_lines` at the last blank line that keeps the piece within the
/// limit (or hard at the limit when there is none).
pub fn deterministic_groups(payload: &GroupLinesPayload) -> Vec<LineRange> {
    let lines = &payload.lines;
    let Some(first) = lines.first().map(|l| l.line) else { return Vec::new() };
    let blank = |n: usize| is_blank(&lines[n - first].text);

    let mut groups: Vec<LineRange> = Vec::new();
    let mut current: Option<LineRange> = None;
    let mut blank_run = 0;
    for l in lines {
        if is_blank(&l.text) {
            blank_run += 1;
            continue;
        }
        match current.as_mut() {
            Some(g) if blank_run < payload.blank_gap.max(1) => g.end = l.line,
            _ => {
                if let Some(g) = current.take() {
                    groups.push(g);
                }
                current = Some(LineRange { start: l.line, end: l.line });
            }
        }
        blank_run = 0;
    }
    groups.extend(current);

    let len = |r: &LineRange| r.end + 1 - r.start;
    let mut merged: Vec<LineRange> = Vec::with_capacity(groups.len());
    for g in groups {
        match merged.last_mut() {
            Some(last) if len(last) < payload.min_group_lines => last.end = g.end,
            _ => merged.push(g),
        }
    }
    if merged.len() > 1 && len(merged.last().unwrap()) < payload.min_group_lines {
        let tail = merged.pop().unwrap();
        merged.last_mut().unwrap().end = tail.end;
    }

    let max = payload.max_group_lines.max(1);
    let mut out = Vec::with_capacity(merged.len());
    for g in merged {
        let mut start = g.start;
        while g.end + 1 - start > max {
            let limit = start + max - 1;
            let cut = (start + 1..=limit + 1).rev().find(|&n| blank(n));
            let (piece_end, next) = match cut {
                Some(b) => (b - 1, b + 1),
                None => (limit, limit + 1),
            };
            let piece_end = (start..=piece_end).rev().find(|&n| !blank(n)).unwrap_or(start);
            out.push(LineRange { start, end: piece_end });
            start = (next..=g.end).find(|&n| !blank(n)).unwrap_or(g.end + 1);
            if start > g.end {
                break;
            }
        }
        if start <= g.end {
            out.push(LineRange { start, end: g.end });
        }
    }
    out
}
