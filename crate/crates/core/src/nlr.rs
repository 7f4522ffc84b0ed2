//! Natural-language representations (NLRs) of leaf code blocks.
//!
//! One summarization request goes out per chunk. Summaries are cached on
//! disk, keyed by the block's content digest, the prompt digest, the model
//! and the block id, so an unchanged repository costs zero requests on rerun.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::prompts;
use crate::backend::schema::{self, BlockInput, SummarizePayload, SummaryBatch, SummaryItem};
use crate::backend::{parallel_map, BackendError, GenerationBackend, PromptRequest, TaskId};
use crate::chunker::{truncated_content, Chunk};
use crate::digest::sha256_fields;
use crate::ingest::LanguageHint;
use crate::segment::CodeBlock;
use crate::text::{estimate_tokens, truncate_chars};

pub const DEFAULT_MAX_SUMMARY_TOKENS: usize = 120;
pub const PLACEHOLDER_INTENT: &str = "NO-SUMMARY-RETURNED";
const MAX_DEPENDENCIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlrSummary {
    pub block_id: String,
    pub intent: String,
    pub inputs: String,
    pub outputs: String,
    pub depends_on: String,
    pub summary_text: String,
    pub model_id: String,
    pub prompt_digest: String,
    pub source_digest: String,
    /// True when the backend never returned a summary for this block.
    pub placeholder: bool,
}

fn render(intent: &str, inputs: &str, outputs: &str, depends_on: &str) -> String {
    format!("{intent} | inputs: {inputs} | outputs: {outputs} | depends on: {depends_on}")
}

/// Shrinks the longest field until the rendered summary fits `max_tokens`.
fn fit_fields(mut fields: [String; 4], max_tokens: usize) -> [String; 4] {
    let max_chars = max_tokens * 4;
    loop {
        let rendered = render(&fields[0], &fields[1], &fields[2], &fields[3]);
        let len = rendered.chars().count();
        if len <= max_chars {
            return fields;
        }
        let (longest, size) = fields
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f.chars().count()))
            .max_by_key(|&(i, n)| (n, std::cmp::Reverse(i)))
            .expect("four fields");
        if size == 0 {
            return fields;
        }
        let target = size.saturating_sub(len - max_chars).max(if size > 1 { 1 } else { 0 });
        let next = truncate_chars(&fields[longest], target);
        if next.chars().count() >= size {
            fields[longest] = String::new();
        } else {
            fields[longest] = next;
        }
    }
}

impl NlrSummary {
    pub fn new(item: &SummaryItem, block: &CodeBlock, model_id: &str, prompt_digest: &str, max_tokens: usize) -> Self {
        let clean = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        let [intent, inputs, outputs, depends_on] = fit_fields(
            [clean(&item.intent), clean(&item.inputs), clean(&item.outputs), clean(&item.depends_on)],
            max_tokens,
        );
        Self {
            block_id: block.id.clone(),
            summary_text: render(&intent, &inputs, &outputs, &depends_on),
            intent,
            inputs,
            outputs,
            depends_on,
            model_id: model_id.to_string(),
            prompt_digest: prompt_digest.to_string(),
            source_digest: block.content_digest.clone(),
            placeholder: false,
        }
    }

    pub fn placeholder(block: &CodeBlock, model_id: &str, prompt_digest: &str) -> Self {
        let item = SummaryItem {
            block_id: block.id.clone(),
            intent: PLACEHOLDER_INTENT.to_string(),
            inputs: String::new(),
            outputs: String::new(),
            depends_on: String::new(),
        };
        Self { placeholder: true, ..Self::new(&item, block, model_id, prompt_digest, DEFAULT_MAX_SUMMARY_TOKENS) }
    }
}

// ---- lexical rule ----

const KEYWORDS: &[&str] = &[
    "if", "elif", "else", "while", "for", "foreach", "switch", "case", "catch", "return", "sizeof", "typeof", "not",
    "and", "or", "in", "is", "lambda", "assert", "with", "except", "yield", "await", "new", "delete", "def", "class",
    "fn", "function", "func", "match", "try", "super", "async", "from", "import",
];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn comment_text(line: &str, language: LanguageHint) -> Option<String> {
    let t = line.trim();
    let body = if language == LanguageHint::GenericBraced {
        if let Some(r) = t.strip_prefix("//") {
            r.trim_start_matches('/').trim_start_matches('!')
        } else if let Some(r) = t.strip_prefix("/*") {
            r.trim_start_matches('*').trim_end_matches("*/")
        } else if let Some(r) = t.strip_prefix('*') {
            r.trim_end_matches("*/").trim_end_matches('/')
        } else {
            t.strip_prefix('#').filter(|r| r.starts_with([' ', '\t', '\'', '#']))?.trim_start_matches(['#', '\''])
        }
    } else {
        let r = t.strip_prefix('#')?;
        if r.starts_with('!') || r.contains("-*-") {
            return None;
        }
        r.trim_start_matches('#')
    };
    let body = body.trim();
    body.chars().any(char::is_alphanumeric).then(|| body.to_string())
}

fn docstring_text(lines: &[&str], i: usize) -> Option<String> {
    let t = lines[i].trim().trim_start_matches(['r', 'R', 'u', 'U', 'b', 'B', 'f', 'F']);
    let quote = ["\"\"\"", "'''"].into_iter().find(|q| t.starts_with(q))?;
    let rest = t[3..].trim();
    let rest = rest.split(quote).next().unwrap_or("").trim();
    if rest.chars().any(char::is_alphanumeric) {
        return Some(rest.to_string());
    }
    lines[i + 1..]
        .iter()
        .map(|l| l.trim())
        .take_while(|l| !l.starts_with(quote))
        .find(|l| l.chars().any(char::is_alphanumeric))
        .map(|l| l.split(quote).next().unwrap_or(l).trim().to_string())
}

fn first_comment(content: &str, language: LanguageHint) -> Option<String> {
    let lines: Vec<&str> = content.lines().collect();
    (0..lines.len()).find_map(|i| {
        comment_text(lines[i], language)
            .or_else(|| (language != LanguageHint::GenericBraced).then(|| docstring_text(&lines, i)).flatten())
    })
}

/// Removes string literal contents and trailing comments from one line.
fn code_only(line: &str, language: LanguageHint) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' && language != LanguageHint::GenericBraced {
            break;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            break;
        }
        if c == '"' || c == '\'' {
            out.push_str("\"\"");
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Position of an assignment operator (`=`, `+=`, `<-`, ...) that is not a
/// comparison, plus the length of the operator's prefix.
fn assignment_split(code: &str) -> Option<usize> {
    let bytes = code.as_bytes();
    if let Some(p) = code.find("<-") {
        if !code[..p].contains('=') {
            return Some(p);
        }
    }
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'=' {
            continue;
        }
        let prev = i.checked_sub(1).map(|j| bytes[j]);
        let next = bytes.get(i + 1).copied();
        if matches!(next, Some(b'=') | Some(b'>')) || matches!(prev, Some(b'=') | Some(b'!') | Some(b'<') | Some(b'>'))
        {
            continue;
        }
        let mut start = i;
        while start > 0 && b"+-*/%&|^:@".contains(&bytes[start - 1]) {
            start -= 1;
        }
        // walrus and annotated assignments keep the name before ':'
        return Some(start);
    }
    None
}

const DECL_WORDS: &[&str] =
    &["let", "mut", "const", "var", "val", "auto", "final", "static", "global", "nonlocal", "local", "my", "our"];

/// Names bound by an assignment line, or `None` if the line is not one.
fn bound_names(line: &str, language: LanguageHint) -> Option<Vec<String>> {
    let code = code_only(line, language);
    let split = assignment_split(&code)?;
    let lhs = code[..split].trim();
    if lhs.is_empty() || lhs.contains(['(', '"', '{']) {
        return None;
    }
    let first_word: String = lhs.chars().take_while(|c| is_ident_char(*c)).collect();
    if KEYWORDS.contains(&first_word.as_str()) {
        return None;
    }
    let names: Vec<String> = lhs
        .split(',')
        .filter_map(|part| {
            let part = part.split(':').next().unwrap_or(part);
            let part = part.split('[').next().unwrap_or(part);
            part.split_whitespace()
                .map(|w| w.trim_matches(|c: char| !(is_ident_char(c) || c == '.')))
                .rfind(|w| !w.is_empty() && !DECL_WORDS.contains(w))
                .map(str::to_string)
        })
        .filter(|n| n.starts_with(is_ident_start))
        .collect();
    (!names.is_empty()).then_some(names)
}

fn called_names(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if is_ident_start(chars[i]) && (i == 0 || !(is_ident_char(chars[i - 1]) || chars[i - 1] == '.')) {
            let start = i;
            while i < chars.len() && (is_ident_char(chars[i]) || chars[i] == '.') {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect::<String>().trim_end_matches('.').to_string();
            let mut j = i;
            while j < chars.len() && chars[j] == ' ' {
                j += 1;
            }
            if chars.get(j) == Some(&'(') {
                out.push(name);
            }
            continue;
        }
        i += 1;
    }
    out
}

fn defined_names(content: &str, language: LanguageHint) -> HashSet<String> {
    let mut defined = HashSet::new();
    for line in content.lines() {
        let code = code_only(line, language);
        let words: Vec<&str> = code.split(|c: char| !is_ident_char(c)).filter(|w| !w.is_empty()).collect();
        for pair in words.windows(2) {
            if matches!(pair[0], "def" | "class" | "fn" | "function" | "func" | "struct") {
                defined.insert(pair[1].to_string());
            }
        }
        if let Some(names) = bound_names(line, language) {
            for n in names {
                defined.insert(n.split('.').next().unwrap_or(&n).to_string());
                defined.insert(n);
            }
        }
    }
    defined
}

/// Deterministic summary of one block:
/// intent from the first comment or docstring line (else a location phrase),
/// inputs and outputs from the names bound on the first and last assignment
/// lines, and dependencies from called identifiers the block does not define.
pub fn lexical_summary(block: &BlockInput) -> SummaryItem {
    let lang = block.language;
    let intent = first_comment(&block.content, lang)
        .unwrap_or_else(|| format!("code block in {} lines {}-{}", block.rel_path, block.start_line, block.end_line));
    let assignments: Vec<Vec<String>> = block.content.lines().filter_map(|l| bound_names(l, lang)).collect();
    let names = |v: Option<&Vec<String>>| v.map_or_else(|| "none".to_string(), |n| n.join(", "));
    let defined = defined_names(&block.content, lang);
    let mut seen = HashSet::new();
    let deps: Vec<String> = block
        .content
        .lines()
        .flat_map(|l| called_names(&code_only(l, lang)))
        .filter(|n| {
            let root = n.split('.').next().unwrap_or(n);
            !KEYWORDS.contains(&n.as_str()) && !defined.contains(n) && !defined.contains(root)
        })
        .filter(|n| seen.insert(n.clone()))
        .take(MAX_DEPENDENCIES)
        .collect();
    SummaryItem {
        block_id: block.block_id.clone(),
        intent,
        inputs: names(assignments.first()),
        outputs: names(assignments.last()),
        depends_on: if deps.is_empty() { "none".to_string() } else { deps.join(", ") },
    }
}

// ---- requests ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlrConfig {
    pub max_summary_tokens: usize,
}

impl Default for NlrConfig {
    fn default() -> Self {
        Self { max_summary_tokens: DEFAULT_MAX_SUMMARY_TOKENS }
    }
}

fn block_input(block: &CodeBlock, language: LanguageHint, truncated_lines: Option<usize>) -> BlockInput {
    BlockInput {
        block_id: block.id.clone(),
        rel_path: block.rel_path.clone(),
        start_line: block.start_line,
        end_line: block.end_line,
        language,
        content: match truncated_lines {
            Some(n) => truncated_content(&block.content, n),
            None => block.content.clone(),
        },
    }
}

fn request_summaries(
    inputs: Vec<BlockInput>,
    backend: &dyn GenerationBackend,
    cfg: &NlrConfig,
) -> Result<Vec<SummaryItem>, BackendError> {
    let cap = inputs.len() * (cfg.max_summary_tokens + 32);
    let payload = serde_json::to_value(SummarizePayload { blocks: inputs }).expect("payload serializes");
    let request = PromptRequest::build(TaskId::Summarize, payload, cap, backend.descriptor().context_budget_tokens);
    let response = backend.generate(&request)?;
    Ok(schema::decode::<SummaryBatch>(&response.parsed).summaries)
}

/// Summarizes the member blocks of one chunk with one request (plus at most
/// one re-ask for ids the reply left out). Results follow member order.
pub fn summarize_chunk(
    chunk: &Chunk,
    members: &[&CodeBlock],
    languages: &HashMap<String, LanguageHint>,
    backend: &dyn GenerationBackend,
    cfg: &NlrConfig,
) -> Result<(Vec<NlrSummary>, Vec<String>), BackendError> {
    let mut warnings = Vec::new();
    let prompt_digest = prompts::template(TaskId::Summarize).digest();
    let model_id = backend.descriptor().model_id.clone();
    let lang = |b: &CodeBlock| languages.get(&b.rel_path).copied().unwrap_or(LanguageHint::Unknown);
    let inputs: Vec<BlockInput> = members
        .iter()
        .map(|b| block_input(b, lang(b), if chunk.oversized { chunk.truncated_lines } else { None }))
        .collect();

    let wanted: HashSet<&str> = members.iter().map(|b| b.id.as_str()).collect();
    let mut got: BTreeMap<String, SummaryItem> = BTreeMap::new();
    let absorb = |items: Vec<SummaryItem>, got: &mut BTreeMap<String, SummaryItem>, warnings: &mut Vec<String>| {
        for item in items {
            if !wanted.contains(item.block_id.as_str()) {
                warnings.push(format!("chunk {}: dropped summary for unknown block {}", chunk.index, item.block_id));
            } else if got.contains_key(&item.block_id) {
                warnings.push(format!("chunk {}: dropped duplicate summary for block {}", chunk.index, item.block_id));
            } else {
                got.insert(item.block_id.clone(), item);
            }
        }
    };
    absorb(request_summaries(inputs.clone(), backend, cfg)?, &mut got, &mut warnings);

    let missing: Vec<BlockInput> = inputs.iter().filter(|i| !got.contains_key(&i.block_id)).cloned().collect();
    if !missing.is_empty() {
        absorb(request_summaries(missing, backend, cfg)?, &mut got, &mut warnings);
    }

    let summaries = members
        .iter()
        .map(|b| match got.get(&b.id) {
            Some(item) => NlrSummary::new(item, b, &model_id, &prompt_digest, cfg.max_summary_tokens),
            None => {
                warnings.push(format!("block {} ({}): no summary returned; placeholder recorded", b.id, b.location()));
                NlrSummary::placeholder(b, &model_id, &prompt_digest)
            }
        })
        .collect();
    Ok((summaries, warnings))
}

// ---- cache ----

/// On-disk content-addressed summary store: one JSON file per key digest.
#[derive(Debug, Clone)]
pub struct NlrCache {
    dir: PathBuf,
}

pub fn cache_key(source_digest: &str, prompt_digest: &str, model_id: &str, block_id: &str) -> String {
    sha256_fields([source_digest, prompt_digest, model_id, block_id])
}

impl NlrCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A hit only counts if the stored summary still describes `block` under
    /// the same prompt and model; anything unreadable is a miss with a warning.
    pub fn get(&self, block: &CodeBlock, prompt_digest: &str, model_id: &str) -> (Option<NlrSummary>, Option<String>) {
        let key = cache_key(&block.content_digest, prompt_digest, model_id, &block.id);
        let path = self.path(&key);
        let Ok(bytes) = fs::read(&path) else { return (None, None) };
        match serde_json::from_slice::<NlrSummary>(&bytes) {
            Ok(s)
                if s.source_digest == block.content_digest
                    && s.prompt_digest == prompt_digest
                    && s.model_id == model_id
                    && s.block_id == block.id =>
            {
                (Some(s), None)
            }
            Ok(_) => (None, Some(format!("cache entry {key} does not match block {}; regenerated", block.id))),
            Err(_) => (None, Some(format!("cache entry {key} is corrupted; regenerated"))),
        }
    }

    /// Atomic: written to a temp file in the cache directory, then renamed.
    pub fn put(&self, summary: &NlrSummary) -> std::io::Result<()> {
        let key = cache_key(&summary.source_digest, &summary.prompt_digest, &summary.model_id, &summary.block_id);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec(summary).expect("summary serializes"))?;
        tmp.persist(self.path(&key)).map_err(|e| e.error)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct NlrOutcome {
    /// One summary per leaf block, in leaf order.
    pub summaries: Vec<NlrSummary>,
    pub warnings: Vec<String>,
    pub cache_hits: usize,
    pub generated: usize,
}

/// Summarizes every leaf block chunk by chunk. Cached blocks are skipped;
/// a chunk whose members all hit the cache sends no request.
pub fn summarize_blocks(
    leaves: &[&CodeBlock],
    chunks: &[Chunk],
    languages: &HashMap<String, LanguageHint>,
    backend: &dyn GenerationBackend,
    cache: Option<&NlrCache>,
    cfg: &NlrConfig,
) -> Result<NlrOutcome, BackendError> {
    let by_id: HashMap<&str, &CodeBlock> = leaves.iter().map(|b| (b.id.as_str(), *b)).collect();
    let prompt_digest = prompts::template(TaskId::Summarize).digest();
    let model_id = backend.descriptor().model_id.clone();

    struct ChunkResult {
        summaries: Vec<NlrSummary>,
        warnings: Vec<String>,
        hits: usize,
        generated: usize,
    }

    let results =
        parallel_map(chunks, backend.descriptor().parallelism, |_, chunk| -> Result<ChunkResult, BackendError> {
            let members: Vec<&CodeBlock> =
                chunk.block_ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
            let mut warnings = Vec::new();
            let mut cached: HashMap<String, NlrSummary> = HashMap::new();
            if let Some(cache) = cache {
                for b in &members {
                    let (hit, warning) = cache.get(b, &prompt_digest, &model_id);
                    warnings.extend(warning);
                    if let Some(s) = hit {
                        cached.insert(b.id.clone(), s);
                    }
                }
            }
            let misses: Vec<&CodeBlock> = members.iter().copied().filter(|b| !cached.contains_key(&b.id)).collect();
            let hits = cached.len();
            let mut fresh: HashMap<String, NlrSummary> = HashMap::new();
            if !misses.is_empty() {
                let (summaries, w) = summarize_chunk(chunk, &misses, languages, backend, cfg)?;
                warnings.extend(w);
                for s in summaries {
                    if let (Some(cache), false) = (cache, s.placeholder) {
                        if let Err(e) = cache.put(&s) {
                            warnings.push(format!("could not write cache entry for block {}: {e}", s.block_id));
                        }
                    }
                    fresh.insert(s.block_id.clone(), s);
                }
            }
            let generated = fresh.len();
            let summaries =
                members.iter().filter_map(|b| cached.remove(&b.id).or_else(|| fresh.remove(&b.id))).collect();
            Ok(ChunkResult { summaries, warnings, hits, generated })
        });

    let mut by_block: HashMap<String, NlrSummary> = HashMap::new();
    let mut outcome = NlrOutcome::default();
    for r in results {
        let r = r?;
        outcome.warnings.extend(r.warnings);
        outcome.cache_hits += r.hits;
        outcome.generated += r.generated;
        for s in r.summaries {
            by_block.insert(s.block_id.clone(), s);
        }
    }
    outcome.summaries = leaves.iter().filter_map(|b| by_block.remove(&b.id)).collect();
    Ok(outcome)
}

/// Total estimated tokens of all summary texts.
pub fn total_summary_tokens(summaries: &[NlrSummary]) -> usize {
    summaries.iter().map(|s| estimate_tokens(&s.summary_text)).sum()
}
