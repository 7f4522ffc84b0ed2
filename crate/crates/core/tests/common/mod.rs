#![allow(dead_code)]

pub mod mock;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;

use papertrace::backend::lexical::LexicalBackend;
use papertrace::config::{ConfigLayer, RunConfig};
use papertrace::pipeline::{execute, Command as PipelineCommand, Outcome, PipelineError};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn fixture_repo() -> PathBuf {
    fixtures().join("repo")
}

pub fn fixture_paper() -> PathBuf {
    fixtures().join("paper.md")
}

pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            std::fs::copy(entry.path(), &to).unwrap();
        }
    }
}

pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "user.name=fixture", "-c", "user.email=fixture@example.org", "-c", "commit.gpgsign=false"])
        .args(args)
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .output()
        .expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

/// Copies the fixture repo under `dir` and commits it; returns the path.
pub fn git_fixture(dir: &Path) -> PathBuf {
    let repo = dir.join("repo");
    copy_dir(&fixture_repo(), &repo);
    git(&repo, &["init", "-q", "-b", "main"]);
    git(&repo, &["add", "-A"]);
    git(&repo, &["commit", "-q", "-m", "fixture"]);
    repo
}

pub fn config(repo: &Path, paper: &Path, out: &Path, tweak: impl FnOnce(&mut ConfigLayer)) -> RunConfig {
    let mut layer = ConfigLayer {
        repo: Some(repo.to_string_lossy().into_owned()),
        paper: Some(paper.to_path_buf()),
        out: Some(out.to_path_buf()),
        ..Default::default()
    };
    tweak(&mut layer);
    RunConfig::resolve(layer).expect("valid config")
}

pub fn fixture_config(out: &Path) -> RunConfig {
    config(&fixture_repo(), &fixture_paper(), out, |_| {})
}

pub fn run_lexical(command: PipelineCommand, cfg: &RunConfig) -> Result<Outcome, PipelineError> {
    let backend = LexicalBackend::new(cfg.context_budget_tokens);
    execute(command, cfg, &backend)
}

pub fn read_value(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

/// Line census: every non-blank line of `content` (virtual lines for
/// notebooks) lies in exactly one leaf block, and leaves never overlap.
pub fn census(rel_path: &str, content: &str, cfg: &papertrace::segment::SegmentConfig) -> Result<(), String> {
    use papertrace::ingest::{LanguageHint, SourceFile};
    use papertrace::segment::{parse_notebook, segment_file};
    let hint = LanguageHint::from_path(rel_path);
    let file = SourceFile { rel_path: rel_path.to_string(), byte_len: content.len() as u64, language_hint: hint };
    let (blocks, _) = segment_file(&file, content, cfg, None);
    let lines: Vec<String> = match (hint, parse_notebook(content)) {
        (LanguageHint::Notebook, Ok(cells)) => {
            cells.iter().flat_map(|c| c.source.lines().map(String::from).collect::<Vec<_>>()).collect()
        }
        _ => content.lines().map(String::from).collect(),
    };
    let mut cover = vec![0usize; lines.len() + 1];
    for b in blocks.iter().filter(|b| b.kind.is_leaf()) {
        if b.start_line < 1 || b.end_line > lines.len() || b.start_line > b.end_line {
            return Err(format!("{rel_path}: leaf {}-{} out of range", b.start_line, b.end_line));
        }
        for c in &mut cover[b.start_line..=b.end_line] {
            *c += 1;
        }
    }
    for (i, line) in lines.iter().enumerate() {
        let n = i + 1;
        if cover[n] > 1 {
            return Err(format!("{rel_path}: line {n} in {} leaves", cover[n]));
        }
        if !line.trim().is_empty() && cover[n] != 1 {
            return Err(format!("{rel_path}: non-blank line {n} ({line:?}) not covered"));
        }
    }
    Ok(())
}

/// Synthetic source text from a list of line templates.
pub fn synthetic_source(picks: &[(u8, u8)]) -> String {
    const TEMPLATES: [&str; 16] = [
        "",
        "",
        "   ",
        "def f{n}(a, b):",
        "    return a + {n}",
        "class K{n}:",
        "    x = {n}",
        "# note {n}",
        "x{n} = compute({n})",
        "int g{n}(int v) {",
        "}",
        "  v += {n}; /* { */",
        "@decorator",
        "\"\"\"doc {n}",
        "print(x{n}) \\",
        "if x{n}:",
    ];
    picks
        .iter()
        .map(|(t, n)| TEMPLATES[*t as usize % TEMPLATES.len()].replace("{n}", &n.to_string()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Checks partition, order, budget and first-fit invariants of a packing.
pub fn check_packing(
    blocks: &[papertrace::segment::CodeBlock],
    plan: &papertrace::chunker::ChunkPlan,
    chunks: &[papertrace::chunker::Chunk],
) -> Result<(), String> {
    let effective = plan.effective_budget();
    let cost = |id: &str| {
        let b = blocks.iter().find(|b| b.id == id).unwrap();
        b.token_estimate + plan.overhead_per_block
    };
    let flat: Vec<&str> = chunks.iter().flat_map(|c| c.block_ids.iter().map(String::as_str)).collect();
    let ids: Vec<&str> = blocks.iter().map(|b| b.id.as_str()).collect();
    if flat != ids {
        return Err("chunks are not an order-preserving partition".into());
    }
    for (i, c) in chunks.iter().enumerate() {
        if c.index != i || c.block_ids.is_empty() {
            return Err(format!("chunk {i}: bad index or empty"));
        }
        if c.token_estimate > effective {
            return Err(format!("chunk {i}: estimate {} over budget {effective}", c.token_estimate));
        }
        if c.oversized {
            if c.block_ids.len() != 1 || cost(&c.block_ids[0]) <= effective || c.truncated_lines.is_none() {
                return Err(format!("chunk {i}: malformed oversized chunk"));
            }
        } else {
            let sum: usize = c.block_ids.iter().map(|id| cost(id)).sum();
            if sum != c.token_estimate {
                return Err(format!("chunk {i}: estimate {} != member sum {sum}", c.token_estimate));
            }
        }
        if let Some(next) = chunks.get(i + 1) {
            if !c.oversized && !next.oversized && c.token_estimate + cost(&next.block_ids[0]) <= effective {
                return Err(format!("chunk {}: first block would have fit in chunk {i}", i + 1));
            }
        }
    }
    Ok(())
}

/// Leaf blocks with the given token sizes and line counts.
pub fn sized_blocks(sizes: &[(usize, usize)]) -> Vec<papertrace::segment::CodeBlock> {
    use papertrace::segment::{BlockKind, CodeBlock};
    let mut line = 1;
    sizes
        .iter()
        .enumerate()
        .map(|(i, &(tokens, lines))| {
            let lines = lines.max(1);
            let per_line = (tokens * 4).div_ceil(lines).max(1);
            let content =
                (0..lines).map(|k| format!("{:<width$}", format!("b{i}l{k}"), width = per_line)).collect::<Vec<_>>();
            let b = CodeBlock::new("gen.py", BlockKind::LineGroup, line, line + lines - 1, content.join("\n"));
            line += lines;
            b
        })
        .collect()
}

pub struct Bundle {
    pub blocks: papertrace::report::BlocksArtifact,
    pub nlr: papertrace::report::NlrArtifact,
    pub concepts: papertrace::report::ConceptsArtifact,
    pub tracemap: papertrace::report::TraceMapArtifact,
}

/// Runs the lexical pipeline on the fixture into `out` and reads it back.
pub fn fixture_bundle(out: &Path) -> Bundle {
    use papertrace::report::read_json;
    run_lexical(PipelineCommand::Run, &fixture_config(out)).unwrap();
    Bundle {
        blocks: read_json(out, "blocks.json").unwrap(),
        nlr: read_json(out, "nlr.json").unwrap(),
        concepts: read_json(out, "concepts.json").unwrap(),
        tracemap: read_json(out, "tracemap.json").unwrap(),
    }
}

/// Referential closure, concept partition and link well-formedness.
pub fn check_trace_map(
    map: &papertrace::tracemap::TraceMap,
    concepts: &[papertrace::concepts::ResearchConcept],
    blocks: &[papertrace::segment::CodeBlock],
) -> Result<(), String> {
    use std::collections::BTreeSet;
    let concept_ids: BTreeSet<&str> = concepts.iter().map(|c| c.id.as_str()).collect();
    let leaf_ids: BTreeSet<&str> = blocks.iter().filter(|b| b.kind.is_leaf()).map(|b| b.id.as_str()).collect();
    let mut linked = BTreeSet::new();
    let mut linked_blocks = BTreeSet::new();
    for l in &map.links {
        if !concept_ids.contains(l.concept_id.as_str()) {
            return Err(format!("unknown concept {}", l.concept_id));
        }
        if !linked.insert(l.concept_id.as_str()) {
            return Err(format!("concept {} linked twice", l.concept_id));
        }
        if l.block_ids.is_empty() {
            return Err(format!("link {} has no blocks", l.concept_id));
        }
        let unique: BTreeSet<&str> = l.block_ids.iter().map(String::as_str).collect();
        if unique.len() != l.block_ids.len() {
            return Err(format!("link {} repeats a block", l.concept_id));
        }
        if let Some(bad) = unique.iter().find(|id| !leaf_ids.contains(*id)) {
            return Err(format!("link {} names unknown block {bad}", l.concept_id));
        }
        if !(0.0..=1.0).contains(&l.confidence) {
            return Err(format!("link {} confidence {}", l.concept_id, l.confidence));
        }
        linked_blocks.extend(unique);
    }
    let unimplemented: BTreeSet<&str> = map.unimplemented_concepts.iter().map(String::as_str).collect();
    if unimplemented.len() != map.unimplemented_concepts.len() {
        return Err("duplicate unimplemented concept".into());
    }
    if !linked.is_disjoint(&unimplemented) {
        return Err("a concept is both linked and unimplemented".into());
    }
    if linked.len() + unimplemented.len() != concepts.len() {
        return Err(format!(
            "partition broken: {} linked + {} unimplemented != {} concepts",
            linked.len(),
            unimplemented.len(),
            concepts.len()
        ));
    }
    for id in &map.unmapped_blocks {
        if !leaf_ids.contains(id.as_str()) || linked_blocks.contains(id.as_str()) {
            return Err(format!("unmapped block {id} is unknown or linked"));
        }
    }
    Ok(())
}

/// `(concept, block)` pairs of a map with the link confidence.
pub fn link_pairs(map: &papertrace::tracemap::TraceMap) -> Vec<(String, String, f64)> {
    let mut pairs: Vec<_> = map
        .links
        .iter()
        .flat_map(|l| l.block_ids.iter().map(move |b| (l.concept_id.clone(), b.clone(), l.confidence)))
        .collect();
    pairs.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    pairs
}

/// Maps the fixture bundle with the lexical backend under `cfg`.
pub fn remap(bundle: &Bundle, cfg: &papertrace::tracemap::MapConfig) -> papertrace::tracemap::TraceMap {
    use papertrace::tracemap::{build_trace_map, validate_trace_map};
    let backend = LexicalBackend::new(16_384);
    let raw = build_trace_map(&bundle.concepts.concepts, &bundle.nlr.summaries, &bundle.blocks.blocks, &backend, cfg)
        .unwrap();
    validate_trace_map(&raw, &bundle.concepts.concepts, &bundle.blocks.blocks, cfg.essential_min_lines)
}
