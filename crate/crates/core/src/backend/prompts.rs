//! Versioned prompt templates shipped with the tool.
//!
//! Each template is content-addressed: its SHA-256 is recorded in the run
//! manifest and in every summary it produced, so runs with different prompt
//! wording are never confused.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;

use super::schema::{ConceptsPayload, GroupLinesPayload, MapPayload, SummarizePayload};
use super::TaskId;
use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub task: TaskId,
    pub version: &'static str,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn digest(&self) -> String {
        sha256_hex(self.text)
    }
}

const SUMMARIZE: PromptTemplate =
    PromptTemplate { task: TaskId::Summarize, version: "v1", text: include_str!("../../prompts/summarize.v1.txt") };
const EXTRACT_CONCEPTS: PromptTemplate = PromptTemplate {
    task: TaskId::ExtractConcepts,
    version: "v1",
    text: include_str!("../../prompts/extract_concepts.v1.txt"),
};
const MAP_CONCEPTS: PromptTemplate = PromptTemplate {
    task: TaskId::MapConcepts,
    version: "v1",
    text: include_str!("../../prompts/map_concepts.v1.txt"),
};
const GROUP_LINES: PromptTemplate =
    PromptTemplate { task: TaskId::GroupLines, version: "v1", text: include_str!("../../prompts/group_lines.v1.txt") };

pub fn template(task: TaskId) -> PromptTemplate {
    match task {
        TaskId::Summarize => SUMMARIZE,
        TaskId::ExtractConcepts => EXTRACT_CONCEPTS,
        TaskId::MapConcepts => MAP_CONCEPTS,
        TaskId::GroupLines => GROUP_LINES,
    }
}

/// Task name to template digest, for the run manifest.
pub fn digests() -> BTreeMap<String, String> {
    TaskId::ALL.iter().map(|t| (format!("{}.{}", t.as_str(), template(*t).version), template(*t).digest())).collect()
}

/// Header line framing one block in a summarization request.
pub fn block_header(block_id: &str, rel_path: &str, start: usize, end: usize) -> String {
    format!("### block {block_id} | {rel_path}:{start}-{end}\n")
}

/// Renders the user message for `task` from its payload. Payloads that do
/// not decode render as pretty JSON so the request still carries the data.
pub fn render_user(task: TaskId, payload: &Value) -> String {
    let rendered = match task {
        TaskId::Summarize => serde_json::from_value::<SummarizePayload>(payload.clone()).ok().map(|p| {
            let mut out = String::from("Summarize each of the following code blocks.\n\n");
            for b in &p.blocks {
                out.push_str(&block_header(&b.block_id, &b.rel_path, b.start_line, b.end_line));
                out.push_str(&b.content);
                if !b.content.ends_with('\n') {
                    out.push('\n');
                }
                out.push('\n');
            }
            out
        }),
        TaskId::ExtractConcepts => serde_json::from_value::<ConceptsPayload>(payload.clone())
            .ok()
            .map(|p| format!("Paper text:\n\n{}", p.text)),
        TaskId::MapConcepts => serde_json::from_value::<MapPayload>(payload.clone()).ok().map(|p| {
            let mut out = String::from("Research concepts:\n");
            for c in &p.concepts {
                let _ = writeln!(out, "- {}: {}. {}", c.concept_id, c.name, c.description);
            }
            out.push_str("\nCode block summaries:\n");
            for s in &p.summaries {
                let _ = writeln!(
                    out,
                    "- {} ({}:{}-{}): {}",
                    s.block_id, s.rel_path, s.start_line, s.end_line, s.summary_text
                );
            }
            out
        }),
        TaskId::GroupLines => serde_json::from_value::<GroupLinesPayload>(payload.clone()).ok().map(|p| {
            let mut out = String::from("Lines:\n");
            for l in &p.lines {
                let _ = writeln!(out, "{:>5} | {}", l.line, l.text);
            }
            out
        }),
    };
    rendered.unwrap_or_else(|| serde_json::to_string_pretty(payload).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_cover_every_task_and_differ() {
        let d = digests();
        assert_eq!(d.len(), 4);
        let unique: std::collections::BTreeSet<_> = d.values().collect();
        assert_eq!(unique.len(), 4);
        assert!(d.contains_key("summarize.v1"));
    }
}
