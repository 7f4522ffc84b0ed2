//! Request payloads and reply schemas for each generation task.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SchemaId;

// ---- replies ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryItem {
    pub block_id: String,
    pub intent: String,
    #[serde(default)]
    pub inputs: String,
    #[serde(default)]
    pub outputs: String,
    #[serde(default)]
    pub depends_on: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBatch {
    pub summaries: Vec<SummaryItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptItem {
    pub name: String,
    pub description: String,
    #[serde(default = "default_category")]
    pub category: String,
    pub anchor_quote: String,
}

fn default_category() -> String {
    "other".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptList {
    pub concepts: Vec<ConceptItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkItem {
    pub concept_id: String,
    pub block_ids: Vec<String>,
    #[serde(default)]
    pub rationale: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLinks {
    pub links: Vec<LinkItem>,
    /// Blocks the model considers essential to the research but unmapped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essential_unmapped: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupItem {
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineGroups {
    pub groups: Vec<GroupItem>,
}

fn check<T: DeserializeOwned>(value: &Value) -> Result<T, String> {
    T::deserialize(value).map_err(|e| e.to_string())
}

/// Validates `value` against `schema`. Range and reference checks that the
/// stages repair with warnings (confidence clamping, unknown ids) are left
/// to the stages.
pub fn validate(schema: SchemaId, value: &Value) -> Result<(), String> {
    match schema {
        SchemaId::SummaryBatch => {
            let batch: SummaryBatch = check(value)?;
            if let Some(s) = batch.summaries.iter().find(|s| s.block_id.trim().is_empty()) {
                return Err(format!("summary with empty block_id (intent {:?})", s.intent));
            }
        }
        SchemaId::ConceptList => {
            let list: ConceptList = check(value)?;
            if list.concepts.iter().any(|c| c.name.trim().is_empty()) {
                return Err("concept with empty name".into());
            }
        }
        SchemaId::TraceLinks => {
            let links: TraceLinks = check(value)?;
            if links.links.iter().any(|l| l.block_ids.is_empty()) {
                return Err("link with empty block_ids".into());
            }
        }
        SchemaId::LineGroups => {
            let _: LineGroups = check(value)?;
        }
    }
    Ok(())
}

/// Decodes an already-validated reply.
pub fn decode<T: DeserializeOwned>(value: &Value) -> T {
    T::deserialize(value).expect("reply was validated against its schema")
}

// ---- request payloads ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInput {
    pub block_id: String,
    pub rel_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub language: crate::ingest::LanguageHint,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizePayload {
    pub blocks: Vec<BlockInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptsPayload {
    /// Char offset of `text` within the full paper.
    pub offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptInput {
    pub concept_id: String,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryInput {
    pub block_id: String,
    pub rel_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub summary_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPayload {
    pub concepts: Vec<ConceptInput>,
    pub summaries: Vec<SummaryInput>,
    /// Score threshold used by the lexical rule.
    pub link_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedLine {
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLinesPayload {
    pub lines: Vec<NumberedLine>,
    pub blank_gap: usize,
    pub min_group_lines: usize,
    pub max_group_lines: usize,
}
