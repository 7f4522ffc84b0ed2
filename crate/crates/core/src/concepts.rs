//! Research concept extraction with verifiable anchor quotes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::schema::{self, ConceptItem, ConceptList, ConceptsPayload};
use crate::backend::{parallel_map, BackendError, GenerationBackend, PromptRequest, TaskId};
use crate::ingest::{detect_sections, PaperDocument, SectionSpan};
use crate::text::{char_slice, first_sentence, jaccard, normalize, normalize_with_map, token_set};

/// Name token-set Jaccard at or above which two concepts merge.
pub const DEDUP_JACCARD: f64 = 0.8;
/// Share of a window, in percent, repeated at the start of the next one.
pub const WINDOW_OVERLAP_PERCENT: usize = 10;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("no research concepts were extracted; the trace map would be empty")]
    NoConcepts,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptCategory {
    DataPreprocessing,
    Experiment,
    Calculation,
    Method,
    Result,
    Problem,
    Insight,
    Claim,
    Other,
}

impl ConceptCategory {
    /// Lenient parse: case, separators and plurals are ignored.
    pub fn parse(raw: &str) -> Option<Self> {
        let key: String = raw.trim().to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect();
        let key = key.strip_suffix('s').unwrap_or(&key);
        Some(match key {
            "datapreprocessing" | "preprocessing" => Self::DataPreprocessing,
            "experiment" => Self::Experiment,
            "calculation" => Self::Calculation,
            "method" => Self::Method,
            "result" => Self::Result,
            "problem" => Self::Problem,
            "insight" => Self::Insight,
            "claim" => Self::Claim,
            "other" => Self::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub quote: String,
    pub span: Option<(usize, usize)>,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchConcept {
    pub id: String,
    pub name: String,
    pub description: String,
    pub category: ConceptCategory,
    pub anchor_quote: String,
    /// Char offsets `[start, end)` into the paper text.
    pub anchor_span: Option<(usize, usize)>,
    pub anchor_verified: bool,
    /// Anchors of concepts merged into this one, in merge order.
    pub alternate_anchors: Vec<Anchor>,
}

/// Normalized paper text plus the map back to original char offsets.
pub struct AnchorIndex {
    normalized: String,
    map: Vec<usize>,
}

impl AnchorIndex {
    pub fn new(text: &str) -> Self {
        let (normalized, map) = normalize_with_map(text);
        Self { normalized, map }
    }

    /// Span of the first occurrence of `quote` after whitespace collapsing
    /// and case folding.
    pub fn locate(&self, quote: &str) -> Option<(usize, usize)> {
        let needle = normalize(quote);
        if needle.is_empty() {
            return None;
        }
        let byte = self.normalized.find(&needle)?;
        let first = self.normalized[..byte].chars().count();
        let len = needle.chars().count();
        Some((self.map[first], self.map[first + len - 1] + 1))
    }
}

/// Whether slicing `text` at `span` reproduces `quote` after normalization.
pub fn anchor_is_sound(text: &str, quote: &str, span: (usize, usize)) -> bool {
    normalize(&char_slice(text, span.0, span.1)) == normalize(quote)
}

/// Lexical rule: one concept per section heading; the description is the
/// first sentence of the section body and the heading is the anchor.
pub fn lexical_concepts(text: &str) -> Vec<ConceptItem> {
    let chars: Vec<char> = text.chars().collect();
    detect_sections(text)
        .into_iter()
        .map(|span| {
            let section: String = chars[span.start..span.end].iter().collect();
            let body = section.split_once('\n').map_or("", |(_, rest)| rest);
            let sentence = first_sentence(body);
            ConceptItem {
                name: span.heading.clone(),
                description: if sentence.is_empty() { span.heading.clone() } else { sentence },
                category: "other".to_string(),
                anchor_quote: span.heading,
            }
        })
        .collect()
}

/// Splits a paper into windows of at most `window_chars` chars, cutting at
/// section starts when possible (else at a line break, else hard), with each
/// window starting 10% of the previous window's length before its end.
pub fn plan_windows(text: &str, sections: &[SectionSpan], window_chars: usize) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let total = chars.len();
    let window = window_chars.max(1);
    let boundaries: BTreeSet<usize> = sections.iter().map(|s| s.start).chain([0, total]).collect();
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if total - start <= window {
            out.push((start, total));
            break;
        }
        let limit = start + window;
        let end = boundaries
            .range(start + 1..=limit)
            .next_back()
            .copied()
            .or_else(|| (start + 1..=limit).rev().find(|&i| chars[i - 1] == '\n'))
            .unwrap_or(limit);
        out.push((start, end));
        let overlap = (end - start) * WINDOW_OVERLAP_PERCENT / 100;
        start = end - overlap;
    }
    out
}

/// Merges concepts whose names overlap strongly. The earlier concept keeps
/// its id, name, category and primary anchor; it takes the longer
/// description and collects the later concept's anchors as alternates.
pub fn dedup_concepts(list: Vec<ResearchConcept>) -> Vec<ResearchConcept> {
    let mut out: Vec<(BTreeSet<String>, ResearchConcept)> = Vec::new();
    for concept in list {
        let tokens = token_set(&concept.name);
        match out.iter_mut().find(|(t, _)| jaccard(t, &tokens) >= DEDUP_JACCARD) {
            Some((_, keep)) => {
                if concept.description.chars().count() > keep.description.chars().count() {
                    keep.description = concept.description.clone();
                }
                let incoming = std::iter::once(Anchor {
                    quote: concept.anchor_quote.clone(),
                    span: concept.anchor_span,
                    verified: concept.anchor_verified,
                })
                .chain(concept.alternate_anchors);
                for anchor in incoming {
                    let known = anchor.quote == keep.anchor_quote
                        || keep.alternate_anchors.iter().any(|a| a.quote == anchor.quote);
                    if !known {
                        keep.alternate_anchors.push(anchor);
                    }
                }
            }
            None => out.push((tokens, concept)),
        }
    }
    out.into_iter().map(|(_, c)| c).collect()
}

/// Extracts concepts with one request, or one request per window when the
/// paper does not fit `window_tokens`. Anchors are verified against the full
/// paper text; ids come out dense as `C1..Cn`.
pub fn extract_concepts(
    paper: &PaperDocument,
    backend: &dyn GenerationBackend,
    window_tokens: usize,
) -> Result<(Vec<ResearchConcept>, Vec<String>), ConceptError> {
    let mut warnings = Vec::new();
    let framing = crate::backend::prompts::render_user(
        TaskId::ExtractConcepts,
        &serde_json::to_value(ConceptsPayload { offset: 0, text: String::new() }).expect("payload serializes"),
    )
    .chars()
    .count();
    let window_chars = (window_tokens * 4).saturating_sub(framing).max(1);
    let windows = plan_windows(&paper.text, &paper.section_spans, window_chars);
    if windows.len() > 1 {
        warnings.push(format!("paper split into {} overlapping windows for concept extraction", windows.len()));
    }
    let budget = backend.descriptor().context_budget_tokens;
    let replies = parallel_map(&windows, backend.descriptor().parallelism, |_, &(start, end)| {
        let payload = ConceptsPayload { offset: start, text: char_slice(&paper.text, start, end) };
        let request = PromptRequest::build(
            TaskId::ExtractConcepts,
            serde_json::to_value(payload).expect("payload serializes"),
            4096,
            budget,
        );
        backend.generate(&request).map(|r| schema::decode::<ConceptList>(&r.parsed).concepts)
    });

    let index = AnchorIndex::new(&paper.text);
    let mut concepts = Vec::new();
    for reply in replies {
        for item in reply? {
            let category = ConceptCategory::parse(&item.category).unwrap_or_else(|| {
                warnings.push(format!("concept {:?}: unknown category {:?}, using other", item.name, item.category));
                ConceptCategory::Other
            });
            let span = index.locate(&item.anchor_quote);
            concepts.push(ResearchConcept {
                id: format!("C{}", concepts.len() + 1),
                name: item.name.trim().to_string(),
                description: item.description.trim().to_string(),
                category,
                anchor_quote: item.anchor_quote,
                anchor_span: span,
                anchor_verified: span.is_some(),
                alternate_anchors: Vec::new(),
            });
        }
    }
    let mut concepts = dedup_concepts(concepts);
    if concepts.is_empty() {
        return Err(ConceptError::NoConcepts);
    }
    for (i, c) in concepts.iter_mut().enumerate() {
        c.id = format!("C{}", i + 1);
        if !c.anchor_verified {
            warnings.push(format!("concept {} ({}): anchor quote not found in the paper text", c.id, c.name));
        }
    }
    Ok((concepts, warnings))
}
