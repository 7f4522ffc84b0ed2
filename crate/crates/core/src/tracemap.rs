//! Concept-to-code trace map: building, validation and orphan sets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backend::schema::{self, ConceptInput, LinkItem, MapPayload, SummaryInput, TraceLinks};
use crate::backend::{parallel_map, BackendError, GenerationBackend, PromptRequest, TaskId};
use crate::concepts::ResearchConcept;
use crate::nlr::NlrSummary;
use crate::segment::CodeBlock;
use crate::text::{estimate_tokens, jaccard, token_set};

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.1;
pub const DEFAULT_ESSENTIAL_MIN_LINES: usize = 10;
/// Lexical confidence is `min(1, CONFIDENCE_SCALE * score)`.
pub const CONFIDENCE_SCALE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLink {
    pub concept_id: String,
    pub block_ids: Vec<String>,
    pub rationale: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawTraceMap {
    pub links: Vec<LinkItem>,
    pub essential_unmapped: Option<Vec<String>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMap {
    pub links: Vec<TraceLink>,
    pub unimplemented_concepts: Vec<String>,
    pub unmapped_blocks: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub link_threshold: f64,
    pub essential_min_lines: usize,
    /// Token room for the user text of one mapping request.
    pub window_tokens: usize,
    /// Forces this many summary batches regardless of budget.
    pub force_batches: Option<usize>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            link_threshold: DEFAULT_LINK_THRESHOLD,
            essential_min_lines: DEFAULT_ESSENTIAL_MIN_LINES,
            window_tokens: 12_288,
            force_batches: None,
        }
    }
}

fn path_tokens(rel_path: &str) -> BTreeSet<String> {
    token_set(rel_path)
}

/// Lexical rule: Jaccard overlap of the concept's name and description
/// tokens against the block's summary and path tokens. Every concept gets one
/// link holding all blocks scoring at least the threshold; confidence is
/// `min(1, 5 * best score)` and the rationale names three shared tokens,
/// most frequent across the linked blocks first, longer ones breaking ties.
pub fn lexical_links(payload: &MapPayload) -> TraceLinks {
    let block_tokens: Vec<BTreeSet<String>> = payload
        .summaries
        .iter()
        .map(|s| {
            let mut t = token_set(&s.summary_text);
            t.extend(path_tokens(&s.rel_path));
            t
        })
        .collect();
    let mut links = Vec::new();
    for concept in &payload.concepts {
        let ct = token_set(&format!("{} {}", concept.name, concept.description));
        let mut block_ids = Vec::new();
        let mut best = 0.0f64;
        let mut shared: BTreeMap<String, usize> = BTreeMap::new();
        for (summary, bt) in payload.summaries.iter().zip(&block_tokens) {
            let score = jaccard(&ct, bt);
            if score >= payload.link_threshold && score > 0.0 {
                block_ids.push(summary.block_id.clone());
                best = best.max(score);
                for token in ct.intersection(bt) {
                    *shared.entry(token.clone()).or_default() += 1;
                }
            }
        }
        if block_ids.is_empty() {
            continue;
        }
        let mut ranked: Vec<(String, usize)> = shared.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| b.0.len().cmp(&a.0.len())).then_with(|| a.0.cmp(&b.0)));
        let top: Vec<String> = ranked.into_iter().take(3).map(|(t, _)| t).collect();
        links.push(LinkItem {
            concept_id: concept.concept_id.clone(),
            block_ids,
            rationale: format!("shared terms: {}", top.join(", ")),
            confidence: (CONFIDENCE_SCALE * best).min(1.0),
        });
    }
    TraceLinks { links, essential_unmapped: None }
}

fn concept_inputs(concepts: &[ResearchConcept]) -> Vec<ConceptInput> {
    concepts
        .iter()
        .map(|c| ConceptInput { concept_id: c.id.clone(), name: c.name.clone(), description: c.description.clone() })
        .collect()
}

fn summary_inputs(summaries: &[NlrSummary], blocks: &HashMap<&str, &CodeBlock>) -> Vec<SummaryInput> {
    summaries
        .iter()
        .filter_map(|s| {
            let b = blocks.get(s.block_id.as_str())?;
            Some(SummaryInput {
                block_id: s.block_id.clone(),
                rel_path: b.rel_path.clone(),
                start_line: b.start_line,
                end_line: b.end_line,
                summary_text: s.summary_text.clone(),
            })
        })
        .collect()
}

fn payload_tokens(payload: &MapPayload) -> usize {
    estimate_tokens(&crate::backend::prompts::render_user(
        TaskId::MapConcepts,
        &serde_json::to_value(payload).expect("payload serializes"),
    ))
}

/// Splits summaries into consecutive batches whose request fits the window,
/// or into `forced` equal-sized batches.
fn plan_batches(
    concepts: &[ConceptInput],
    summaries: Vec<SummaryInput>,
    cfg: &MapConfig,
) -> Result<Vec<Vec<SummaryInput>>, BackendError> {
    let make = |summaries: Vec<SummaryInput>| MapPayload {
        concepts: concepts.to_vec(),
        summaries,
        link_threshold: cfg.link_threshold,
    };
    if let Some(n) = cfg.force_batches.filter(|n| *n > 1) {
        let size = summaries.len().div_ceil(n).max(1);
        return Ok(summaries.chunks(size).map(<[SummaryInput]>::to_vec).collect());
    }
    let full = make(summaries.clone());
    if payload_tokens(&full) <= cfg.window_tokens {
        return Ok(vec![summaries]);
    }
    let base = payload_tokens(&make(Vec::new()));
    if base >= cfg.window_tokens {
        return Err(BackendError::BudgetExceeded { needed: base, budget: cfg.window_tokens });
    }
    let mut batches: Vec<Vec<SummaryInput>> = Vec::new();
    let mut current: Vec<SummaryInput> = Vec::new();
    let mut used = base;
    for s in summaries {
        let cost = estimate_tokens(&format!(
            "- {} ({}:{}-{}): {}\n",
            s.block_id, s.rel_path, s.start_line, s.end_line, s.summary_text
        ));
        if !current.is_empty() && used + cost > cfg.window_tokens {
            batches.push(std::mem::take(&mut current));
            used = base;
        }
        used += cost;
        current.push(s);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Maps all concepts against all summaries, batching the summaries when one
/// request would not fit. Per-concept links from different batches are
/// unioned; the union keeps the highest confidence and its rationale.
pub fn build_trace_map(
    concepts: &[ResearchConcept],
    summaries: &[NlrSummary],
    blocks: &[CodeBlock],
    backend: &dyn GenerationBackend,
    cfg: &MapConfig,
) -> Result<RawTraceMap, BackendError> {
    let by_id: HashMap<&str, &CodeBlock> = blocks.iter().map(|b| (b.id.as_str(), b)).collect();
    let concept_list = concept_inputs(concepts);
    let batches = plan_batches(&concept_list, summary_inputs(summaries, &by_id), cfg)?;
    let mut warnings = Vec::new();
    if batches.len() > 1 {
        warnings.push(format!("summaries mapped in {} batches against the full concept list", batches.len()));
    }
    let budget = backend.descriptor().context_budget_tokens;
    let replies = parallel_map(&batches, backend.descriptor().parallelism, |_, batch| {
        let payload =
            MapPayload { concepts: concept_list.clone(), summaries: batch.clone(), link_threshold: cfg.link_threshold };
        let request = PromptRequest::build(
            TaskId::MapConcepts,
            serde_json::to_value(payload).expect("payload serializes"),
            4096,
            budget,
        );
        backend.generate(&request).map(|r| schema::decode::<TraceLinks>(&r.parsed))
    });

    let mut merged: BTreeMap<(usize, String), LinkItem> = BTreeMap::new();
    let order: HashMap<&str, usize> = concepts.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut essential: Option<Vec<String>> = None;
    let mut passthrough = Vec::new();
    for reply in replies {
        let reply = reply?;
        if let Some(e) = reply.essential_unmapped {
            essential.get_or_insert_with(Vec::new).extend(e);
        }
        if batches.len() == 1 {
            passthrough.extend(reply.links);
            continue;
        }
        for link in reply.links {
            let key = (order.get(link.concept_id.as_str()).copied().unwrap_or(usize::MAX), link.concept_id.clone());
            match merged.get_mut(&key) {
                Some(existing) => {
                    for id in link.block_ids {
                        if !existing.block_ids.contains(&id) {
                            existing.block_ids.push(id);
                        }
                    }
                    if link.confidence > existing.confidence {
                        existing.confidence = link.confidence;
                        existing.rationale = link.rationale;
                    }
                }
                None => {
                    merged.insert(key, link);
                }
            }
        }
    }
    let links = if batches.len() == 1 { passthrough } else { merged.into_values().collect() };
    Ok(RawTraceMap { links, essential_unmapped: essential, warnings })
}

/// Drops references to unknown concepts or non-leaf/unknown blocks (with a
/// warning naming the id), collapses duplicate pairs into one link per
/// concept keeping the highest confidence, and clamps confidence into [0, 1].
/// Orphan sets are derived from the cleaned links.
pub fn validate_trace_map(
    raw: &RawTraceMap,
    concepts: &[ResearchConcept],
    blocks: &[CodeBlock],
    essential_min_lines: usize,
) -> TraceMap {
    let mut warnings = raw.warnings.clone();
    let concept_order: HashMap<&str, usize> = concepts.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let leaf_order: HashMap<&str, usize> =
        blocks.iter().filter(|b| b.kind.is_leaf()).enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();

    let mut per_concept: BTreeMap<usize, TraceLink> = BTreeMap::new();
    for link in &raw.links {
        let Some(&ci) = concept_order.get(link.concept_id.as_str()) else {
            warnings.push(format!("dropped link to unknown concept {}", link.concept_id));
            continue;
        };
        let mut confidence = link.confidence;
        if !confidence.is_finite() {
            warnings.push(format!("link {}: non-finite confidence replaced by 0", link.concept_id));
            confidence = 0.0;
        } else if !(0.0..=1.0).contains(&confidence) {
            let clamped = confidence.clamp(0.0, 1.0);
            warnings.push(format!("link {}: confidence {confidence} clamped to {clamped}", link.concept_id));
            confidence = clamped;
        }
        let mut ids: Vec<String> = Vec::new();
        for id in &link.block_ids {
            if leaf_order.contains_key(id.as_str()) {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            } else {
                warnings.push(format!("link {}: dropped unknown block {id}", link.concept_id));
            }
        }
        if ids.is_empty() {
            warnings.push(format!("dropped link {} with no valid blocks", link.concept_id));
            continue;
        }
        match per_concept.get_mut(&ci) {
            Some(existing) => {
                for id in ids {
                    if existing.block_ids.contains(&id) {
                        warnings.push(format!("link {}: collapsed duplicate pair with block {id}", link.concept_id));
                    } else {
                        existing.block_ids.push(id);
                    }
                }
                if confidence > existing.confidence {
                    existing.confidence = confidence;
                    existing.rationale = link.rationale.clone();
                }
            }
            None => {
                per_concept.insert(
                    ci,
                    TraceLink {
                        concept_id: link.concept_id.clone(),
                        block_ids: ids,
                        rationale: link.rationale.clone(),
                        confidence,
                    },
                );
            }
        }
    }
    let mut links: Vec<TraceLink> = per_concept.into_values().collect();
    for link in &mut links {
        link.block_ids.sort_by_key(|id| leaf_order[id.as_str()]);
    }

    let essential = raw.essential_unmapped.as_ref().map(|ids| {
        ids.iter()
            .filter(|id| {
                let known = leaf_order.contains_key(id.as_str());
                if !known {
                    warnings.push(format!("essential-unmapped list names unknown block {id}"));
                }
                known
            })
            .cloned()
            .collect::<HashSet<String>>()
    });
    let (unimplemented_concepts, unmapped_blocks) =
        derive_orphans(&links, concepts, blocks, essential_min_lines, essential.as_ref());
    TraceMap { links, unimplemented_concepts, unmapped_blocks, warnings }
}

/// Concepts without links, and leaf blocks without links that look
/// essential: by default any unlinked leaf of at least `essential_min_lines`
/// lines; when the backend supplied its own essential list, the unlinked
/// leaves on that list.
pub fn derive_orphans(
    links: &[TraceLink],
    concepts: &[ResearchConcept],
    blocks: &[CodeBlock],
    essential_min_lines: usize,
    essential: Option<&HashSet<String>>,
) -> (Vec<String>, Vec<String>) {
    let linked_concepts: HashSet<&str> = links.iter().map(|l| l.concept_id.as_str()).collect();
    let linked_blocks: HashSet<&str> = links.iter().flat_map(|l| l.block_ids.iter().map(String::as_str)).collect();
    let unimplemented =
        concepts.iter().filter(|c| !linked_concepts.contains(c.id.as_str())).map(|c| c.id.clone()).collect();
    let unmapped = blocks
        .iter()
        .filter(|b| b.kind.is_leaf() && !linked_blocks.contains(b.id.as_str()))
        .filter(|b| match essential {
            Some(set) => set.contains(&b.id),
            None => b.line_count() >= essential_min_lines,
        })
        .map(|b| b.id.clone())
        .collect();
    (unimplemented, unmapped)
}
