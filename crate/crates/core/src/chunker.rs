//! Packs leaf blocks into chunks that fit one summarization request.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::CodeBlock;
use crate::text::estimate_tokens;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk budget {budget} must exceed the prompt reserve {reserve}")]
    InvalidBudget { budget: usize, reserve: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub block_ids: Vec<String>,
    pub token_estimate: usize,
    pub oversized: bool,
    /// Lines cut from the single member of an oversized chunk.
    pub truncated_lines: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub budget: usize,
    pub prompt_reserve: usize,
    pub overhead_per_block: usize,
    pub respect_file_boundaries: bool,
}

pub const DEFAULT_PROMPT_RESERVE_FRACTION: f64 = 0.25;
pub const DEFAULT_OVERHEAD_PER_BLOCK: usize = 24;

impl ChunkPlan {
    /// Reserve rounded up so the effective budget is never overstated.
    pub fn with_fraction(budget: usize, reserve_fraction: f64, overhead_per_block: usize) -> Self {
        let prompt_reserve = (budget as f64 * reserve_fraction).ceil() as usize;
        Self { budget, prompt_reserve, overhead_per_block, respect_file_boundaries: false }
    }

    pub fn effective_budget(&self) -> usize {
        self.budget.saturating_sub(self.prompt_reserve)
    }
}

pub fn truncation_marker(dropped: usize) -> String {
    format!("…[truncated {dropped} lines]")
}

/// Content of a block with its last `dropped` lines replaced by the marker.
pub fn truncated_content(content: &str, dropped: usize) -> String {
    let lines: Vec<&str> = content.lines().collect();
    let kept = lines.len().saturating_sub(dropped);
    let mut out = lines[..kept].join("\n");
    if kept > 0 {
        out.push('\n');
    }
    out.push_str(&truncation_marker(dropped));
    out
}

/// Number of trailing lines to drop so that the truncated content (marker
/// included) estimates at most `max_tokens`. Drops everything if nothing fits.
pub fn lines_to_drop(content: &str, max_tokens: usize) -> usize {
    let lines: Vec<&str> = content.lines().collect();
    let total = lines.len();
    let mut prefix = vec![0usize; total + 1];
    for (i, l) in lines.iter().enumerate() {
        prefix[i + 1] = prefix[i] + l.chars().count();
    }
    for kept in (0..total).rev() {
        let dropped = total - kept;
        let body = if kept == 0 { 0 } else { prefix[kept] + kept };
        let chars = body + truncation_marker(dropped).chars().count();
        if chars.div_ceil(4) <= max_tokens {
            return dropped;
        }
    }
    total
}

/// First-fit, order-preserving packing. A block that alone exceeds the
/// effective budget gets its own chunk, marked oversized and truncated at a
/// line boundary.
pub fn pack_chunks(blocks: &[&CodeBlock], plan: &ChunkPlan) -> Result<Vec<Chunk>, ChunkError> {
    if plan.budget <= plan.prompt_reserve {
        return Err(ChunkError::InvalidBudget { budget: plan.budget, reserve: plan.prompt_reserve });
    }
    let effective = plan.effective_budget();
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current: Option<(Chunk, &str)> = None;
    let close = |chunks: &mut Vec<Chunk>, c: Option<(Chunk, &str)>| {
        if let Some((mut chunk, _)) = c {
            chunk.index = chunks.len();
            chunks.push(chunk);
        }
    };
    for block in blocks {
        let cost = block.token_estimate + plan.overhead_per_block;
        if cost > effective {
            close(&mut chunks, current.take());
            let dropped = lines_to_drop(&block.content, effective.saturating_sub(plan.overhead_per_block));
            let estimate = estimate_tokens(&truncated_content(&block.content, dropped)) + plan.overhead_per_block;
            close(
                &mut chunks,
                Some((
                    Chunk {
                        index: 0,
                        block_ids: vec![block.id.clone()],
                        token_estimate: estimate,
                        oversized: true,
                        truncated_lines: Some(dropped),
                    },
                    &block.rel_path,
                )),
            );
            continue;
        }
        let fits = current.as_ref().is_some_and(|(c, path)| {
            c.token_estimate + cost <= effective && (!plan.respect_file_boundaries || *path == block.rel_path)
        });
        if !fits {
            close(&mut chunks, current.take());
            current = Some((
                Chunk { index: 0, block_ids: Vec::new(), token_estimate: 0, oversized: false, truncated_lines: None },
                &block.rel_path,
            ));
        }
        let (chunk, _) = current.as_mut().expect("current chunk exists");
        chunk.block_ids.push(block.id.clone());
        chunk.token_estimate += cost;
    }
    close(&mut chunks, current.take());
    Ok(chunks)
}
