//! Brute-force recount of metrics.json from the sibling artifacts, reading
//! only raw JSON so it shares no code with the library's metric pass.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde_json::{json, Value};

fn array<'a>(v: &'a Value, key: &str) -> &'a Vec<Value> {
    v[key].as_array().unwrap_or_else(|| panic!("{key} is an array"))
}

fn chars_to_tokens(s: &str) -> u64 {
    let n = s.chars().count() as u64;
    n.div_ceil(4)
}

pub fn recount(dir: &Path) -> Value {
    let read = |name: &str| super::read_value(dir, name);
    let blocks = read("blocks.json");
    let chunks = read("chunks.json");
    let nlr = read("nlr.json");
    let concepts = read("concepts.json");
    let tracemap = read("tracemap.json");

    let mut kinds: HashMap<String, u64> = HashMap::new();
    let mut code_tokens = 0u64;
    for b in array(&blocks, "blocks") {
        let kind = b["kind"].as_str().unwrap().to_string();
        if kind != "File" {
            code_tokens += chars_to_tokens(b["content"].as_str().unwrap());
        }
        *kinds.entry(kind).or_default() += 1;
    }
    let kind = |k: &str| kinds.get(k).copied().unwrap_or(0);
    let summary_tokens: u64 =
        array(&nlr, "summaries").iter().map(|s| chars_to_tokens(s["summary_text"].as_str().unwrap())).sum();
    let links = array(&tracemap, "links");
    let pairs: usize = links.iter().map(|l| l["block_ids"].as_array().unwrap().len()).sum();
    let linked: BTreeSet<&str> = links.iter().map(|l| l["concept_id"].as_str().unwrap()).collect();
    let avg = if linked.is_empty() { 0.0 } else { pairs as f64 / linked.len() as f64 };
    let concept_list = array(&concepts, "concepts");
    json!({
        "schema_version": 1,
        "n_files": array(&blocks, "files").len(),
        "n_blocks": {
            "total": array(&blocks, "blocks").len(),
            "file": kind("File"),
            "class": kind("Class"),
            "function": kind("Function"),
            "notebook_cell": kind("NotebookCell"),
            "line_group": kind("LineGroup"),
        },
        "n_chunks": array(&chunks, "chunks").len(),
        "n_oversized_chunks": array(&chunks, "chunks").iter().filter(|c| c["oversized"] == json!(true)).count(),
        "n_concepts": concept_list.len(),
        "n_anchor_verified": concept_list.iter().filter(|c| c["anchor_verified"] == json!(true)).count(),
        "n_links": links.len(),
        "n_link_pairs": pairs,
        "n_unimplemented_concepts": array(&tracemap, "unimplemented_concepts").len(),
        "n_unmapped_blocks": array(&tracemap, "unmapped_blocks").len(),
        "avg_blocks_per_linked_concept": avg,
        "total_summary_token_estimate": summary_tokens,
        "total_code_token_estimate": code_tokens,
        "compression_ratio": if code_tokens > 0 { json!(summary_tokens as f64 / code_tokens as f64) } else { Value::Null },
    })
}

/// Orphan sets recomputed from the links alone.
pub fn orphans(dir: &Path) -> (Vec<String>, Vec<String>) {
    let blocks = super::read_value(dir, "blocks.json");
    let concepts = super::read_value(dir, "concepts.json");
    let tracemap = super::read_value(dir, "tracemap.json");
    let min_lines = tracemap["essential_min_lines"].as_u64().unwrap();
    let links = array(&tracemap, "links");
    let linked_concepts: BTreeSet<&str> = links.iter().map(|l| l["concept_id"].as_str().unwrap()).collect();
    let linked_blocks: BTreeSet<&str> =
        links.iter().flat_map(|l| l["block_ids"].as_array().unwrap().iter().map(|b| b.as_str().unwrap())).collect();
    let unimplemented = array(&concepts, "concepts")
        .iter()
        .map(|c| c["id"].as_str().unwrap())
        .filter(|id| !linked_concepts.contains(id))
        .map(String::from)
        .collect();
    let unmapped = array(&blocks, "blocks")
        .iter()
        .filter(|b| b["kind"] != json!("File"))
        .filter(|b| !linked_blocks.contains(b["id"].as_str().unwrap()))
        .filter(|b| b["end_line"].as_u64().unwrap() + 1 - b["start_line"].as_u64().unwrap() >= min_lines)
        .map(|b| b["id"].as_str().unwrap().to_string())
        .collect();
    (unimplemented, unmapped)
}
