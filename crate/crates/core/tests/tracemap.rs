mod common;

use papertrace::backend::schema::LinkItem;
use papertrace::text::token_set;
use papertrace::tracemap::{validate_trace_map, MapConfig, RawTraceMap};
use proptest::prelude::*;

#[test]
fn fixture_map_is_closed_and_partitions_concepts() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = common::fixture_bundle(tmp.path());
    common::check_trace_map(&bundle.tracemap.map, &bundle.concepts.concepts, &bundle.blocks.blocks).unwrap();
    let (unimplemented, unmapped) = common::oracle::orphans(tmp.path());
    assert_eq!(bundle.tracemap.map.unimplemented_concepts, unimplemented);
    assert_eq!(bundle.tracemap.map.unmapped_blocks, unmapped);
    // the plasticity section has no code behind it
    let c5 = bundle.concepts.concepts.iter().find(|c| c.name.contains("plasticity")).unwrap();
    assert_eq!(unimplemented, std::slice::from_ref(&c5.id));
}

#[test]
fn firing_rate_concept_links_the_rate_function() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = common::fixture_bundle(tmp.path());
    let concept = bundle.concepts.concepts.iter().find(|c| c.name == "Mean firing rate calculation").unwrap();
    let block = bundle
        .blocks
        .blocks
        .iter()
        .find(|b| b.rel_path == "analysis.py" && b.start_line == 1 && b.kind.is_leaf())
        .unwrap();
    let summary = bundle.nlr.summaries.iter().find(|s| s.block_id == block.id).unwrap();

    // Jaccard by hand, from the raw strings
    let a = token_set(&format!("{} {}", concept.name, concept.description));
    let mut b = token_set(&summary.summary_text);
    b.extend(token_set(&block.rel_path));
    let shared = a.iter().filter(|t| b.contains(*t)).count() as f64;
    let union = a.len() as f64 + b.len() as f64 - shared;
    let score = shared / union;
    assert!(score >= 0.1, "score {score}");

    let link = bundle.tracemap.map.links.iter().find(|l| l.concept_id == concept.id).unwrap();
    assert!(link.block_ids.contains(&block.id));
}

#[test]
fn forced_batches_match_single_request() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = common::fixture_bundle(tmp.path());
    let single = common::remap(&bundle, &MapConfig::default());
    let batched = common::remap(&bundle, &MapConfig { force_batches: Some(2), ..MapConfig::default() });
    assert_eq!(common::link_pairs(&single), common::link_pairs(&batched));
    assert!(batched.warnings.iter().any(|w| w.contains("2 batches")));
}

#[test]
fn budget_split_unions_links_of_one_concept() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = common::fixture_bundle(tmp.path());
    // a window far smaller than the full request forces budget batching
    let small = MapConfig { window_tokens: 700, ..MapConfig::default() };
    let batched = common::remap(&bundle, &small);
    assert!(batched.warnings.iter().any(|w| w.contains("batches")), "{:?}", batched.warnings);
    let single = common::remap(&bundle, &MapConfig::default());
    assert_eq!(common::link_pairs(&single), common::link_pairs(&batched));
    // some concept is linked to blocks from different batches, yet has one link
    assert!(batched.links.iter().any(|l| l.block_ids.len() > 1));
    let ids: Vec<&str> = batched.links.iter().map(|l| l.concept_id.as_str()).collect();
    let mut dedup = ids.clone();
    dedup.dedup();
    assert_eq!(ids, dedup);
}

#[test]
fn raising_the_threshold_never_adds_links() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = common::fixture_bundle(tmp.path());
    let mut previous: Option<Vec<(String, String, f64)>> = None;
    for t in [0.05, 0.1, 0.15, 0.2, 0.3, 0.5] {
        let pairs =
            common::link_pairs(&common::remap(&bundle, &MapConfig { link_threshold: t, ..MapConfig::default() }));
        if let Some(prev) = &previous {
            let prev_keys: Vec<_> = prev.iter().map(|p| (&p.0, &p.1)).collect();
            assert!(pairs.iter().all(|p| prev_keys.contains(&(&p.0, &p.1))), "threshold {t} added a link");
        }
        previous = Some(pairs);
    }
}

fn raw_link() -> impl Strategy<Value = (usize, Vec<usize>, f64, bool)> {
    (
        0usize..8,
        proptest::collection::vec(0usize..30, 0..6),
        prop_oneof![-2.0f64..3.0, Just(f64::NAN), Just(f64::INFINITY), Just(0.5)],
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fuzzed_raw_maps_validate_to_closed_maps(
        links in proptest::collection::vec(raw_link(), 0..25),
        essential in proptest::option::of(proptest::collection::vec(0usize..30, 0..8)),
    ) {
        let bundle = fixture_once();
        let concepts = &bundle.concepts.concepts;
        let blocks = &bundle.blocks.blocks;
        // indices past the real ids become invalid references
        let concept_id = |i: usize| concepts.get(i).map_or(format!("C{}", 90 + i), |c| c.id.clone());
        let block_id = |i: usize| blocks.get(i).map_or(format!("deadbeef{i:04}"), |b| b.id.clone());
        let raw = RawTraceMap {
            links: links
                .iter()
                .map(|(c, bs, conf, _)| LinkItem {
                    concept_id: concept_id(*c),
                    block_ids: bs.iter().map(|&b| block_id(b)).collect(),
                    rationale: String::new(),
                    confidence: *conf,
                })
                .collect(),
            essential_unmapped: essential.map(|v| v.into_iter().map(block_id).collect()),
            warnings: Vec::new(),
        };
        let map = validate_trace_map(&raw, concepts, blocks, 10);
        let check = common::check_trace_map(&map, concepts, blocks);
        prop_assert!(check.is_ok(), "{:?}", check);
    }
}

fn fixture_once() -> &'static common::Bundle {
    static BUNDLE: std::sync::OnceLock<common::Bundle> = std::sync::OnceLock::new();
    BUNDLE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        common::fixture_bundle(&dir)
    })
}
