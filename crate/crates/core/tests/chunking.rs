mod common;

use papertrace::chunker::{pack_chunks, truncated_content, ChunkPlan};
use papertrace::text::estimate_tokens;
use proptest::prelude::*;

#[test]
fn oversized_block_gets_its_own_truncated_chunk() {
    let blocks = common::sized_blocks(&[(10, 2), (500, 50), (10, 2)]);
    let plan = ChunkPlan::with_fraction(200, 0.25, 8);
    let refs: Vec<_> = blocks.iter().collect();
    let chunks = pack_chunks(&refs, &plan).unwrap();
    common::check_packing(&blocks, &plan, &chunks).unwrap();
    assert_eq!(chunks.len(), 3);
    assert!(chunks[1].oversized);
    let dropped = chunks[1].truncated_lines.unwrap();
    assert!(dropped > 0 && dropped < 50);
    let shown = truncated_content(&blocks[1].content, dropped);
    assert!(shown.ends_with(&format!("…[truncated {dropped} lines]")));
    assert!(estimate_tokens(&shown) + plan.overhead_per_block <= plan.effective_budget());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn packing_invariants_hold(
        sizes in proptest::collection::vec((0usize..400, 1usize..30), 0..60),
        budget in 40usize..2000,
        reserve in 0.05f64..0.6,
        overhead in 0usize..16,
    ) {
        let blocks = common::sized_blocks(&sizes);
        let plan = ChunkPlan::with_fraction(budget, reserve, overhead);
        // room for at least the truncation marker
        prop_assume!(plan.effective_budget() >= overhead + 8);
        let refs: Vec<_> = blocks.iter().collect();
        let chunks = pack_chunks(&refs, &plan).unwrap();
        let check = common::check_packing(&blocks, &plan, &chunks);
        prop_assert!(check.is_ok(), "{:?}", check);
    }
}
