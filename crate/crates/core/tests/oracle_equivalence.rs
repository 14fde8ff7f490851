mod common;

use common::{allocator_case, fixed_size_equivalence, random_ops, seeded};
use proptest::prelude::*;
use varcache::{ScanRange, KIB};
use varcache_oracle::Op;

#[test]
fn allocator_matches_bitmap_scan() {
    let mut rng = seeded(11);
    for case in 0..5_000 {
        if let Err(msg) = allocator_case(&mut rng) {
            panic!("case {case}: {msg}");
        }
    }
}

#[test]
fn single_size_engine_matches_lru_oracle() {
    for (i, block) in [4 * KIB, 32 * KIB, 256 * KIB].into_iter().enumerate() {
        for write_back in [true, false] {
            for mode in [ScanRange::Verbatim, ScanRange::Strict] {
                let ops = random_ops(i as u64 * 7 + 1, 3_000, block, 512);
                let (n, _) = fixed_size_equivalence(block, 48, write_back, mode, &ops).unwrap();
                assert!(n > 3_000);
            }
        }
    }
}

#[test]
fn capacity_one_cache() {
    let ops = random_ops(5, 2_000, 32 * KIB, 8);
    fixed_size_equivalence(32 * KIB, 1, true, ScanRange::Strict, &ops).unwrap();
    fixed_size_equivalence(32 * KIB, 1, true, ScanRange::Verbatim, &ops).unwrap();
}

fn op() -> impl Strategy<Value = (Op, u64, u64)> {
    (any::<bool>(), 0u64..64, 0u64..4096, 1u64..100_000)
        .prop_map(|(r, blk, within, len)| (if r { Op::Read } else { Op::Write }, blk * 32 * KIB + within, len))
}

proptest! {
    #[test]
    fn engine_event_log_equals_oracle(
        ops in prop::collection::vec(op(), 1..200),
        cap in 1u64..10,
        write_back in any::<bool>(),
        strict in any::<bool>(),
    ) {
        let mode = if strict { ScanRange::Strict } else { ScanRange::Verbatim };
        if let Err(msg) = fixed_size_equivalence(32 * KIB, cap, write_back, mode, &ops) {
            return Err(TestCaseError::fail(msg));
        }
    }

    #[test]
    fn allocator_cases_from_any_seed(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        for _ in 0..20 {
            if let Err(msg) = allocator_case(&mut rng) {
                return Err(TestCaseError::fail(msg));
            }
        }
    }
}
