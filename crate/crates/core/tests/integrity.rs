mod common;

use common::integrity_run;
use varcache::{WritePolicy, MIB};

#[test]
fn write_back_matches_shadow() {
    for seed in [1, 2, 3] {
        let dir = tempfile::tempdir().unwrap();
        integrity_run(dir.path(), WritePolicy::WriteBack, seed, 3_000, 8 * MIB).unwrap();
    }
}

#[test]
fn write_through_matches_shadow() {
    for seed in [4, 5] {
        let dir = tempfile::tempdir().unwrap();
        integrity_run(dir.path(), WritePolicy::WriteThrough, seed, 3_000, 8 * MIB).unwrap();
    }
}

#[test]
fn same_seed_same_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = integrity_run(a.path(), WritePolicy::WriteBack, 9, 1_000, 4 * MIB).unwrap();
    let y = integrity_run(b.path(), WritePolicy::WriteBack, 9, 1_000, 4 * MIB).unwrap();
    assert_eq!(x, y);
}
