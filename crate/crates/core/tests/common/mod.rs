#![allow(dead_code)]

use std::collections::BTreeSet;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcache::allocator::{greedy_allocate, missing_intervals};
use varcache::engine::{CacheEvent, FlushTarget};
use varcache::metrics::Collector;
use varcache::{
    BlockSizeConfig, DeviceId, Engine, EngineConfig, FileStore, IoEvent, NullStore, ScanRange, WritePolicy, KIB,
};
use varcache_oracle::{coverage_bitmap, min_tiling, scan_range, Op, OracleCache, OracleEvent, RangeRule};

pub const DEV: DeviceId = DeviceId(0);

pub fn rule(mode: ScanRange) -> RangeRule {
    match mode {
        ScanRange::Verbatim => RangeRule::Verbatim,
        ScanRange::Strict => RangeRule::Strict,
    }
}

/// One randomized (config, index, request) case checked against the bitmap
/// scan and the exhaustive tiling search.
pub fn allocator_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let smallest_log = rng.random_range(9..=15u32);
    let m = rng.random_range(1..=5usize);
    let mut exps: BTreeSet<u32> = BTreeSet::from([smallest_log]);
    while exps.len() < m {
        exps.insert(smallest_log + rng.random_range(1..=6u32));
    }
    let sizes: Vec<u64> = exps.iter().map(|e| 1u64 << e).collect();
    let cfg = BlockSizeConfig::new(sizes.clone()).map_err(|e| e.to_string())?;
    let step = cfg.smallest();
    let region = cfg.group_size() * 6;

    let mut resident: Vec<(u64, u64)> = Vec::new();
    for _ in 0..rng.random_range(0..12) {
        let size = sizes[rng.random_range(0..sizes.len())];
        let off = rng.random_range(0..region / size) * size;
        if resident.iter().all(|&(o, s)| off + size <= o || o + s <= off) {
            resident.push((off, size));
        }
    }
    let offset = rng.random_range(0..region);
    let length = if rng.random_bool(0.5) {
        rng.random_range(1..=4 * step)
    } else {
        rng.random_range(1..=region / 2)
    };
    let mode = if rng.random_bool(0.5) { ScanRange::Verbatim } else { ScanRange::Strict };

    let index = |size: u64, off: u64| resident.contains(&(off, size));
    let got = missing_intervals(offset, length, &cfg, &index, mode).map_err(|e| e.to_string())?;
    let (begin, end) = scan_range(offset, length, step, rule(mode));
    let want = coverage_bitmap(&resident, begin, end, step);
    let got_pairs: Vec<(u64, u64)> = got.iter().map(|iv| (iv.begin, iv.end)).collect();
    if got_pairs != want {
        return Err(format!(
            "missing intervals differ: sizes {sizes:?} resident {resident:?} request {offset}+{length} {mode:?}: {got_pairs:?} vs {want:?}"
        ));
    }

    let allocs = greedy_allocate(&got, &cfg);
    for iv in &got {
        let mine: Vec<(u64, u64)> = allocs
            .iter()
            .filter(|a| a.offset >= iv.begin && a.end() <= iv.end)
            .map(|a| (a.offset, a.size))
            .collect();
        let best = min_tiling(iv.begin, iv.end, &sizes).ok_or("no tiling exists")?;
        if mine.len() != best.len() {
            return Err(format!("greedy used {} blocks for {iv:?}, minimum is {}", mine.len(), best.len()));
        }
        let mut cursor = iv.begin;
        for &(off, size) in &mine {
            if off != cursor || off % size != 0 {
                return Err(format!("allocation {off}+{size} does not tile {iv:?}"));
            }
            // Largest fitting self-aligned size at each cursor.
            if let Some(&bigger) = sizes.iter().find(|&&s| s > size && off % s == 0 && off + s <= iv.end) {
                return Err(format!("{size} chosen at {off} where {bigger} fits"));
            }
            cursor += size;
        }
        if cursor != iv.end {
            return Err(format!("tiling of {iv:?} stops at {cursor}"));
        }
    }
    if allocs.iter().map(|a| a.size).sum::<u64>() != got.iter().map(|iv| iv.len()).sum::<u64>() {
        return Err("allocations outside missing intervals".into());
    }
    Ok(())
}

/// Random request stream with enough reuse to produce hits and evictions.
pub fn random_ops(seed: u64, n: usize, block: u64, space_blocks: u64) -> Vec<(Op, u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hot: Vec<u64> = Vec::new();
    (0..n)
        .map(|_| {
            let op = if rng.random_bool(0.6) { Op::Read } else { Op::Write };
            let offset = if !hot.is_empty() && rng.random_bool(0.5) {
                hot[rng.random_range(0..hot.len())] + rng.random_range(0..block)
            } else {
                rng.random_range(0..space_blocks * block)
            };
            let length = match rng.random_range(0..4) {
                0 => rng.random_range(1..=512),
                1 => rng.random_range(1..=block),
                2 => block,
                _ => rng.random_range(1..=3 * block),
            };
            if hot.len() < 64 {
                hot.push(offset / block * block);
            } else {
                let i = rng.random_range(0..hot.len());
                hot[i] = offset / block * block;
            }
            (op, offset, length)
        })
        .collect()
}

fn to_oracle(ev: &CacheEvent) -> Option<OracleEvent> {
    match *ev {
        CacheEvent::Hit { offset, .. } => Some(OracleEvent::Hit(offset)),
        CacheEvent::Miss { offset, .. } => Some(OracleEvent::Miss(offset)),
        CacheEvent::Evict { offset, dirty, .. } => Some(OracleEvent::Evict { offset, dirty }),
        CacheEvent::Replace { .. } => None,
    }
}

/// Single-size engine against the fixed-size LRU oracle: identical event log,
/// byte volumes and hit counters. Returns the number of events compared and a
/// hash of the log.
pub fn fixed_size_equivalence(
    block: u64,
    capacity_blocks: u64,
    write_back: bool,
    mode: ScanRange,
    ops: &[(Op, u64, u64)],
) -> Result<(usize, u64), String> {
    let mut cfg = EngineConfig::new(BlockSizeConfig::fixed(block).unwrap(), capacity_blocks * block);
    cfg.policy = if write_back { WritePolicy::WriteBack } else { WritePolicy::WriteThrough };
    cfg.scan_range = mode;
    cfg.record_events = true;
    let mut engine = Engine::new(cfg, NullStore::new()).map_err(|e| e.to_string())?;
    let mut oracle = OracleCache::new(block, capacity_blocks as usize, write_back);
    oracle.rule = rule(mode);

    let mut compared = 0;
    let mut hasher = DefaultHasher::new();
    for (i, &(op, offset, length)) in ops.iter().enumerate() {
        match op {
            Op::Read => engine.read(DEV, offset, length).map(drop),
            Op::Write => engine.write(DEV, offset, length).map(drop),
        }
        .map_err(|e| format!("op {i}: {e}"))?;
        let want = oracle.access(op, offset, length);
        let got: Vec<OracleEvent> = engine.take_events().iter().filter_map(to_oracle).collect();
        if got != want {
            return Err(format!("op {i} ({op:?} {offset}+{length}): engine {got:?} oracle {want:?}"));
        }
        compared += got.len();
        for ev in got {
            match ev {
                OracleEvent::Hit(o) => (0u8, o, false),
                OracleEvent::Miss(o) => (1, o, false),
                OracleEvent::Evict { offset, dirty } => (2, offset, dirty),
            }
            .hash(&mut hasher);
        }
    }
    engine.flush(FlushTarget::All).map_err(|e| e.to_string())?;
    oracle.flush();

    let s = engine.stats();
    let o = &oracle.counters;
    let pairs = [
        ("write_to_core", s.volumes.write_to_core, o.write_to_core),
        ("read_from_core", s.volumes.read_from_core, o.read_from_core),
        ("write_to_cache", s.volumes.write_to_cache, o.write_to_cache),
        ("read_from_cache", s.volumes.read_from_cache, o.read_from_cache),
        ("read_requests", s.hits.read_requests, o.read_requests),
        ("read_full_hits", s.hits.read_full_hits, o.read_full_hits),
        ("read_hit_bytes", s.hits.read_hit_bytes, o.read_hit_bytes),
        ("write_requests", s.hits.write_requests, o.write_requests),
        ("write_full_hits", s.hits.write_full_hits, o.write_full_hits),
        ("write_hit_bytes", s.hits.write_hit_bytes, o.write_hit_bytes),
    ];
    for (name, got, want) in pairs {
        if got != want {
            return Err(format!("{name}: engine {got} oracle {want}"));
        }
    }
    let resident: Vec<u64> = engine.block_lru_order().iter().map(|b| b.source_offset).collect();
    if resident != oracle.recency_order() {
        return Err("final recency order differs".into());
    }
    Ok((compared, hasher.finish()))
}

/// Random reads and writes through a file-backed engine checked against an
/// in-memory shadow of the device. Returns a checksum of everything read.
pub fn integrity_run(
    dir: &Path,
    policy: WritePolicy,
    seed: u64,
    n: usize,
    space: u64,
) -> Result<u64, String> {
    let sizes = BlockSizeConfig::new(vec![4 * KIB, 8 * KIB, 16 * KIB, 32 * KIB, 64 * KIB]).unwrap();
    let mut cfg = EngineConfig::new(sizes, space / 8);
    cfg.policy = policy;
    cfg.track_data = true;
    cfg.device_extent = Some(space);
    let store = FileStore::new(dir).map_err(|e| e.to_string())?;
    let mut engine = Engine::new(cfg, store).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = vec![0u8; 1 << 20];
    rng.fill_bytes(&mut pool);
    let mut buf = Vec::new();
    let mut checksum = 0u64;
    let devs = [DeviceId(0), DeviceId(1)];
    let mut shadows = [vec![0u8; space as usize], vec![0u8; space as usize]];

    for i in 0..n {
        let d = rng.random_range(0..2usize);
        let len = match rng.random_range(0..3) {
            0 => rng.random_range(1..=4096usize),
            1 => rng.random_range(1..=32 * 1024usize),
            _ => rng.random_range(1..=160 * 1024usize),
        };
        let off = rng.random_range(0..=space as usize - len);
        if rng.random_bool(0.5) {
            let src = rng.random_range(0..=pool.len() - len);
            let data = &pool[src..src + len];
            engine.write_from(devs[d], off as u64, data).map_err(|e| format!("op {i}: {e}"))?;
            shadows[d][off..off + len].copy_from_slice(data);
        } else {
            buf.resize(len, 0);
            engine.read_into(devs[d], off as u64, &mut buf).map_err(|e| format!("op {i}: {e}"))?;
            if buf[..] != shadows[d][off..off + len] {
                return Err(format!("op {i}: read of {off}+{len} on {} differs from shadow", devs[d]));
            }
            checksum = checksum.wrapping_mul(31).wrapping_add(buf.iter().map(|&b| b as u64).sum::<u64>());
        }
        if i % 10_000 == 9_999 {
            engine.validate()?;
        }
    }
    engine.flush(FlushTarget::All).map_err(|e| e.to_string())?;
    let store = engine.into_store();
    for (d, dev) in devs.iter().enumerate() {
        let mut on_disk = std::fs::read(store.device_path(*dev)).unwrap_or_default();
        on_disk.resize(space as usize, 0);
        if on_disk != shadows[d] {
            return Err(format!("backend contents of {dev} differ from shadow after flush"));
        }
    }
    Ok(checksum)
}

/// Replays events on one engine per run and returns its collector.
pub fn replay(sizes: &BlockSizeConfig, capacity: u64, mode: ScanRange, events: &[IoEvent]) -> Collector {
    let mut cfg = EngineConfig::new(sizes.clone(), capacity);
    cfg.scan_range = mode;
    let mut engine = Engine::new(cfg, NullStore::new()).expect("engine config");
    for e in events {
        engine.apply(e).expect("replay");
    }
    engine.into_stats()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
