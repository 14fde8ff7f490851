//! Missing-interval scan and greedy variable-sized block allocation.
//!
//! Everything here is pure: the functions read an [`IndexView`] and return
//! plans, they never touch cache state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, RequestError};

/// Largest multiple of `block_size` that is `<= offset`.
#[inline]
pub fn align(offset: u64, block_size: u64) -> u64 {
    debug_assert!(block_size > 0);
    offset / block_size * block_size
}

/// Ordered set of supported cache-block sizes. The largest is the group size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct BlockSizeConfig {
    sizes: Vec<u64>,
}

impl BlockSizeConfig {
    /// Accepts sizes in any order; they must be distinct powers of two.
    pub fn new(mut sizes: Vec<u64>) -> Result<Self, ConfigError> {
        if sizes.is_empty() {
            return Err(ConfigError::NoBlockSizes);
        }
        sizes.sort_unstable();
        for w in sizes.windows(2) {
            if w[0] == w[1] {
                return Err(ConfigError::DuplicateBlockSize(w[0]));
            }
        }
        if let Some(&bad) = sizes.iter().find(|s| !s.is_power_of_two()) {
            return Err(ConfigError::NotPowerOfTwo(bad));
        }
        Ok(BlockSizeConfig { sizes })
    }

    /// Single-size configuration, i.e. a conventional fixed-size cache.
    pub fn fixed(size: u64) -> Result<Self, ConfigError> {
        Self::new(vec![size])
    }

    /// Sizes in increasing order.
    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn smallest(&self) -> u64 {
        self.sizes[0]
    }

    pub fn group_size(&self) -> u64 {
        *self.sizes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_fixed(&self) -> bool {
        self.sizes.len() == 1
    }

    pub fn contains(&self, size: u64) -> bool {
        self.index_of(size).is_some()
    }

    /// Position of `size` in the increasing size list.
    pub fn index_of(&self, size: u64) -> Option<usize> {
        self.sizes.binary_search(&size).ok()
    }
}

impl TryFrom<Vec<u64>> for BlockSizeConfig {
    type Error = ConfigError;

    fn try_from(v: Vec<u64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<BlockSizeConfig> for Vec<u64> {
    fn from(c: BlockSizeConfig) -> Self {
        c.sizes
    }
}

impl fmt::Display for BlockSizeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|s| format_bytes(*s)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Renders a byte count with the largest binary suffix that divides it.
pub fn format_bytes(b: u64) -> String {
    const UNITS: [(u64, &str); 4] = [(1 << 40, "T"), (1 << 30, "G"), (1 << 20, "M"), (1 << 10, "K")];
    for (unit, suffix) in UNITS {
        if b >= unit && b.is_multiple_of(unit) {
            return format!("{}{}", b / unit, suffix);
        }
    }
    b.to_string()
}

/// Half-open byte range `[begin, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub begin: u64,
    pub end: u64,
}

impl Interval {
    pub fn new(begin: u64, end: u64) -> Self {
        debug_assert!(begin < end);
        Interval { begin, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.begin >= self.end
    }

    /// Bytes shared with `other`.
    pub fn overlap(&self, other: &Interval) -> u64 {
        self.end.min(other.end).saturating_sub(self.begin.max(other.begin))
    }
}

/// One block to allocate: `size` bytes at the `size`-aligned `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub offset: u64,
    pub size: u64,
}

impl Allocation {
    pub fn end(&self) -> u64 {
        self.offset + self.size
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.offset, self.end())
    }
}

/// Membership query over the per-size block indices.
///
/// Offsets passed in are always aligned to `block_size`.
pub trait IndexView {
    fn contains(&self, block_size: u64, aligned_offset: u64) -> bool;
}

impl<F: Fn(u64, u64) -> bool> IndexView for F {
    fn contains(&self, block_size: u64, aligned_offset: u64) -> bool {
        self(block_size, aligned_offset)
    }
}

/// Where the aligned scan of a request stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanRange {
    /// `align(offset + length) + B_1`: a request ending exactly on a
    /// `B_1` boundary also covers the following step.
    #[default]
    Verbatim,
    /// `align(offset + length - 1) + B_1`: only steps holding request bytes.
    Strict,
}

/// Aligned `[begin, end)` scanned for a request.
pub fn scan_bounds(offset: u64, length: u64, smallest: u64, mode: ScanRange) -> Result<Interval, RequestError> {
    if length == 0 {
        return Err(RequestError::ZeroLength);
    }
    let req_end = offset.checked_add(length).ok_or(RequestError::Overflow { offset, length })?;
    let last = match mode {
        ScanRange::Verbatim => req_end,
        ScanRange::Strict => req_end - 1,
    };
    let end = align(last, smallest)
        .checked_add(smallest)
        .ok_or(RequestError::Overflow { offset, length })?;
    Ok(Interval::new(align(offset, smallest), end))
}

/// Maximal runs of `B_1` steps in the request's scan range that no indexed
/// block of any size covers. Intervals come back sorted and disjoint.
pub fn missing_intervals<I: IndexView + ?Sized>(
    offset: u64,
    length: u64,
    cfg: &BlockSizeConfig,
    index: &I,
    mode: ScanRange,
) -> Result<Vec<Interval>, RequestError> {
    let bounds = scan_bounds(offset, length, cfg.smallest(), mode)?;
    let step = cfg.smallest();
    let mut out: Vec<Interval> = Vec::new();
    let mut cursor = bounds.begin;
    while cursor < bounds.end {
        let covering = cfg.sizes().iter().find_map(|&size| {
            let base = align(cursor, size);
            index.contains(size, base).then_some(base + size)
        });
        match covering {
            // Jump past the resident block; every step inside it is a hit.
            Some(next) => cursor = next,
            None => {
                match out.last_mut() {
                    Some(last) if last.end == cursor => last.end += step,
                    _ => out.push(Interval::new(cursor, cursor + step)),
                }
                cursor += step;
            }
        }
    }
    Ok(out)
}

/// Tiles each interval with the largest self-aligned block that fits at the
/// cursor. Input intervals must be `B_1`-aligned.
pub fn greedy_allocate(intervals: &[Interval], cfg: &BlockSizeConfig) -> Vec<Allocation> {
    let mut out = Vec::new();
    for iv in intervals {
        debug_assert_eq!(iv.begin % cfg.smallest(), 0);
        debug_assert_eq!(iv.end % cfg.smallest(), 0);
        let mut cursor = iv.begin;
        while cursor < iv.end {
            let size = cfg
                .sizes()
                .iter()
                .rev()
                .copied()
                .find(|&b| cursor % b == 0 && b <= iv.end - cursor)
                .expect("B_1-aligned interval always admits the smallest block");
            out.push(Allocation { offset: cursor, size });
            cursor += size;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    const K: u64 = 1024;

    fn paper_cfg() -> BlockSizeConfig {
        BlockSizeConfig::new(vec![32 * K, 64 * K, 128 * K, 256 * K]).unwrap()
    }

    #[derive(Default)]
    struct SetIndex(HashSet<(u64, u64)>);

    impl IndexView for SetIndex {
        fn contains(&self, size: u64, off: u64) -> bool {
            assert_eq!(off % size, 0, "unaligned probe");
            self.0.contains(&(size, off))
        }
    }

    #[test]
    fn align_examples() {
        assert_eq!(align(33 * K, 32 * K), 32 * K);
        assert_eq!(align(0, 64 * K), 0);
        assert_eq!(align(0, 1), 0);
        assert_eq!(align(96 * K, 64 * K), 64 * K);
    }

    #[test]
    fn config_validation() {
        assert_eq!(BlockSizeConfig::new(vec![]), Err(ConfigError::NoBlockSizes));
        assert_eq!(BlockSizeConfig::new(vec![48 * K]), Err(ConfigError::NotPowerOfTwo(48 * K)));
        assert_eq!(BlockSizeConfig::new(vec![32 * K, 32 * K]), Err(ConfigError::DuplicateBlockSize(32 * K)));
        let c = BlockSizeConfig::new(vec![256 * K, 32 * K]).unwrap();
        assert_eq!(c.sizes(), &[32 * K, 256 * K]);
        assert_eq!(c.group_size(), 256 * K);
        assert!(BlockSizeConfig::fixed(64 * K).unwrap().is_fixed());
    }

    #[test]
    fn config_serde_round_trip_validates() {
        let c: BlockSizeConfig = serde_json::from_str("[65536, 32768]").unwrap();
        assert_eq!(c.sizes(), &[32 * K, 64 * K]);
        assert!(serde_json::from_str::<BlockSizeConfig>("[3000]").is_err());
        assert_eq!(serde_json::to_string(&c).unwrap(), "[32768,65536]");
    }

    #[test]
    fn worked_example() {
        let mut idx = SetIndex::default();
        idx.0.insert((128 * K, 128 * K));
        let cfg = paper_cfg();
        let miss = missing_intervals(48 * K, 184 * K, &cfg, &idx, ScanRange::Verbatim).unwrap();
        assert_eq!(miss, vec![Interval::new(32 * K, 128 * K)]);
        let alloc = greedy_allocate(&miss, &cfg);
        assert_eq!(
            alloc,
            vec![Allocation { offset: 32 * K, size: 32 * K }, Allocation { offset: 64 * K, size: 64 * K }]
        );
    }

    #[test]
    fn all_hit_is_empty() {
        let mut idx = SetIndex::default();
        idx.0.insert((256 * K, 0));
        idx.0.insert((256 * K, 256 * K));
        let miss = missing_intervals(4 * K, 300 * K, &paper_cfg(), &idx, ScanRange::Verbatim).unwrap();
        assert!(miss.is_empty());
    }

    #[test]
    fn empty_index_verbatim_covers_extra_step() {
        let cfg = BlockSizeConfig::new(vec![32 * K, 64 * K]).unwrap();
        let idx = SetIndex::default();
        let miss = missing_intervals(0, 64 * K, &cfg, &idx, ScanRange::Verbatim).unwrap();
        assert_eq!(miss, vec![Interval::new(0, 96 * K)]);
        let miss = missing_intervals(0, 64 * K, &cfg, &idx, ScanRange::Strict).unwrap();
        assert_eq!(miss, vec![Interval::new(0, 64 * K)]);
    }

    #[test]
    fn sub_step_request_occupies_one_step() {
        let cfg = paper_cfg();
        let idx = SetIndex::default();
        let miss = missing_intervals(33 * K, 1, &cfg, &idx, ScanRange::Strict).unwrap();
        assert_eq!(miss, vec![Interval::new(32 * K, 64 * K)]);
    }

    #[test]
    fn hit_step_splits_intervals() {
        let cfg = paper_cfg();
        let mut idx = SetIndex::default();
        idx.0.insert((32 * K, 64 * K));
        let miss = missing_intervals(0, 128 * K, &cfg, &idx, ScanRange::Strict).unwrap();
        assert_eq!(miss, vec![Interval::new(0, 64 * K), Interval::new(96 * K, 128 * K)]);
    }

    #[test]
    fn zero_length_rejected() {
        let idx = SetIndex::default();
        assert_eq!(
            missing_intervals(0, 0, &paper_cfg(), &idx, ScanRange::Verbatim),
            Err(RequestError::ZeroLength)
        );
    }

    #[test]
    fn overflow_rejected() {
        let idx = SetIndex::default();
        assert!(matches!(
            missing_intervals(u64::MAX - 10, 100, &paper_cfg(), &idx, ScanRange::Verbatim),
            Err(RequestError::Overflow { .. })
        ));
    }

    #[test]
    fn greedy_examples() {
        let cfg = paper_cfg();
        assert_eq!(
            greedy_allocate(&[Interval::new(0, 256 * K)], &cfg),
            vec![Allocation { offset: 0, size: 256 * K }]
        );
        assert_eq!(
            greedy_allocate(&[Interval::new(96 * K, 256 * K)], &cfg),
            vec![Allocation { offset: 96 * K, size: 32 * K }, Allocation { offset: 128 * K, size: 128 * K }]
        );
    }

    // Larger blocks are reconsidered at every cursor position rather than
    // continuing down the size list after an allocation.
    #[test]
    fn greedy_restarts_from_largest() {
        let cfg = paper_cfg();
        assert_eq!(
            greedy_allocate(&[Interval::new(0, 512 * K)], &cfg),
            vec![Allocation { offset: 0, size: 256 * K }, Allocation { offset: 256 * K, size: 256 * K }]
        );
    }

    #[test]
    fn fixed_config_allocates_every_step() {
        let cfg = BlockSizeConfig::fixed(64 * K).unwrap();
        let idx = SetIndex::default();
        let miss = missing_intervals(10 * K, 150 * K, &cfg, &idx, ScanRange::Strict).unwrap();
        let alloc = greedy_allocate(&miss, &cfg);
        let offsets: Vec<u64> = alloc.iter().map(|a| a.offset).collect();
        assert_eq!(offsets, vec![0, 64 * K, 128 * K]);
        assert!(alloc.iter().all(|a| a.size == 64 * K));
    }

    fn cfg_strategy() -> impl Strategy<Value = BlockSizeConfig> {
        (0u32..3, 1usize..=4).prop_map(|(lo, n)| {
            BlockSizeConfig::new((0..n).map(|i| 1u64 << (lo + i as u32)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn greedy_tiles_exactly(cfg in cfg_strategy(), spans in prop::collection::vec((0u64..6, 1u64..12), 1..6)) {
            let step = cfg.smallest();
            let mut at = 0;
            let mut ivs = Vec::new();
            for (gap, len) in spans {
                let b = at + gap * step + step;
                ivs.push(Interval::new(b, b + len * step));
                at = b + len * step;
            }
            let alloc = greedy_allocate(&ivs, &cfg);
            let mut it = alloc.iter().peekable();
            for iv in &ivs {
                let mut cursor = iv.begin;
                while cursor < iv.end {
                    let a = it.next().unwrap();
                    prop_assert_eq!(a.offset, cursor);
                    prop_assert_eq!(a.offset % a.size, 0);
                    prop_assert!(cfg.contains(a.size));
                    cursor += a.size;
                }
                prop_assert_eq!(cursor, iv.end);
            }
            prop_assert!(it.next().is_none());
        }

        #[test]
        fn scan_is_pure(cfg in cfg_strategy(), off in 0u64..64, len in 1u64..64, marks in prop::collection::vec(any::<bool>(), 16)) {
            let g = cfg.group_size();
            let mut idx = SetIndex::default();
            for (i, m) in marks.iter().enumerate() {
                if *m { idx.0.insert((g, i as u64 * g)); }
            }
            let before = idx.0.clone();
            let a = missing_intervals(off, len, &cfg, &idx, ScanRange::Verbatim).unwrap();
            let b = missing_intervals(off, len, &cfg, &idx, ScanRange::Verbatim).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(before, idx.0);
        }
    }
}
