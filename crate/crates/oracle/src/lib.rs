//! Reference models for checking the varcache engine.
//!
//! Everything in here is written for clarity, not speed, and shares no code
//! with the engine: a fixed-size LRU block cache driven one aligned block at a
//! time, a bitmap coverage scan for missing-interval generation, and an
//! exhaustive minimum-count tiling search.

use std::collections::{HashMap, VecDeque};

/// How far past the request end the aligned scan extends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeRule {
    /// `end = floor((offset + length) / B) * B + B`.
    Verbatim,
    /// `end = floor((offset + length - 1) / B) * B + B`.
    Strict,
}

/// Aligned `[begin, end)` covered by a request at granularity `step`.
pub fn scan_range(offset: u64, length: u64, step: u64, rule: RangeRule) -> (u64, u64) {
    let begin = offset / step * step;
    let last = match rule {
        RangeRule::Verbatim => offset + length,
        RangeRule::Strict => offset + length - 1,
    };
    (begin, last / step * step + step)
}

/// Missing runs of `[begin, end)` at `step` granularity, given resident
/// `(offset, size)` blocks of any size.
pub fn coverage_bitmap(resident: &[(u64, u64)], begin: u64, end: u64, step: u64) -> Vec<(u64, u64)> {
    let steps = ((end - begin) / step) as usize;
    let mut covered = vec![false; steps];
    for &(off, size) in resident {
        for (i, c) in covered.iter_mut().enumerate() {
            let addr = begin + i as u64 * step;
            if addr >= off && addr < off + size {
                *c = true;
            }
        }
    }
    let mut runs: Vec<(u64, u64)> = Vec::new();
    for (i, c) in covered.iter().enumerate() {
        if *c {
            continue;
        }
        let addr = begin + i as u64 * step;
        match runs.last_mut() {
            Some(last) if last.1 == addr => last.1 = addr + step,
            _ => runs.push((addr, addr + step)),
        }
    }
    runs
}

/// Tiles `[begin, end)` with self-aligned blocks from `sizes` using the fewest
/// blocks, found by exhaustive search. Returns `(offset, size)` pairs in
/// address order, or `None` if no tiling exists.
pub fn min_tiling(begin: u64, end: u64, sizes: &[u64]) -> Option<Vec<(u64, u64)>> {
    fn search(
        at: u64,
        end: u64,
        sizes: &[u64],
        memo: &mut HashMap<u64, Option<Vec<(u64, u64)>>>,
    ) -> Option<Vec<(u64, u64)>> {
        if at == end {
            return Some(Vec::new());
        }
        if let Some(hit) = memo.get(&at) {
            return hit.clone();
        }
        let mut best: Option<Vec<(u64, u64)>> = None;
        for &s in sizes {
            if !at.is_multiple_of(s) || at + s > end {
                continue;
            }
            if let Some(rest) = search(at + s, end, sizes, memo) {
                let mut cand = vec![(at, s)];
                cand.extend(rest);
                let better = match &best {
                    None => true,
                    Some(b) => cand.len() < b.len() || (cand.len() == b.len() && cand[0].1 > b[0].1),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        memo.insert(at, best.clone());
        best
    }
    search(begin, end, sizes, &mut HashMap::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleEvent {
    Hit(u64),
    Miss(u64),
    Evict { offset: u64, dirty: bool },
}

/// Byte volumes and hit counters, mirroring what the engine reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleCounters {
    pub write_to_core: u64,
    pub read_from_core: u64,
    pub write_to_cache: u64,
    pub read_from_cache: u64,
    pub read_requests: u64,
    pub read_full_hits: u64,
    pub read_hit_bytes: u64,
    pub read_total_bytes: u64,
    pub write_requests: u64,
    pub write_full_hits: u64,
    pub write_hit_bytes: u64,
    pub write_total_bytes: u64,
}

/// Plain fixed-size LRU block cache.
///
/// A request is handled in three passes over its aligned blocks: resident
/// blocks are touched in ascending order, then missing blocks are inserted in
/// ascending order (evicting the least recently used block when full), then
/// every still-resident block of the request is touched again in ascending
/// order.
pub struct OracleCache {
    pub block: u64,
    pub capacity: usize,
    pub write_back: bool,
    pub always_fill: bool,
    pub rule: RangeRule,
    dirty: HashMap<u64, bool>,
    // front = most recently used
    recency: VecDeque<u64>,
    pub counters: OracleCounters,
    pub log: Vec<OracleEvent>,
}

impl OracleCache {
    pub fn new(block: u64, capacity: usize, write_back: bool) -> Self {
        OracleCache {
            block,
            capacity,
            write_back,
            always_fill: false,
            rule: RangeRule::Verbatim,
            dirty: HashMap::new(),
            recency: VecDeque::new(),
            counters: OracleCounters::default(),
            log: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.recency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recency.is_empty()
    }

    pub fn contains(&self, offset: u64) -> bool {
        self.dirty.contains_key(&offset)
    }

    pub fn is_dirty(&self, offset: u64) -> bool {
        self.dirty.get(&offset).copied().unwrap_or(false)
    }

    /// Resident block offsets, most recently used first.
    pub fn recency_order(&self) -> Vec<u64> {
        self.recency.iter().copied().collect()
    }

    fn touch(&mut self, offset: u64) {
        let pos = self.recency.iter().position(|&o| o == offset).unwrap();
        self.recency.remove(pos);
        self.recency.push_front(offset);
    }

    fn overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
        a1.min(b1).saturating_sub(a0.max(b0))
    }

    /// Runs one request and returns the events it produced.
    pub fn access(&mut self, op: Op, offset: u64, length: u64) -> Vec<OracleEvent> {
        let start = self.log.len();
        let req_end = offset + length;
        let (begin, end) = scan_range(offset, length, self.block, self.rule);
        let blocks: Vec<u64> = (begin..end).step_by(self.block as usize).collect();
        let writes_cache = op == Op::Write;
        let dirties = writes_cache && self.write_back;

        let mut all_hit = true;
        let mut hit_bytes = 0;
        for &b in &blocks {
            let ov = Self::overlap(b, b + self.block, offset, req_end);
            if self.contains(b) {
                hit_bytes += ov;
            } else if ov > 0 {
                all_hit = false;
            }
        }
        match op {
            Op::Read => {
                self.counters.read_requests += 1;
                self.counters.read_total_bytes += length;
                self.counters.read_hit_bytes += hit_bytes;
                self.counters.read_full_hits += all_hit as u64;
            }
            Op::Write => {
                self.counters.write_requests += 1;
                self.counters.write_total_bytes += length;
                self.counters.write_hit_bytes += hit_bytes;
                self.counters.write_full_hits += all_hit as u64;
                if !self.write_back {
                    self.counters.write_to_core += length;
                }
            }
        }

        let missing: Vec<u64> = blocks.iter().copied().filter(|b| !self.contains(*b)).collect();
        for &b in &blocks {
            if !self.contains(b) {
                continue;
            }
            let ov = Self::overlap(b, b + self.block, offset, req_end);
            self.log.push(OracleEvent::Hit(b));
            self.touch(b);
            if writes_cache {
                self.counters.write_to_cache += ov;
                if dirties && ov > 0 {
                    self.dirty.insert(b, true);
                }
            } else {
                self.counters.read_from_cache += ov;
            }
        }
        for &b in &missing {
            if self.recency.len() == self.capacity {
                let victim = self.recency.pop_back().unwrap();
                let was_dirty = self.dirty.remove(&victim).unwrap();
                if was_dirty {
                    self.counters.write_to_core += self.block;
                    self.counters.read_from_cache += self.block;
                }
                self.log.push(OracleEvent::Evict { offset: victim, dirty: was_dirty });
            }
            let ov = Self::overlap(b, b + self.block, offset, req_end);
            let fill = if !writes_cache || self.always_fill { self.block } else { self.block - ov };
            self.counters.read_from_core += fill;
            self.counters.write_to_cache += self.block;
            self.recency.push_front(b);
            self.dirty.insert(b, dirties && ov > 0);
            self.log.push(OracleEvent::Miss(b));
        }
        for &b in &blocks {
            if self.contains(b) {
                self.touch(b);
            }
        }
        self.log[start..].to_vec()
    }

    /// Writes back every dirty block; returns bytes written.
    pub fn flush(&mut self) -> u64 {
        let mut bytes = 0;
        for d in self.dirty.values_mut() {
            if *d {
                *d = false;
                bytes += self.block;
            }
        }
        self.counters.write_to_core += bytes;
        self.counters.read_from_cache += bytes;
        bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: u64 = 1024;

    #[test]
    fn lru_evicts_oldest() {
        let mut c = OracleCache::new(32 * K, 2, true);
        c.rule = RangeRule::Strict;
        c.access(Op::Read, 0, 1);
        c.access(Op::Read, 32 * K, 1);
        let ev = c.access(Op::Read, 64 * K, 1);
        assert_eq!(ev, vec![OracleEvent::Evict { offset: 0, dirty: false }, OracleEvent::Miss(64 * K)]);
    }

    #[test]
    fn repeat_access_hits() {
        let mut c = OracleCache::new(32 * K, 2, true);
        c.rule = RangeRule::Strict;
        assert_eq!(c.access(Op::Read, 0, 4 * K), vec![OracleEvent::Miss(0)]);
        assert_eq!(c.access(Op::Read, 0, 4 * K), vec![OracleEvent::Hit(0)]);
    }

    // Every access sequence of length <= 4 over three blocks, capacity 1..=3,
    // checked against the textbook definition: the victim is the block whose
    // last use is oldest.
    #[test]
    fn exhaustive_micro_cases() {
        let blocks = [0u64, 1, 2];
        for cap in 1..=3usize {
            for len in 1..=4u32 {
                for code in 0..3u32.pow(len) {
                    let mut seq = Vec::new();
                    let mut c = code;
                    for _ in 0..len {
                        seq.push(blocks[(c % 3) as usize]);
                        c /= 3;
                    }
                    let mut cache = OracleCache::new(1, cap, true);
                    cache.rule = RangeRule::Strict;
                    let mut last_use: HashMap<u64, usize> = HashMap::new();
                    for (t, &b) in seq.iter().enumerate() {
                        let resident_before: Vec<u64> = cache.recency_order();
                        let ev = cache.access(Op::Read, b, 1);
                        if resident_before.contains(&b) {
                            assert_eq!(ev, vec![OracleEvent::Hit(b)]);
                        } else if resident_before.len() == cap {
                            let victim = *resident_before.iter().min_by_key(|o| last_use[o]).unwrap();
                            assert_eq!(ev, vec![OracleEvent::Evict { offset: victim, dirty: false }, OracleEvent::Miss(b)]);
                        } else {
                            assert_eq!(ev, vec![OracleEvent::Miss(b)]);
                        }
                        last_use.insert(b, t);
                    }
                }
            }
        }
    }

    #[test]
    fn write_back_dirty_and_flush() {
        let mut c = OracleCache::new(32 * K, 1, true);
        c.rule = RangeRule::Strict;
        c.access(Op::Write, 0, 32 * K);
        assert!(c.is_dirty(0));
        assert_eq!(c.counters.read_from_core, 0);
        let ev = c.access(Op::Read, 32 * K, 1);
        assert_eq!(ev[0], OracleEvent::Evict { offset: 0, dirty: true });
        assert_eq!(c.counters.write_to_core, 32 * K);
        assert_eq!(c.flush(), 0);
    }

    #[test]
    fn verbatim_rule_covers_trailing_step() {
        assert_eq!(scan_range(0, 64 * K, 32 * K, RangeRule::Verbatim), (0, 96 * K));
        assert_eq!(scan_range(0, 64 * K, 32 * K, RangeRule::Strict), (0, 64 * K));
        assert_eq!(scan_range(48 * K, 184 * K, 32 * K, RangeRule::Verbatim), (32 * K, 256 * K));
    }

    #[test]
    fn bitmap_runs() {
        let runs = coverage_bitmap(&[(128 * K, 128 * K)], 32 * K, 256 * K, 32 * K);
        assert_eq!(runs, vec![(32 * K, 128 * K)]);
        assert_eq!(coverage_bitmap(&[], 0, 96 * K, 32 * K), vec![(0, 96 * K)]);
        let runs = coverage_bitmap(&[(32 * K, 32 * K)], 0, 128 * K, 32 * K);
        assert_eq!(runs, vec![(0, 32 * K), (64 * K, 128 * K)]);
    }

    #[test]
    fn tiling_examples() {
        let sizes = [32 * K, 64 * K, 128 * K, 256 * K];
        assert_eq!(min_tiling(32 * K, 128 * K, &sizes).unwrap(), vec![(32 * K, 32 * K), (64 * K, 64 * K)]);
        assert_eq!(min_tiling(0, 256 * K, &sizes).unwrap(), vec![(0, 256 * K)]);
        assert_eq!(min_tiling(96 * K, 256 * K, &sizes).unwrap(), vec![(96 * K, 32 * K), (128 * K, 128 * K)]);
    }
}
