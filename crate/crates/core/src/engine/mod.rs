//! Stateful block cache.
//!
//! Physical cache space is carved into groups whose extent equals the largest
//! configured block size. A group holds blocks of exactly one size and is the
//! unit of coarse eviction. At most one group per block size is *open*
//! (the current allocation target).
//!
//! Replacement is two-level. When a block of size `B` is needed and no space
//! is left, the tail of the global block LRU is evicted if it has size `B`
//! and the new block takes its slot; otherwise the whole group at the tail of
//! the group LRU is evicted and its extent is reused for size `B`.
//!
//! A request is served in three passes over the aligned range it covers:
//!
//! 1. resident blocks are served and promoted, in ascending source order;
//! 2. blocks for missing intervals are allocated (possibly replacing) and
//!    installed, in ascending order;
//! 3. every still-resident block of the request is promoted again in
//!    ascending order, leaving the highest-offset block at the LRU head.
//!
//! All backing-store reads and write-through writes for a request happen
//! before the cache is mutated, so a failed fetch installs nothing.

mod lru;
mod store;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::allocator::{self, greedy_allocate, missing_intervals, scan_bounds, Allocation, BlockSizeConfig, IndexView, Interval, ScanRange};
use crate::error::{ConfigError, EngineError, RequestError, StoreError};
use crate::metrics::Collector;
use crate::DeviceId;
use crate::ingestion::{IoEvent, OpKind};

use lru::LruList;
pub use store::{BackingStore, FileStore, NullStore};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WritePolicy {
    #[default]
    WriteBack,
    WriteThrough,
}

/// How much of a newly allocated block a write miss fetches from the backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillPolicy {
    /// Only the parts of the block the write does not overwrite.
    #[default]
    Partial,
    /// The whole block, even bytes the write replaces.
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub sizes: BlockSizeConfig,
    /// Cache bytes; rounded down to whole groups.
    pub capacity: u64,
    pub policy: WritePolicy,
    pub scan_range: ScanRange,
    pub fill: FillPolicy,
    /// Flush all dirty blocks every this many requests; 0 disables.
    pub flush_interval: u64,
    /// Keep a byte-accurate copy of cached data.
    pub track_data: bool,
    /// Largest valid `offset + length` per device, if bounded.
    pub device_extent: Option<u64>,
    /// Epoch length for the metrics time series; 0 disables.
    pub epoch_interval: u64,
    /// Keep a log of hit/miss/eviction events.
    pub record_events: bool,
}

impl EngineConfig {
    pub fn new(sizes: BlockSizeConfig, capacity: u64) -> Self {
        EngineConfig {
            sizes,
            capacity,
            policy: WritePolicy::WriteBack,
            scan_range: ScanRange::Verbatim,
            fill: FillPolicy::Partial,
            flush_interval: 0,
            track_data: false,
            device_extent: None,
            epoch_interval: 0,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EvictionCause {
    /// Single tail block replaced by a same-sized block.
    Block,
    /// Member of a whole-group replacement.
    Group,
    Invalidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CacheEvent {
    Hit { dev: DeviceId, offset: u64, size: u64 },
    Miss { dev: DeviceId, offset: u64, size: u64 },
    /// Start of a replacement; the `freed` evictions that follow belong to it.
    Replace { needed: u64, cause: EvictionCause, group: u32, freed: u32 },
    Evict { dev: DeviceId, offset: u64, size: u64, dirty: bool, group: u32, cause: EvictionCause },
}

/// Read result. `bytes_from_cache + bytes_from_backend` equals the request
/// length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadOutcome {
    pub bytes_from_cache: u64,
    pub bytes_from_backend: u64,
    /// Backend bytes fetched to fill the new blocks.
    pub fetched_bytes: u64,
    pub full_hit: bool,
    /// Residency of each smallest-size step of the scanned range.
    pub hit_map: Vec<bool>,
    pub allocations: Vec<Allocation>,
    pub writeback_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteOutcome {
    /// Bytes written to cache space: whole-block installs plus hit overlap.
    pub bytes_to_cache: u64,
    /// Bytes written to the backend: write-through data plus write-backs.
    pub bytes_to_backend: u64,
    /// Backend bytes read to complete partially overwritten new blocks.
    pub fill_bytes: u64,
    pub full_hit: bool,
    pub hit_map: Vec<bool>,
    pub allocations: Vec<Allocation>,
    pub writeback_failures: u64,
}

/// Public view of a resident block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BlockInfo {
    pub dev: DeviceId,
    pub source_offset: u64,
    pub size: u64,
    pub dirty: bool,
    pub group_id: u32,
    /// Byte address inside the cache.
    pub cache_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroupState {
    Free,
    Open,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupInfo {
    pub id: u32,
    pub physical_base: u64,
    pub block_size: u64,
    pub occupancy: u32,
    pub capacity: u32,
    pub state: GroupState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushTarget {
    All,
    Device(DeviceId),
}

#[derive(Debug, Clone)]
struct Block {
    dev: DeviceId,
    source_offset: u64,
    size_idx: usize,
    group: u32,
    slot: u32,
    dirty: bool,
}

#[derive(Debug, Clone)]
struct Group {
    base: u64,
    size_idx: usize,
    slots: Vec<Option<u32>>,
    occupancy: u32,
    state: GroupState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Read,
    Write,
}

enum Payload<'a> {
    None,
    Read(&'a mut [u8]),
    Write(&'a [u8]),
}

type Key = (DeviceId, u64);

struct Access {
    hit_bytes: u64,
    fetched: u64,
    to_backend: u64,
    to_cache: u64,
    full_hit: bool,
    hit_map: Vec<bool>,
    allocations: Vec<Allocation>,
    writeback_failures: u64,
}

pub struct Engine<S> {
    cfg: EngineConfig,
    store: S,
    capacity: u64,
    sizes: Vec<u64>,
    index: Vec<HashMap<Key, u32>>,
    blocks: Vec<Option<Block>>,
    free_block_ids: Vec<u32>,
    live_blocks: u64,
    block_lru: LruList,
    groups: Vec<Group>,
    group_lru: LruList,
    // stack; the top is reused first
    free_groups: Vec<u32>,
    open: Vec<Option<u32>>,
    // groups with free slots that are not the open group of their size
    partial: Vec<BTreeSet<u32>>,
    data: Option<Vec<u8>>,
    stats: Collector,
    events: Vec<CacheEvent>,
    // write-back failures during the current request
    pending_failures: u64,
    pending_backend_writes: u64,
}

struct DeviceIndex<'a> {
    sizes: &'a [u64],
    index: &'a [HashMap<Key, u32>],
    dev: DeviceId,
}

impl IndexView for DeviceIndex<'_> {
    fn contains(&self, block_size: u64, aligned_offset: u64) -> bool {
        let si = self.sizes.binary_search(&block_size).expect("configured size");
        self.index[si].contains_key(&(self.dev, aligned_offset))
    }
}

fn overlap(a: Interval, b: Interval) -> Option<Interval> {
    let begin = a.begin.max(b.begin);
    let end = a.end.min(b.end);
    (begin < end).then(|| Interval::new(begin, end))
}

impl<S: BackingStore> Engine<S> {
    pub fn new(cfg: EngineConfig, store: S) -> Result<Self, ConfigError> {
        let group_size = cfg.sizes.group_size();
        let n_groups = cfg.capacity / group_size;
        if n_groups == 0 {
            return Err(ConfigError::CapacityTooSmall { capacity: cfg.capacity, group_size });
        }
        if n_groups > u32::MAX as u64 / 2 {
            return Err(ConfigError::Invalid(format!("{n_groups} groups exceed the supported count")));
        }
        let capacity = n_groups * group_size;
        let m = cfg.sizes.len();
        let groups = (0..n_groups as u32)
            .map(|g| Group {
                base: g as u64 * group_size,
                size_idx: 0,
                slots: Vec::new(),
                occupancy: 0,
                state: GroupState::Free,
            })
            .collect();
        let data = if cfg.track_data {
            let bytes = usize::try_from(capacity).map_err(|_| ConfigError::Invalid("data area too large".into()))?;
            Some(vec![0u8; bytes])
        } else {
            None
        };
        Ok(Engine {
            sizes: cfg.sizes.sizes().to_vec(),
            stats: Collector::with_epochs(cfg.epoch_interval),
            cfg,
            store,
            capacity,
            index: vec![HashMap::new(); m],
            blocks: Vec::new(),
            free_block_ids: Vec::new(),
            live_blocks: 0,
            block_lru: LruList::new(),
            groups,
            group_lru: LruList::new(),
            free_groups: (0..n_groups as u32).rev().collect(),
            open: vec![None; m],
            partial: vec![BTreeSet::new(); m],
            data,
            events: Vec::new(),
            pending_failures: 0,
            pending_backend_writes: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Usable capacity after rounding down to whole groups.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn stats(&self) -> &Collector {
        &self.stats
    }

    pub fn into_stats(self) -> Collector {
        self.stats
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn live_blocks(&self) -> u64 {
        self.live_blocks
    }

    /// Events recorded so far (empty unless `record_events` is set).
    pub fn events(&self) -> &[CacheEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<CacheEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn read(&mut self, dev: DeviceId, offset: u64, length: u64) -> Result<ReadOutcome, EngineError> {
        let a = self.access(dev, Op::Read, offset, length, Payload::None)?;
        Ok(Self::read_outcome(a, length))
    }

    /// Applies one trace event without payload.
    pub fn apply(&mut self, ev: &IoEvent) -> Result<(), EngineError> {
        match ev.op {
            OpKind::Read => self.read(ev.device, ev.offset, ev.length).map(drop),
            OpKind::Write => self.write(ev.device, ev.offset, ev.length).map(drop),
        }
    }

    /// Reads into `buf`; requires `track_data`.
    pub fn read_into(&mut self, dev: DeviceId, offset: u64, buf: &mut [u8]) -> Result<ReadOutcome, EngineError> {
        if self.data.is_none() {
            return Err(RequestError::NoDataArea.into());
        }
        let length = buf.len() as u64;
        let a = self.access(dev, Op::Read, offset, length, Payload::Read(buf))?;
        Ok(Self::read_outcome(a, length))
    }

    pub fn write(&mut self, dev: DeviceId, offset: u64, length: u64) -> Result<WriteOutcome, EngineError> {
        let a = self.access(dev, Op::Write, offset, length, Payload::None)?;
        Ok(Self::write_outcome(a))
    }

    /// Writes `data`; requires `track_data`.
    pub fn write_from(&mut self, dev: DeviceId, offset: u64, data: &[u8]) -> Result<WriteOutcome, EngineError> {
        if self.data.is_none() {
            return Err(RequestError::NoDataArea.into());
        }
        let a = self.access(dev, Op::Write, offset, data.len() as u64, Payload::Write(data))?;
        Ok(Self::write_outcome(a))
    }

    fn read_outcome(a: Access, length: u64) -> ReadOutcome {
        ReadOutcome {
            bytes_from_cache: a.hit_bytes,
            bytes_from_backend: length - a.hit_bytes,
            fetched_bytes: a.fetched,
            full_hit: a.full_hit,
            hit_map: a.hit_map,
            allocations: a.allocations,
            writeback_failures: a.writeback_failures,
        }
    }

    fn write_outcome(a: Access) -> WriteOutcome {
        WriteOutcome {
            bytes_to_cache: a.to_cache,
            bytes_to_backend: a.to_backend,
            fill_bytes: a.fetched,
            full_hit: a.full_hit,
            hit_map: a.hit_map,
            allocations: a.allocations,
            writeback_failures: a.writeback_failures,
        }
    }

    fn covering(&self, dev: DeviceId, addr: u64) -> Option<u32> {
        self.sizes
            .iter()
            .zip(&self.index)
            .find_map(|(&size, idx)| idx.get(&(dev, allocator::align(addr, size))).copied())
    }

    fn block_interval(&self, id: u32) -> Interval {
        let b = self.blocks[id as usize].as_ref().unwrap();
        Interval::new(b.source_offset, b.source_offset + self.sizes[b.size_idx])
    }

    fn cache_addr(&self, b: &Block) -> usize {
        let g = &self.groups[b.group as usize];
        (g.base + b.slot as u64 * self.sizes[b.size_idx]) as usize
    }

    fn record(&mut self, ev: CacheEvent) {
        if self.cfg.record_events {
            self.events.push(ev);
        }
    }

    fn validate_request(&self, offset: u64, length: u64, payload: &Payload<'_>) -> Result<(), RequestError> {
        if length == 0 {
            return Err(RequestError::ZeroLength);
        }
        let end = offset.checked_add(length).ok_or(RequestError::Overflow { offset, length })?;
        if let Some(extent) = self.cfg.device_extent {
            if end > extent {
                return Err(RequestError::OutOfRange { offset, length, extent });
            }
        }
        let got = match payload {
            Payload::None => return Ok(()),
            Payload::Read(b) => b.len(),
            Payload::Write(b) => b.len(),
        };
        if got as u64 != length {
            return Err(RequestError::BufferLength { got, want: length });
        }
        Ok(())
    }

    fn access(&mut self, dev: DeviceId, op: Op, offset: u64, length: u64, mut payload: Payload<'_>) -> Result<Access, EngineError> {
        self.validate_request(offset, length, &payload)?;
        let request = Interval::new(offset, offset + length);
        let step = self.sizes[0];
        let bounds = scan_bounds(offset, length, step, self.cfg.scan_range)?;
        let missing = {
            let view = DeviceIndex { sizes: &self.sizes, index: &self.index, dev };
            missing_intervals(offset, length, &self.cfg.sizes, &view, self.cfg.scan_range)?
        };
        let allocations = greedy_allocate(&missing, &self.cfg.sizes);

        // Resident blocks in ascending order.
        let mut hits: Vec<u32> = Vec::new();
        let mut hit_map = Vec::with_capacity(((bounds.end - bounds.begin) / step) as usize);
        let mut cursor = bounds.begin;
        while cursor < bounds.end {
            match self.covering(dev, cursor) {
                Some(id) => {
                    if hits.last() != Some(&id) {
                        hits.push(id);
                    }
                    hit_map.push(true);
                }
                None => hit_map.push(false),
            }
            cursor += step;
        }
        let hit_bytes: u64 = hits.iter().map(|&id| overlap(self.block_interval(id), request).map_or(0, |o| o.len())).sum();
        let full_hit = missing.iter().all(|iv| overlap(*iv, request).is_none());
        let mut touched: Vec<(u64, usize)> = hits
            .iter()
            .map(|&id| {
                let b = self.blocks[id as usize].as_ref().unwrap();
                (b.source_offset, b.size_idx)
            })
            .collect();
        let tracking = self.data.is_some();

        // Backend traffic first; any failure leaves the cache untouched.
        let mut images: Vec<Vec<u8>> = Vec::new();
        let mut fetched = 0;
        for iv in &missing {
            let pieces: Vec<Interval> = match (op, self.cfg.fill) {
                (Op::Read, _) | (Op::Write, FillPolicy::Always) => vec![*iv],
                (Op::Write, FillPolicy::Partial) => {
                    let mut p = Vec::with_capacity(2);
                    if iv.begin < request.begin {
                        p.push(Interval::new(iv.begin, iv.end.min(request.begin)));
                    }
                    if iv.end > request.end {
                        p.push(Interval::new(iv.begin.max(request.end), iv.end));
                    }
                    p
                }
            };
            let mut image = if tracking { vec![0u8; iv.len() as usize] } else { Vec::new() };
            for p in pieces {
                let buf = if tracking {
                    Some(&mut image[(p.begin - iv.begin) as usize..(p.end - iv.begin) as usize])
                } else {
                    None
                };
                self.store.read(dev, p.begin, p.len(), buf)?;
                fetched += p.len();
            }
            images.push(image);
        }
        let mut to_backend = 0;
        if op == Op::Write && self.cfg.policy == WritePolicy::WriteThrough {
            let data = match &payload {
                Payload::Write(d) => Some(*d),
                _ => None,
            };
            self.store.write(dev, offset, length, data)?;
            to_backend += length;
        }
        if let (Op::Write, Payload::Write(src)) = (op, &payload) {
            // Overlay the new bytes onto the fetched images.
            for (iv, image) in missing.iter().zip(images.iter_mut()) {
                if let Some(o) = overlap(*iv, request) {
                    image[(o.begin - iv.begin) as usize..(o.end - iv.begin) as usize]
                        .copy_from_slice(&src[(o.begin - offset) as usize..(o.end - offset) as usize]);
                }
            }
        }

        // Accounting for the request as a whole.
        let hs = &mut self.stats.hits;
        match op {
            Op::Read => {
                hs.read_requests += 1;
                hs.read_total_bytes += length;
                hs.read_hit_bytes += hit_bytes;
                hs.read_full_hits += full_hit as u64;
            }
            Op::Write => {
                hs.write_requests += 1;
                hs.write_total_bytes += length;
                hs.write_hit_bytes += hit_bytes;
                hs.write_full_hits += full_hit as u64;
            }
        }
        if !full_hit {
            self.stats.adaptiveness.missed_requests += 1;
            self.stats.adaptiveness.missed_request_bytes += length;
        }
        self.stats.volumes.read_from_core += fetched;
        self.stats.volumes.write_to_core += to_backend;
        self.pending_failures = 0;
        self.pending_backend_writes = 0;
        let dirties = op == Op::Write && self.cfg.policy == WritePolicy::WriteBack;
        let mut to_cache = 0;

        // Pass 1: resident blocks.
        for &id in &hits {
            let span = self.block_interval(id);
            let b = self.blocks[id as usize].as_ref().unwrap();
            let (group, size) = (b.group, self.sizes[b.size_idx]);
            let addr = self.cache_addr(b);
            self.record(CacheEvent::Hit { dev, offset: span.begin, size });
            self.promote(id, group);
            let Some(o) = overlap(span, request) else { continue };
            let cache_range = addr + (o.begin - span.begin) as usize..addr + (o.end - span.begin) as usize;
            let req_range = (o.begin - offset) as usize..(o.end - offset) as usize;
            match op {
                Op::Read => {
                    self.stats.volumes.read_from_cache += o.len();
                    if let (Some(area), Payload::Read(dst)) = (&self.data, &mut payload) {
                        dst[req_range].copy_from_slice(&area[cache_range]);
                    }
                }
                Op::Write => {
                    self.stats.volumes.write_to_cache += o.len();
                    to_cache += o.len();
                    if let (Some(area), Payload::Write(src)) = (&mut self.data, &payload) {
                        area[cache_range].copy_from_slice(&src[req_range]);
                    }
                    if dirties {
                        self.blocks[id as usize].as_mut().unwrap().dirty = true;
                    }
                }
            }
        }

        // Pass 2: allocate and install new blocks.
        let mut iv_idx = 0;
        for a in &allocations {
            while missing[iv_idx].end <= a.offset {
                iv_idx += 1;
            }
            let iv = missing[iv_idx];
            let si = self.cfg.sizes.index_of(a.size).unwrap();
            let (group, slot) = self.allocate_block(si);
            let dirty = dirties && overlap(a.interval(), request).is_some();
            let id = self.install(Block { dev, source_offset: a.offset, size_idx: si, group, slot, dirty });
            self.record(CacheEvent::Miss { dev, offset: a.offset, size: a.size });
            self.stats.record_allocation(a.size);
            self.stats.volumes.write_to_cache += a.size;
            to_cache += a.size;
            if tracking {
                let addr = self.cache_addr(self.blocks[id as usize].as_ref().unwrap());
                let image = &images[iv_idx];
                let from = (a.offset - iv.begin) as usize;
                let area = self.data.as_mut().unwrap();
                area[addr..addr + a.size as usize].copy_from_slice(&image[from..from + a.size as usize]);
                if let (Some(o), Payload::Read(dst)) = (overlap(a.interval(), request), &mut payload) {
                    dst[(o.begin - offset) as usize..(o.end - offset) as usize]
                        .copy_from_slice(&image[(o.begin - iv.begin) as usize..(o.end - iv.begin) as usize]);
                }
            }
        }

        // Pass 3: final promotion in ascending source order.
        // Hits may have been replaced during pass 2, so resolve through the index.
        touched.extend(allocations.iter().map(|a| (a.offset, self.cfg.sizes.index_of(a.size).unwrap())));
        touched.sort_unstable();
        for (off, si) in touched {
            if let Some(&id) = self.index[si].get(&(dev, off)) {
                let group = self.blocks[id as usize].as_ref().unwrap().group;
                self.promote(id, group);
            }
        }

        let writeback_failures = self.pending_failures;
        let to_backend = to_backend + self.pending_backend_writes;
        self.stats.end_request(self.live_blocks);
        if self.cfg.flush_interval > 0 && self.stats.events.is_multiple_of(self.cfg.flush_interval) {
            if let Err(e) = self.flush(FlushTarget::All) {
                log::warn!("periodic flush failed: {e}");
            }
        }
        Ok(Access {
            hit_bytes,
            fetched,
            to_backend,
            to_cache,
            full_hit,
            hit_map,
            allocations,
            writeback_failures,
        })
    }

    fn promote(&mut self, id: u32, group: u32) {
        self.block_lru.promote(id);
        self.group_lru.promote(group);
    }

    fn install(&mut self, block: Block) -> u32 {
        let id = match self.free_block_ids.pop() {
            Some(id) => id,
            None => {
                self.blocks.push(None);
                (self.blocks.len() - 1) as u32
            }
        };
        let key = (block.dev, block.source_offset);
        let (group, slot) = (block.group, block.slot);
        let prev = self.index[block.size_idx].insert(key, id);
        debug_assert!(prev.is_none());
        self.blocks[id as usize] = Some(block);
        self.groups[group as usize].slots[slot as usize] = Some(id);
        self.live_blocks += 1;
        self.promote(id, group);
        id
    }

    /// Reserves a slot for a block of size index `si`: the open group first,
    /// then a group with holes, then a fresh extent, then replacement.
    fn allocate_block(&mut self, si: usize) -> (u32, u32) {
        loop {
            if let Some(g) = self.open[si] {
                let group = &mut self.groups[g as usize];
                let slot = group.slots.iter().position(Option::is_none).expect("open group has a free slot") as u32;
                group.occupancy += 1;
                if group.occupancy as usize == group.slots.len() {
                    group.state = GroupState::Full;
                    self.open[si] = None;
                }
                return (g, slot);
            }
            if let Some(g) = self.partial[si].pop_first() {
                self.groups[g as usize].state = GroupState::Open;
                self.open[si] = Some(g);
                continue;
            }
            if let Some(g) = self.free_groups.pop() {
                let per_group = (self.cfg.sizes.group_size() / self.sizes[si]) as usize;
                let group = &mut self.groups[g as usize];
                group.size_idx = si;
                group.slots = vec![None; per_group];
                group.occupancy = 0;
                group.state = GroupState::Open;
                self.open[si] = Some(g);
                self.group_lru.push_front(g);
                continue;
            }
            self.replace(si);
        }
    }

    /// Frees space for one block of size index `si` when the cache is full.
    fn replace(&mut self, si: usize) {
        let needed = self.sizes[si];
        let tail = self.block_lru.tail().expect("full cache has resident blocks");
        let tail_block = self.blocks[tail as usize].as_ref().unwrap();
        if tail_block.size_idx == si {
            let group = tail_block.group;
            self.stats.evictions.block_replacements += 1;
            self.record(CacheEvent::Replace { needed, cause: EvictionCause::Block, group, freed: 1 });
            self.evict(tail, EvictionCause::Block);
        } else {
            let g = self.group_lru.tail().expect("full cache has live groups");
            let members: Vec<u32> = self.groups[g as usize].slots.iter().flatten().copied().collect();
            self.stats.evictions.group_replacements += 1;
            self.record(CacheEvent::Replace { needed, cause: EvictionCause::Group, group: g, freed: members.len() as u32 });
            for id in members {
                self.evict(id, EvictionCause::Group);
            }
            debug_assert_eq!(self.groups[g as usize].state, GroupState::Free);
        }
    }

    fn write_back(&mut self, id: u32) -> Result<(), StoreError> {
        let b = self.blocks[id as usize].as_ref().unwrap();
        let (dev, off, size) = (b.dev, b.source_offset, self.sizes[b.size_idx]);
        let addr = self.cache_addr(b);
        let data = self.data.as_ref().map(|d| &d[addr..addr + size as usize]);
        self.store.write(dev, off, size, data)?;
        self.stats.volumes.write_to_core += size;
        self.stats.volumes.read_from_cache += size;
        self.stats.evictions.dirty_writebacks += 1;
        self.pending_backend_writes += size;
        self.blocks[id as usize].as_mut().unwrap().dirty = false;
        Ok(())
    }

    /// Drops a block, writing it back first if dirty. A failed write-back is
    /// counted and the block is dropped anyway.
    fn evict(&mut self, id: u32, cause: EvictionCause) {
        let b = self.blocks[id as usize].as_ref().unwrap();
        let (dev, offset, size, dirty, group) = (b.dev, b.source_offset, self.sizes[b.size_idx], b.dirty, b.group);
        if dirty {
            if let Err(e) = self.write_back(id) {
                log::warn!("write-back of {dev}:{offset}+{size} failed: {e}");
                self.stats.evictions.writeback_failures += 1;
                self.pending_failures += 1;
            }
        }
        self.record(CacheEvent::Evict { dev, offset, size, dirty, group, cause });
        self.stats.evictions.blocks_evicted += 1;
        self.remove_block(id);
    }

    fn remove_block(&mut self, id: u32) {
        let b = self.blocks[id as usize].take().unwrap();
        self.index[b.size_idx].remove(&(b.dev, b.source_offset));
        self.block_lru.remove(id);
        self.free_block_ids.push(id);
        self.live_blocks -= 1;
        let g = b.group;
        let group = &mut self.groups[g as usize];
        group.slots[b.slot as usize] = None;
        group.occupancy -= 1;
        if group.occupancy == 0 {
            if group.state == GroupState::Open {
                self.open[b.size_idx] = None;
            }
            self.partial[b.size_idx].remove(&g);
            group.state = GroupState::Free;
            group.slots = Vec::new();
            self.group_lru.remove(g);
            self.free_groups.push(g);
        } else if group.state == GroupState::Full {
            self.partial[b.size_idx].insert(g);
        }
    }

    /// Writes back dirty blocks in ascending (device, offset) order and
    /// returns the bytes written. Blocks whose write-back fails stay dirty and
    /// the first error is returned after all blocks were attempted.
    pub fn flush(&mut self, target: FlushTarget) -> Result<u64, StoreError> {
        let mut dirty: Vec<(DeviceId, u64, u32)> = self
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(id, b)| b.as_ref().map(|b| (id, b)))
            .filter(|(_, b)| b.dirty && (target == FlushTarget::All || target == FlushTarget::Device(b.dev)))
            .map(|(id, b)| (b.dev, b.source_offset, id as u32))
            .collect();
        dirty.sort_unstable();
        self.stats.evictions.flushes += 1;
        let mut bytes = 0;
        let mut first_err = None;
        for (_, _, id) in dirty {
            let size = self.sizes[self.blocks[id as usize].as_ref().unwrap().size_idx];
            match self.write_back(id) {
                Ok(()) => bytes += size,
                Err(e) => {
                    self.stats.evictions.writeback_failures += 1;
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(bytes),
        }
    }

    /// Flushes and drops every block of `dev`. Nothing is dropped if the
    /// flush fails.
    pub fn invalidate(&mut self, dev: DeviceId) -> Result<u64, StoreError> {
        let flushed = self.flush(FlushTarget::Device(dev))?;
        let mut ids: Vec<(u64, u32)> = self
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(id, b)| b.as_ref().filter(|b| b.dev == dev).map(|b| (b.source_offset, id as u32)))
            .collect();
        ids.sort_unstable();
        for (_, id) in ids {
            self.evict(id, EvictionCause::Invalidate);
        }
        Ok(flushed)
    }

    fn info(&self, id: u32) -> BlockInfo {
        let b = self.blocks[id as usize].as_ref().unwrap();
        BlockInfo {
            dev: b.dev,
            source_offset: b.source_offset,
            size: self.sizes[b.size_idx],
            dirty: b.dirty,
            group_id: b.group,
            cache_offset: self.cache_addr(b) as u64,
        }
    }

    /// Resident blocks sorted by (device, source offset).
    pub fn contents_snapshot(&self) -> Vec<BlockInfo> {
        let mut v: Vec<BlockInfo> = (0..self.blocks.len() as u32).filter(|&id| self.blocks[id as usize].is_some()).map(|id| self.info(id)).collect();
        v.sort_unstable();
        v
    }

    pub fn groups(&self) -> Vec<GroupInfo> {
        self.groups
            .iter()
            .enumerate()
            .map(|(id, g)| GroupInfo {
                id: id as u32,
                physical_base: g.base,
                block_size: if g.state == GroupState::Free { 0 } else { self.sizes[g.size_idx] },
                occupancy: g.occupancy,
                capacity: g.slots.len() as u32,
                state: g.state,
            })
            .collect()
    }

    /// Blocks from most to least recently used.
    pub fn block_lru_order(&self) -> Vec<BlockInfo> {
        self.block_lru.iter().map(|id| self.info(id)).collect()
    }

    /// Most recently used block and group.
    pub fn lru_heads(&self) -> (Option<BlockInfo>, Option<u32>) {
        (self.block_lru.head().map(|id| self.info(id)), self.group_lru.head())
    }

    /// Group ids from most to least recently used.
    pub fn group_lru_order(&self) -> Vec<u32> {
        self.group_lru.iter().collect()
    }

    pub fn lookup(&self, dev: DeviceId, addr: u64) -> Option<BlockInfo> {
        self.covering(dev, addr).map(|id| self.info(id))
    }

    /// Checks every structural invariant; meant for tests.
    pub fn validate(&self) -> Result<(), String> {
        let step = self.sizes[0];
        let group_size = self.cfg.sizes.group_size();
        let mut seen_steps: HashMap<Key, u32> = HashMap::new();
        let mut live = 0;
        for (id, b) in self.blocks.iter().enumerate() {
            let Some(b) = b else { continue };
            let id = id as u32;
            live += 1;
            let size = self.sizes[b.size_idx];
            if b.source_offset % size != 0 {
                return Err(format!("block {id} at {} not {size}-aligned", b.source_offset));
            }
            if self.index[b.size_idx].get(&(b.dev, b.source_offset)) != Some(&id) {
                return Err(format!("block {id} not indexed"));
            }
            let g = &self.groups[b.group as usize];
            if g.state == GroupState::Free || g.size_idx != b.size_idx || g.slots.get(b.slot as usize) != Some(&Some(id)) {
                return Err(format!("block {id} not owned by group {}", b.group));
            }
            if b.dirty && self.cfg.policy == WritePolicy::WriteThrough {
                return Err(format!("block {id} dirty under write-through"));
            }
            if !self.block_lru.contains(id) {
                return Err(format!("block {id} missing from LRU"));
            }
            for s in (b.source_offset..b.source_offset + size).step_by(step as usize) {
                if let Some(other) = seen_steps.insert((b.dev, s), id) {
                    return Err(format!("blocks {other} and {id} overlap at {}:{s}", b.dev));
                }
            }
        }
        if live != self.live_blocks || self.block_lru.len() as u64 != live {
            return Err(format!("live count {} / lru {} / actual {live}", self.live_blocks, self.block_lru.len()));
        }
        let indexed: usize = self.index.iter().map(HashMap::len).sum();
        if indexed as u64 != live {
            return Err(format!("{indexed} indexed vs {live} live"));
        }
        let mut in_use = 0;
        for (gid, g) in self.groups.iter().enumerate() {
            let gid = gid as u32;
            if g.state == GroupState::Free {
                if self.group_lru.contains(gid) || !self.free_groups.contains(&gid) {
                    return Err(format!("free group {gid} misfiled"));
                }
                continue;
            }
            in_use += 1;
            let members = g.slots.iter().flatten().count() as u32;
            if members != g.occupancy || members == 0 {
                return Err(format!("group {gid} occupancy {} vs {members} members", g.occupancy));
            }
            if g.slots.len() as u64 != group_size / self.sizes[g.size_idx] {
                return Err(format!("group {gid} has {} slots", g.slots.len()));
            }
            if !self.group_lru.contains(gid) {
                return Err(format!("group {gid} missing from group LRU"));
            }
            let is_open = self.open[g.size_idx] == Some(gid);
            if is_open != (g.state == GroupState::Open) {
                return Err(format!("group {gid} open flag mismatch"));
            }
            if g.state == GroupState::Full && (g.occupancy as usize) < g.slots.len() && !self.partial[g.size_idx].contains(&gid) {
                return Err(format!("group {gid} has holes but is not tracked"));
            }
        }
        if self.group_lru.len() != in_use {
            return Err(format!("group LRU holds {} of {in_use} groups", self.group_lru.len()));
        }
        let open = self.open.iter().flatten().count();
        if open > self.sizes.len() {
            return Err(format!("{open} open groups"));
        }
        if (in_use + self.free_groups.len()) as u64 * group_size != self.capacity {
            return Err("group extents do not tile the capacity".into());
        }
        Ok(())
    }
}

impl std::fmt::Display for GroupState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GroupState::Free => "free",
            GroupState::Open => "open",
            GroupState::Full => "full",
        })
    }
}
