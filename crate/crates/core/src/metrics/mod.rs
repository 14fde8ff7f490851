//! Evaluation counters collected from engine hooks, plus report building.

mod compare;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use compare::{compare, Comparison, ComparisonRow};
pub use report::{flatten, DeviceReport, DeviceRun, ReplayReport, SCHEMA_VERSION};

/// Modeled in-memory bookkeeping per resident block: source address, cache
/// address, an index pointer and two LRU pointers.
pub const METADATA_BYTES_PER_BLOCK: u64 = 40;

/// Metadata bytes for the given live-block counts (one entry per block size).
pub fn metadata_memory<I: IntoIterator<Item = u64>>(block_counts: I) -> u64 {
    block_counts.into_iter().map(|c| c * METADATA_BYTES_PER_BLOCK).sum()
}

/// Metadata bytes of a completely full fixed-size cache.
pub fn full_cache_metadata(capacity: u64, block_size: u64) -> u64 {
    capacity / block_size * METADATA_BYTES_PER_BLOCK
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeCounters {
    /// Bytes written to the backing store (write-back evictions and flushes,
    /// write-through writes).
    pub write_to_core: u64,
    /// Bytes read from the backing store to fill newly allocated blocks.
    pub read_from_core: u64,
    /// Whole-block installs plus bytes written into resident blocks.
    pub write_to_cache: u64,
    /// Read-hit bytes plus dirty blocks read out for write-back.
    pub read_from_cache: u64,
}

impl VolumeCounters {
    pub fn backend_traffic(&self) -> u64 {
        self.write_to_core + self.read_from_core
    }

    pub fn cache_traffic(&self) -> u64 {
        self.write_to_cache + self.read_from_cache
    }

    fn add(&mut self, o: &VolumeCounters) {
        self.write_to_core += o.write_to_core;
        self.read_from_core += o.read_from_core;
        self.write_to_cache += o.write_to_cache;
        self.read_from_cache += o.read_from_cache;
    }
}

/// Request-granular and byte-granular hit counters. A request is a full hit
/// only when every aligned step holding its bytes was resident.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitStats {
    pub read_requests: u64,
    pub read_full_hits: u64,
    pub write_requests: u64,
    pub write_full_hits: u64,
    pub read_hit_bytes: u64,
    pub read_total_bytes: u64,
    pub write_hit_bytes: u64,
    pub write_total_bytes: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl HitStats {
    pub fn read_hit_ratio(&self) -> f64 {
        ratio(self.read_full_hits, self.read_requests)
    }

    pub fn write_hit_ratio(&self) -> f64 {
        ratio(self.write_full_hits, self.write_requests)
    }

    pub fn read_byte_hit_ratio(&self) -> f64 {
        ratio(self.read_hit_bytes, self.read_total_bytes)
    }

    pub fn write_byte_hit_ratio(&self) -> f64 {
        ratio(self.write_hit_bytes, self.write_total_bytes)
    }

    fn add(&mut self, o: &HitStats) {
        self.read_requests += o.read_requests;
        self.read_full_hits += o.read_full_hits;
        self.write_requests += o.write_requests;
        self.write_full_hits += o.write_full_hits;
        self.read_hit_bytes += o.read_hit_bytes;
        self.read_total_bytes += o.read_total_bytes;
        self.write_hit_bytes += o.write_hit_bytes;
        self.write_total_bytes += o.write_total_bytes;
    }
}

/// Missed-request sizes versus the sizes of blocks allocated for them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeAdaptiveness {
    pub missed_requests: u64,
    pub missed_request_bytes: u64,
    pub allocated_blocks: u64,
    pub allocated_block_bytes: u64,
    /// Allocations per block size.
    pub histogram: BTreeMap<u64, u64>,
}

impl SizeAdaptiveness {
    pub fn avg_missed_request(&self) -> f64 {
        ratio(self.missed_request_bytes, self.missed_requests)
    }

    pub fn avg_allocated_block(&self) -> f64 {
        ratio(self.allocated_block_bytes, self.allocated_blocks)
    }

    fn add(&mut self, o: &SizeAdaptiveness) {
        self.missed_requests += o.missed_requests;
        self.missed_request_bytes += o.missed_request_bytes;
        self.allocated_blocks += o.allocated_blocks;
        self.allocated_block_bytes += o.allocated_block_bytes;
        for (k, v) in &o.histogram {
            *self.histogram.entry(*k).or_default() += v;
        }
    }
}

/// Live-block samples taken after every request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub live_blocks: u64,
    pub peak_blocks: u64,
    pub sample_sum: u128,
    pub samples: u64,
    /// Mean live blocks of other collectors folded in by [`Collector::merge`].
    pub merged_mean_blocks: f64,
}

impl MemoryStats {
    pub fn sample(&mut self, live_blocks: u64) {
        self.live_blocks = live_blocks;
        self.peak_blocks = self.peak_blocks.max(live_blocks);
        self.sample_sum += live_blocks as u128;
        self.samples += 1;
    }

    pub fn final_bytes(&self) -> u64 {
        self.live_blocks * METADATA_BYTES_PER_BLOCK
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak_blocks * METADATA_BYTES_PER_BLOCK
    }

    pub fn mean_blocks(&self) -> f64 {
        let own = if self.samples == 0 { 0.0 } else { self.sample_sum as f64 / self.samples as f64 };
        own + self.merged_mean_blocks
    }

    pub fn average_bytes(&self) -> f64 {
        self.mean_blocks() * METADATA_BYTES_PER_BLOCK as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionStats {
    /// Replacements that evicted the single global-LRU tail block.
    pub block_replacements: u64,
    /// Replacements that evicted a whole group.
    pub group_replacements: u64,
    pub blocks_evicted: u64,
    pub dirty_writebacks: u64,
    pub writeback_failures: u64,
    pub flushes: u64,
}

impl EvictionStats {
    fn add(&mut self, o: &EvictionStats) {
        self.block_replacements += o.block_replacements;
        self.group_replacements += o.group_replacements;
        self.blocks_evicted += o.blocks_evicted;
        self.dirty_writebacks += o.dirty_writebacks;
        self.writeback_failures += o.writeback_failures;
        self.flushes += o.flushes;
    }
}

/// Cumulative counters at an epoch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSample {
    pub events: u64,
    pub volumes: VolumeCounters,
    pub hits: HitStats,
    pub live_blocks: u64,
}

/// Per-engine metrics sink.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Collector {
    pub events: u64,
    pub volumes: VolumeCounters,
    pub hits: HitStats,
    pub adaptiveness: SizeAdaptiveness,
    pub memory: MemoryStats,
    pub evictions: EvictionStats,
    /// 0 disables the time series.
    pub epoch_interval: u64,
    pub epochs: Vec<EpochSample>,
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_epochs(epoch_interval: u64) -> Self {
        Collector { epoch_interval, ..Default::default() }
    }

    pub(crate) fn record_allocation(&mut self, size: u64) {
        self.adaptiveness.allocated_blocks += 1;
        self.adaptiveness.allocated_block_bytes += size;
        *self.adaptiveness.histogram.entry(size).or_default() += 1;
    }

    /// Closes out one request.
    pub(crate) fn end_request(&mut self, live_blocks: u64) {
        self.events += 1;
        self.memory.sample(live_blocks);
        if self.epoch_interval > 0 && self.events.is_multiple_of(self.epoch_interval) {
            self.epochs.push(EpochSample {
                events: self.events,
                volumes: self.volumes,
                hits: self.hits,
                live_blocks,
            });
        }
    }

    /// Sums counters of independent collectors. Memory figures add up since
    /// the per-device caches coexist.
    pub fn merge(&mut self, o: &Collector) {
        self.events += o.events;
        self.volumes.add(&o.volumes);
        self.hits.add(&o.hits);
        self.adaptiveness.add(&o.adaptiveness);
        self.memory.live_blocks += o.memory.live_blocks;
        self.memory.peak_blocks += o.memory.peak_blocks;
        self.memory.merged_mean_blocks += o.memory.mean_blocks();
        self.evictions.add(&o.evictions);
    }
}
