//! Block cache with variable-sized cache blocks.
//!
//! Requests are aligned to the smallest configured block size, the gaps that
//! no resident block covers are found ([`allocator::missing_intervals`]) and
//! tiled with the largest self-aligned blocks that fit
//! ([`allocator::greedy_allocate`]). The [`engine`] keeps blocks of one size
//! together in fixed-size groups and replaces either a single block or a
//! whole group. [`ingestion`] turns block I/O traces into event streams and
//! [`metrics`] turns engine activity into reports.

pub mod allocator;
pub mod engine;
pub mod error;
pub mod ingestion;
pub mod metrics;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use allocator::{align, Allocation, BlockSizeConfig, Interval, ScanRange};
pub use engine::{BackingStore, Engine, EngineConfig, FileStore, FillPolicy, NullStore, WritePolicy};
pub use error::{ConfigError, EngineError, ParseError, RequestError, StoreError};
pub use ingestion::{IoEvent, OpKind};

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;
pub const TIB: u64 = 1 << 40;

/// Dense numeric handle for a traced device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dev{}", self.0)
    }
}

/// Parses `4096`, `32K`, `32KiB`, `1M`, `2G` (binary units, case-insensitive).
pub fn parse_size(text: &str) -> Option<u64> {
    let t = text.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => KIB,
        "m" | "mb" | "mib" => MIB,
        "g" | "gb" | "gib" => GIB,
        "t" | "tb" | "tib" => TIB,
        _ => return None,
    };
    n.checked_mul(mult)
}
