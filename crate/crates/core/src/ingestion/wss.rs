use std::collections::BTreeMap;

use super::IoEvent;
use crate::allocator::align;
use crate::DeviceId;

/// Bytes in the union of `step`-aligned chunks touched per device.
pub fn per_device_wss(events: &[IoEvent], step: u64) -> BTreeMap<DeviceId, u64> {
    let mut spans: BTreeMap<DeviceId, Vec<(u64, u64)>> = BTreeMap::new();
    for e in events {
        let begin = align(e.offset, step);
        let end = align(e.offset.saturating_add(e.length - 1), step).saturating_add(step);
        spans.entry(e.device).or_default().push((begin, end));
    }
    spans
        .into_iter()
        .map(|(dev, mut v)| {
            v.sort_unstable();
            let mut total = 0;
            let mut cur: Option<(u64, u64)> = None;
            for (b, e) in v {
                cur = match cur {
                    Some((cb, ce)) if b <= ce => Some((cb, ce.max(e))),
                    Some((cb, ce)) => {
                        total += ce - cb;
                        Some((b, e))
                    }
                    None => Some((b, e)),
                };
            }
            if let Some((cb, ce)) = cur {
                total += ce - cb;
            }
            (dev, total)
        })
        .collect()
}

/// Working-set size over all devices.
pub fn working_set_size(events: &[IoEvent], step: u64) -> u64 {
    per_device_wss(events, step).values().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::OpKind;
    use crate::{KIB, MIB};

    fn ev(dev: u32, offset: u64, length: u64) -> IoEvent {
        IoEvent { device: DeviceId(dev), op: OpKind::Read, offset, length, timestamp: 0 }
    }

    #[test]
    fn examples() {
        assert_eq!(working_set_size(&[ev(0, 0, 4 * KIB), ev(0, 0, 4 * KIB)], 32 * KIB), 32 * KIB);
        assert_eq!(working_set_size(&[ev(0, 0, 4 * KIB), ev(0, MIB, 4 * KIB)], 32 * KIB), 64 * KIB);
        assert_eq!(working_set_size(&[], 32 * KIB), 0);
    }

    #[test]
    fn devices_are_separate() {
        let w = per_device_wss(&[ev(0, 0, 1), ev(1, 0, 1), ev(1, 40 * KIB, 30 * KIB)], 32 * KIB);
        assert_eq!(w[&DeviceId(0)], 32 * KIB);
        assert_eq!(w[&DeviceId(1)], 96 * KIB);
    }
}
