//! Trace loading and per-device replay.

use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use varcache::engine::{BackingStore, FlushTarget};
use varcache::ingestion::{generate, load_traces, per_device_wss, Trace};
use varcache::metrics::{DeviceRun, ReplayReport};
use varcache::{DeviceId, Engine, FileStore, IoEvent, NullStore, OpKind, StoreError};

use crate::config::{usage, BackendError, RunConfig, Sizing};

enum Store {
    Null(NullStore),
    File(FileStore),
}

impl BackingStore for Store {
    fn read(&mut self, dev: DeviceId, offset: u64, len: u64, buf: Option<&mut [u8]>) -> Result<(), StoreError> {
        match self {
            Store::Null(s) => s.read(dev, offset, len, buf),
            Store::File(s) => s.read(dev, offset, len, buf),
        }
    }

    fn write(&mut self, dev: DeviceId, offset: u64, len: u64, data: Option<&[u8]>) -> Result<(), StoreError> {
        match self {
            Store::Null(s) => s.write(dev, offset, len, data),
            Store::File(s) => s.write(dev, offset, len, data),
        }
    }
}

pub fn load(cfg: &RunConfig) -> Result<Trace> {
    if cfg.traces.is_empty() {
        return usage("no trace given (use --trace)");
    }
    let trace = load_traces(&cfg.traces, &cfg.parse_options())?;
    log::info!(
        "loaded {} events on {} devices from {} lines ({} skipped)",
        trace.events.len(),
        trace.devices.len(),
        trace.lines,
        trace.skipped
    );
    Ok(trace)
}

/// Generates the configured synthetic workload as a trace.
pub fn synthesize(cfg: &RunConfig) -> Result<Trace> {
    let Some(spec) = &cfg.workload else { return usage("no workload configured") };
    let events = generate(spec, cfg.events as usize)?;
    Ok(Trace {
        devices: (0..spec.devices).map(|d| format!("synth{d}")).collect(),
        lines: events.len() as u64,
        events,
        skipped: 0,
    })
}

/// Cache bytes for a device with working set `wss`, rounded down to whole
/// groups but never below one group.
fn cache_bytes(cfg: &RunConfig, wss: u64) -> Result<u64> {
    let group = cfg.sizes.group_size();
    let raw = match cfg.sizing()? {
        Sizing::Bytes(b) => b,
        Sizing::WssRatio(r) => (wss as f64 * r) as u64,
    };
    let rounded = raw / group * group;
    if rounded == 0 {
        log::warn!("cache of {raw} bytes is smaller than one {group}-byte group; using one group");
        return Ok(group);
    }
    Ok(rounded)
}

fn run_device(cfg: &RunConfig, name: &str, dev: DeviceId, events: &[IoEvent], wss: u64) -> Result<DeviceRun> {
    let capacity = cache_bytes(cfg, wss)?;
    let store = match &cfg.store {
        None => Store::Null(NullStore::new()),
        Some(dir) => Store::File(
            FileStore::new(dir).map_err(|e| BackendError(format!("opening store {}: {e}", dir.display())))?,
        ),
    };
    // Image files need real bytes, so a file store replays writes with a
    // payload derived from the request index.
    let with_data = matches!(store, Store::File(_));
    let mut ecfg = cfg.engine_config(capacity);
    ecfg.track_data = with_data;
    let mut engine = Engine::new(ecfg, store)?;
    let mut buf = Vec::new();
    let start = Instant::now();
    for (i, e) in events.iter().enumerate() {
        let result = if with_data {
            buf.clear();
            buf.resize(e.length as usize, (i % 251) as u8 + 1);
            match e.op {
                OpKind::Read => engine.read_into(dev, e.offset, &mut buf).map(drop),
                OpKind::Write => engine.write_from(dev, e.offset, &buf).map(drop),
            }
        } else {
            engine.apply(e)
        };
        result.with_context(|| format!("{name}: request {i} ({:?} {}+{})", e.op, e.offset, e.length))?;
    }
    engine.flush(FlushTarget::All).with_context(|| format!("{name}: final flush"))?;
    let elapsed = start.elapsed().as_nanos() as u64;
    log::info!("{name} ({dev}): {} requests, cache {capacity} bytes, wss {wss} bytes", events.len());
    Ok(DeviceRun {
        device: name.to_string(),
        wss_bytes: wss,
        cache_bytes: capacity,
        collector: engine.into_stats(),
        engine_overhead_ns: cfg.timing.then_some(elapsed),
    })
}

/// Sizes every device from its working set, then replays the devices on a
/// worker pool, one engine each. Device order in the report follows the trace.
pub fn replay(cfg: &RunConfig, trace: &Trace) -> Result<ReplayReport> {
    if trace.events.is_empty() {
        return usage("trace has no events to replay");
    }
    let wss = per_device_wss(&trace.events, cfg.sizes.smallest());
    let per_device = trace.by_device();
    let workers = cfg.workers.unwrap_or(per_device.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let runs: Vec<DeviceRun> = pool.install(|| {
        per_device
            .par_iter()
            .enumerate()
            .filter(|(_, events)| !events.is_empty())
            .map(|(i, events)| {
                let dev = DeviceId(i as u32);
                run_device(cfg, trace.device_name(dev), dev, events, wss.get(&dev).copied().unwrap_or(0))
            })
            .collect::<Result<_>>()
    })?;
    let config = serde_json::to_value(cfg)?;
    Ok(ReplayReport::build(config, &runs))
}
