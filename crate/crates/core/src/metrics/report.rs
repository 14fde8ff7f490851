use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Collector, EpochSample, EvictionStats, HitStats, VolumeCounters};

/// Bumped on any incompatible change to the report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Raw outcome of replaying one device.
#[derive(Debug, Clone)]
pub struct DeviceRun {
    pub device: String,
    pub wss_bytes: u64,
    pub cache_bytes: u64,
    pub collector: Collector,
    /// Wall-clock time spent inside the engine, when measured.
    pub engine_overhead_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRatios {
    pub read_request: f64,
    pub write_request: f64,
    pub read_byte: f64,
    pub write_byte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub final_blocks: u64,
    pub final_bytes: u64,
    pub average_bytes: f64,
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivenessSummary {
    pub missed_requests: u64,
    pub avg_missed_request_bytes: f64,
    pub allocated_blocks: u64,
    pub avg_allocated_block_bytes: f64,
    /// Allocation count per block size in bytes.
    pub histogram: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device: String,
    pub events: u64,
    pub wss_bytes: u64,
    pub cache_bytes: u64,
    pub volumes: VolumeCounters,
    pub backend_traffic_bytes: u64,
    pub cache_traffic_bytes: u64,
    pub hits: HitStats,
    pub hit_ratios: HitRatios,
    pub memory: MemorySummary,
    pub adaptiveness: AdaptivenessSummary,
    pub evictions: EvictionStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_overhead_ns: Option<u64>,
}

impl DeviceReport {
    pub fn from_run(run: &DeviceRun) -> Self {
        let c = &run.collector;
        DeviceReport {
            device: run.device.clone(),
            events: c.events,
            wss_bytes: run.wss_bytes,
            cache_bytes: run.cache_bytes,
            volumes: c.volumes,
            backend_traffic_bytes: c.volumes.backend_traffic(),
            cache_traffic_bytes: c.volumes.cache_traffic(),
            hits: c.hits,
            hit_ratios: HitRatios {
                read_request: c.hits.read_hit_ratio(),
                write_request: c.hits.write_hit_ratio(),
                read_byte: c.hits.read_byte_hit_ratio(),
                write_byte: c.hits.write_byte_hit_ratio(),
            },
            memory: MemorySummary {
                final_blocks: c.memory.live_blocks,
                final_bytes: c.memory.final_bytes(),
                average_bytes: c.memory.average_bytes(),
                peak_bytes: c.memory.peak_bytes(),
            },
            adaptiveness: AdaptivenessSummary {
                missed_requests: c.adaptiveness.missed_requests,
                avg_missed_request_bytes: c.adaptiveness.avg_missed_request(),
                allocated_blocks: c.adaptiveness.allocated_blocks,
                avg_allocated_block_bytes: c.adaptiveness.avg_allocated_block(),
                histogram: c.adaptiveness.histogram.clone(),
            },
            evictions: c.evictions,
            epochs: c.epochs.clone(),
            engine_overhead_ns: run.engine_overhead_ns,
        }
    }
}

/// Per-device and aggregate results of one run.
///
/// `config` echoes the run configuration verbatim. Field order is fixed by
/// the struct layout, so identical runs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub schema_version: u32,
    pub config: Value,
    pub devices: Vec<DeviceReport>,
    pub aggregate: DeviceReport,
}

impl ReplayReport {
    pub fn build(config: Value, runs: &[DeviceRun]) -> Self {
        let mut total = Collector::new();
        let mut wss = 0;
        let mut cache = 0;
        let mut overhead: Option<u64> = None;
        for r in runs {
            total.merge(&r.collector);
            wss += r.wss_bytes;
            cache += r.cache_bytes;
            if let Some(ns) = r.engine_overhead_ns {
                *overhead.get_or_insert(0) += ns;
            }
        }
        let aggregate = DeviceReport::from_run(&DeviceRun {
            device: "ALL".into(),
            wss_bytes: wss,
            cache_bytes: cache,
            collector: total,
            engine_overhead_ns: overhead,
        });
        ReplayReport {
            schema_version: SCHEMA_VERSION,
            config,
            devices: runs.iter().map(DeviceReport::from_run).collect(),
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// One row per device plus the aggregate; columns are the flattened
    /// numeric fields in lexical order.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let rows: Vec<(&str, BTreeMap<String, f64>)> = self
            .devices
            .iter()
            .chain(std::iter::once(&self.aggregate))
            .map(|d| (d.device.as_str(), flatten(d)))
            .collect();
        let columns: BTreeSet<&String> = rows.iter().flat_map(|(_, m)| m.keys()).collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["device".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (name, m) in &rows {
            let mut rec = vec![name.to_string()];
            rec.extend(columns.iter().map(|c| fmt_num(m.get(*c).copied().unwrap_or(0.0))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Numeric leaves of a device report keyed by dotted path. The epoch series
/// is left out.
pub fn flatten(d: &DeviceReport) -> BTreeMap<String, f64> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, f64>) {
        match v {
            Value::Number(n) => {
                out.insert(prefix.to_string(), n.as_f64().unwrap_or(0.0));
            }
            Value::Object(map) => {
                for (k, v) in map {
                    if k == "epochs" {
                        continue;
                    }
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk("", &serde_json::to_value(d).expect("report serializes"), &mut out);
    out
}
