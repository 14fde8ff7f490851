//! Block I/O trace ingestion: parsers for the MSR Cambridge, Alibaba block
//! and Systor '17 CSV layouts, working-set sizing, and a seeded synthetic
//! workload generator.

mod generator;
mod parse;
mod wss;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::DeviceId;

pub use generator::{generate, write_trace, Locality, SizeDistribution, WorkloadGenerator, WorkloadSpec};
pub use parse::{parse_alibaba, parse_msr, parse_systor, Record};
pub use wss::{per_device_wss, working_set_size};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
}

/// One trace record after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IoEvent {
    pub device: DeviceId,
    pub op: OpKind,
    pub offset: u64,
    pub length: u64,
    /// Nanoseconds since the first record of the trace; non-decreasing per
    /// device.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Msr,
    Alibaba,
    Systor,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msr" => Ok(TraceFormat::Msr),
            "alibaba" => Ok(TraceFormat::Alibaba),
            "systor" => Ok(TraceFormat::Systor),
            other => Err(format!("unknown trace format `{other}` (expected msr, alibaba or systor)")),
        }
    }
}

impl TraceFormat {
    pub fn parse_line(self, line: &str, line_no: u64) -> Result<Record, ParseError> {
        match self {
            TraceFormat::Msr => parse_msr(line, line_no),
            TraceFormat::Alibaba => parse_alibaba(line, line_no),
            TraceFormat::Systor => parse_systor(line, line_no),
        }
    }

    fn header_token(self) -> &'static str {
        match self {
            TraceFormat::Msr | TraceFormat::Systor => "timestamp",
            TraceFormat::Alibaba => "device_id",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub format: TraceFormat,
    /// Skip malformed lines and count them instead of failing.
    pub skip_malformed: bool,
    /// Keep only these device names.
    pub devices: Option<BTreeSet<String>>,
    /// Multiplier applied to offsets and lengths (e.g. 512 for sectors).
    pub unit_multiplier: u64,
    /// Stop after this many accepted events.
    pub max_events: Option<u64>,
}

impl ParseOptions {
    pub fn new(format: TraceFormat) -> Self {
        ParseOptions { format, skip_malformed: false, devices: None, unit_multiplier: 1, max_events: None }
    }
}

/// Parsed events plus the device-name table (`DeviceId(i)` is `devices[i]`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<IoEvent>,
    pub devices: Vec<String>,
    pub skipped: u64,
    pub lines: u64,
}

impl Trace {
    pub fn device_name(&self, id: DeviceId) -> &str {
        &self.devices[id.0 as usize]
    }

    /// Events split by device, each list in trace order, indexed by device id.
    pub fn by_device(&self) -> Vec<Vec<IoEvent>> {
        let mut out = vec![Vec::new(); self.devices.len()];
        for e in &self.events {
            out[e.device.0 as usize].push(*e);
        }
        out
    }
}

/// Streams trace lines into a [`Trace`], interning device names in order of
/// first appearance. Several inputs can be fed into one loader.
#[derive(Debug, Default)]
pub struct TraceLoader {
    trace: Trace,
    names: HashMap<String, DeviceId>,
    first_ts: Option<u64>,
    last_ts: Vec<u64>,
}

impl TraceLoader {
    pub fn new() -> Self {
        Self::default()
    }

    fn full(&self, opts: &ParseOptions) -> bool {
        opts.max_events.is_some_and(|m| self.trace.events.len() as u64 >= m)
    }

    pub fn feed<R: BufRead>(&mut self, reader: R, opts: &ParseOptions) -> Result<(), ParseError> {
        for (i, line) in reader.lines().enumerate() {
            if self.full(opts) {
                break;
            }
            let line_no = i as u64 + 1;
            let line = line.map_err(|e| ParseError::Malformed { line: line_no, reason: e.to_string() })?;
            self.trace.lines += 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if line_no == 1 && t.split(',').next().is_some_and(|f| f.trim().eq_ignore_ascii_case(opts.format.header_token())) {
                continue;
            }
            let rec = match opts.format.parse_line(t, line_no) {
                Ok(r) => r,
                Err(e) if opts.skip_malformed => {
                    log::debug!("skipping {e}");
                    self.trace.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if opts.devices.as_ref().is_some_and(|d| !d.contains(&rec.device)) {
                continue;
            }
            let (Some(offset), Some(length)) = (rec.offset.checked_mul(opts.unit_multiplier), rec.length.checked_mul(opts.unit_multiplier)) else {
                let e = ParseError::Malformed { line: line_no, reason: "offset or length overflows after unit scaling".into() };
                if opts.skip_malformed {
                    self.trace.skipped += 1;
                    continue;
                }
                return Err(e);
            };
            let device = self.intern(rec.device);
            let base = *self.first_ts.get_or_insert(rec.timestamp_ns);
            let last = &mut self.last_ts[device.0 as usize];
            let timestamp = rec.timestamp_ns.saturating_sub(base).max(*last);
            *last = timestamp;
            self.trace.events.push(IoEvent { device, op: rec.op, offset, length, timestamp });
        }
        Ok(())
    }

    pub fn feed_path(&mut self, path: &Path, opts: &ParseOptions) -> Result<(), ParseError> {
        let io = |source| ParseError::Io { path: path.to_path_buf(), source };
        let file = File::open(path).map_err(io)?;
        let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
            Box::new(flate2::read::MultiGzDecoder::new(file))
        } else {
            Box::new(file)
        };
        self.feed(BufReader::with_capacity(1 << 16, reader), opts)
    }

    fn intern(&mut self, name: String) -> DeviceId {
        if let Some(id) = self.names.get(&name) {
            return *id;
        }
        let id = DeviceId(self.trace.devices.len() as u32);
        self.trace.devices.push(name.clone());
        self.names.insert(name, id);
        self.last_ts.push(0);
        id
    }

    pub fn finish(self) -> Trace {
        self.trace
    }
}

/// Loads one or more trace files with the same options.
pub fn load_traces<P: AsRef<Path>>(paths: &[P], opts: &ParseOptions) -> Result<Trace, ParseError> {
    let mut loader = TraceLoader::new();
    for p in paths {
        loader.feed_path(p.as_ref(), opts)?;
    }
    Ok(loader.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSR: &str = "\
128166372003061629,prn,1,Read,3154132992,4096,1255
128166372016382155,prn,1,Write,3154124800,8192,2041
128166372026382245,proj,2,Read,1024,512,900
";

    #[test]
    fn msr_stream() {
        let mut l = TraceLoader::new();
        l.feed(MSR.as_bytes(), &ParseOptions::new(TraceFormat::Msr)).unwrap();
        let t = l.finish();
        assert_eq!(t.devices, vec!["prn_1", "proj_2"]);
        assert_eq!(t.events.len(), 3);
        assert_eq!(t.events[0].timestamp, 0);
        assert_eq!(t.events[1].timestamp, (128166372016382155u64 - 128166372003061629) * 100);
        assert_eq!(t.events[1].op, OpKind::Write);
        assert_eq!(t.by_device()[1].len(), 1);
    }

    #[test]
    fn skip_mode_counts_bad_lines() {
        let text = "\
128166372003061629,prn,1,Read,3154132992,4096,1255
128166372003061630,prn,1,Read,notanumber,4096,1255
128166372003061631,prn,1,Write,0,4096,1255
";
        let strict = TraceLoader::new().feed(text.as_bytes(), &ParseOptions::new(TraceFormat::Msr));
        assert!(matches!(strict, Err(ParseError::Malformed { line: 2, .. })));
        let mut opts = ParseOptions::new(TraceFormat::Msr);
        opts.skip_malformed = true;
        let mut l = TraceLoader::new();
        l.feed(text.as_bytes(), &opts).unwrap();
        let t = l.finish();
        assert_eq!(t.events.len(), 2);
        assert_eq!(t.skipped, 1);
    }

    #[test]
    fn filters_limits_and_units() {
        let mut opts = ParseOptions::new(TraceFormat::Msr);
        opts.devices = Some(["proj_2".to_string()].into());
        opts.unit_multiplier = 512;
        let mut l = TraceLoader::new();
        l.feed(MSR.as_bytes(), &opts).unwrap();
        let t = l.finish();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.events[0].offset, 1024 * 512);
        assert_eq!(t.events[0].length, 512 * 512);

        let mut opts = ParseOptions::new(TraceFormat::Msr);
        opts.max_events = Some(2);
        let mut l = TraceLoader::new();
        l.feed(MSR.as_bytes(), &opts).unwrap();
        assert_eq!(l.finish().events.len(), 2);
    }

    #[test]
    fn header_and_timestamp_clamp() {
        let text = "Timestamp,Response,IOType,LUN,Offset,Size\n\
1483228800.5,0.0003,R,4,8192,4096\n\
1483228800.2,0.0003,W,4,0,4096\n";
        let mut l = TraceLoader::new();
        l.feed(text.as_bytes(), &ParseOptions::new(TraceFormat::Systor)).unwrap();
        let t = l.finish();
        assert_eq!(t.devices, vec!["lun4"]);
        assert_eq!(t.events[0].timestamp, 0);
        // earlier raw timestamp is clamped to keep per-device order
        assert_eq!(t.events[1].timestamp, 0);
    }

    #[test]
    fn gz_input() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::fast());
        enc.write_all(MSR.as_bytes()).unwrap();
        enc.finish().unwrap();
        let t = load_traces(&[&path], &ParseOptions::new(TraceFormat::Msr)).unwrap();
        assert_eq!(t.events.len(), 3);
        assert!(matches!(
            load_traces(&[dir.path().join("missing.csv")], &ParseOptions::new(TraceFormat::Msr)),
            Err(ParseError::Io { .. })
        ));
    }

    #[test]
    fn format_names() {
        assert_eq!("MSR".parse::<TraceFormat>(), Ok(TraceFormat::Msr));
        assert!("blk".parse::<TraceFormat>().is_err());
    }
}
