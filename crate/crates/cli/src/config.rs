//! Run configuration: an optional JSON file overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use varcache::ingestion::{Locality, ParseOptions, SizeDistribution, TraceFormat, WorkloadSpec};
use varcache::{parse_size, BlockSizeConfig, EngineConfig, FillPolicy, ScanRange, WritePolicy, GIB, KIB};

/// Configuration problem found before any replay starts (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Backing store could not be set up (exit status 4).
#[derive(Debug)]
pub struct BackendError(pub String);

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub traces: Vec<PathBuf>,
    pub format: TraceFormat,
    pub devices: Option<Vec<String>>,
    pub sizes: BlockSizeConfig,
    pub cache_bytes: Option<u64>,
    pub wss_ratio: Option<f64>,
    pub policy: WritePolicy,
    pub max_events: Option<u64>,
    pub seed: u64,
    /// Directory for file-backed device images; `None` discards data.
    pub store: Option<PathBuf>,
    pub strict_range: bool,
    pub always_fill: bool,
    pub flush_interval: u64,
    pub skip_malformed: bool,
    pub unit_multiplier: u64,
    pub workers: Option<usize>,
    pub epoch_interval: u64,
    pub timing: bool,
    pub workload: Option<WorkloadSpec>,
    pub events: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            traces: Vec::new(),
            format: TraceFormat::Msr,
            devices: None,
            sizes: BlockSizeConfig::new(vec![32 * KIB, 64 * KIB, 128 * KIB, 256 * KIB]).unwrap(),
            cache_bytes: None,
            wss_ratio: None,
            policy: WritePolicy::WriteBack,
            max_events: None,
            seed: 0,
            store: None,
            strict_range: false,
            always_fill: false,
            flush_interval: 0,
            skip_malformed: false,
            unit_multiplier: 1,
            workers: None,
            epoch_interval: 0,
            timing: false,
            workload: None,
            events: 100_000,
        }
    }
}

/// How each device's cache is sized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sizing {
    Bytes(u64),
    WssRatio(f64),
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Ratio sizing at 10% of WSS when neither mode is given.
    pub fn sizing(&self) -> Result<Sizing> {
        match (self.cache_bytes, self.wss_ratio) {
            (Some(_), Some(_)) => usage("give either a cache size or a WSS ratio, not both"),
            (Some(0), None) => usage("cache size must be positive"),
            (Some(b), None) => Ok(Sizing::Bytes(b)),
            (None, Some(r)) if !(r > 0.0 && r.is_finite()) => usage(format!("WSS ratio {r} must be positive")),
            (None, Some(r)) => Ok(Sizing::WssRatio(r)),
            (None, None) => Ok(Sizing::WssRatio(0.1)),
        }
    }

    pub fn parse_options(&self) -> ParseOptions {
        let mut o = ParseOptions::new(self.format);
        o.skip_malformed = self.skip_malformed;
        o.devices = self.devices.as_ref().map(|d| d.iter().cloned().collect());
        o.unit_multiplier = self.unit_multiplier;
        o.max_events = self.max_events;
        o
    }

    pub fn engine_config(&self, capacity: u64) -> EngineConfig {
        let mut c = EngineConfig::new(self.sizes.clone(), capacity);
        c.policy = self.policy;
        c.scan_range = if self.strict_range { ScanRange::Strict } else { ScanRange::Verbatim };
        c.fill = if self.always_fill { FillPolicy::Always } else { FillPolicy::Partial };
        c.flush_interval = self.flush_interval;
        c.epoch_interval = self.epoch_interval;
        c.track_data = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.sizing()?;
        if self.unit_multiplier == 0 {
            return usage("unit multiplier must be positive");
        }
        if self.workers == Some(0) {
            return usage("worker count must be positive");
        }
        Ok(())
    }
}

fn size_arg(s: &str) -> Result<u64, String> {
    parse_size(s).ok_or_else(|| format!("`{s}` is not a size (e.g. 4096, 32K, 1M)"))
}

fn sizes_arg(s: &str) -> Result<BlockSizeConfig, String> {
    let sizes = s.split(',').map(|p| size_arg(p.trim())).collect::<Result<Vec<_>, _>>()?;
    BlockSizeConfig::new(sizes).map_err(|e| e.to_string())
}

fn policy_arg(s: &str) -> Result<WritePolicy, String> {
    match s {
        "write-back" | "wb" => Ok(WritePolicy::WriteBack),
        "write-through" | "wt" => Ok(WritePolicy::WriteThrough),
        _ => Err(format!("unknown policy `{s}` (write-back or write-through)")),
    }
}

/// Flags shared by every verb that replays requests.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace file (repeatable); `.gz` is decompressed.
    #[arg(long = "trace")]
    pub traces: Vec<PathBuf>,
    /// msr, alibaba or systor
    #[arg(long)]
    pub format: Option<TraceFormat>,
    /// Only replay these devices (comma separated names).
    #[arg(long, value_delimiter = ',')]
    pub devices: Option<Vec<String>>,
    /// Block sizes, e.g. 32K,64K,128K,256K.
    #[arg(long, value_parser = sizes_arg)]
    pub sizes: Option<BlockSizeConfig>,
    /// Cache size per device.
    #[arg(long, value_parser = size_arg, conflicts_with = "wss_ratio")]
    pub cache_bytes: Option<u64>,
    /// Cache size per device as a fraction of its working set (default 0.1).
    #[arg(long)]
    pub wss_ratio: Option<f64>,
    /// write-back or write-through.
    #[arg(long, value_parser = policy_arg)]
    pub policy: Option<WritePolicy>,
    /// Stop after this many trace records
    #[arg(long)]
    pub max_events: Option<u64>,
    /// Seed for synthetic workloads
    #[arg(long)]
    pub seed: Option<u64>,
    /// `null` or a directory for per-device image files.
    #[arg(long)]
    pub store: Option<String>,
    /// Scan only steps that hold request bytes.
    #[arg(long)]
    pub strict_range: bool,
    /// Fill whole new blocks from the backend on write misses.
    #[arg(long)]
    pub always_fill: bool,
    /// Flush dirty blocks every N requests (0 = never).
    #[arg(long)]
    pub flush_interval: Option<u64>,
    /// Count and skip unparsable lines instead of failing
    #[arg(long)]
    pub skip_malformed: bool,
    /// Scale offsets and lengths, e.g. 512 for sector units.
    #[arg(long)]
    pub unit_multiplier: Option<u64>,
    /// Replay worker threads (default: one per device).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Record an epoch sample every N requests.
    #[arg(long)]
    pub epoch_interval: Option<u64>,
    /// Record engine wall-clock time in the report.
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if !self.traces.is_empty() {
            c.traces = self.traces.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        set!(format, sizes, policy, seed, flush_interval, unit_multiplier, epoch_interval);
        if self.devices.is_some() {
            c.devices = self.devices.clone();
        }
        if self.max_events.is_some() {
            c.max_events = self.max_events;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        // A sizing flag replaces whichever sizing mode the file chose.
        if self.cache_bytes.is_some() || self.wss_ratio.is_some() {
            c.cache_bytes = self.cache_bytes;
            c.wss_ratio = self.wss_ratio;
        }
        match self.store.as_deref() {
            Some("null") => c.store = None,
            Some(dir) => c.store = Some(dir.into()),
            None => {}
        }
        c.strict_range |= self.strict_range;
        c.always_fill |= self.always_fill;
        c.skip_malformed |= self.skip_malformed;
        c.timing |= self.timing;
        c.validate()?;
        Ok(c)
    }
}

/// Synthetic workload flags; `--workload` loads a full JSON spec instead.
#[derive(Debug, Clone, Default, Args)]
pub struct WorkloadArgs {
    /// Workload spec JSON.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Number of requests to generate.
    #[arg(long)]
    pub events: Option<u64>,
    #[arg(long)]
    pub synthetic_devices: Option<u32>,
    /// Per-device address space.
    #[arg(long, value_parser = size_arg)]
    pub address_space: Option<u64>,
    #[arg(long)]
    pub read_fraction: Option<f64>,
    /// small | fixed:SIZE | uniform:SIZE,SIZE,... | cdf:FILE
    #[arg(long)]
    pub size_dist: Option<String>,
    /// uniform | zipf:EXP | seq:P[:EXP]
    #[arg(long)]
    pub locality: Option<String>,
}

fn parse_size_dist(s: &str) -> Result<SizeDistribution> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let bad = || UsageError(format!("bad size distribution `{s}`"));
    Ok(match kind {
        "small" => SizeDistribution::small_dominant(),
        "fixed" => SizeDistribution::Fixed { size: parse_size(rest).ok_or_else(bad)? },
        "uniform" => SizeDistribution::Uniform {
            sizes: rest.split(',').map(|p| parse_size(p.trim()).ok_or_else(bad)).collect::<Result<_, _>>()?,
        },
        "cdf" => {
            let text = std::fs::read_to_string(rest).with_context(|| format!("reading CDF {rest}"))?;
            SizeDistribution::from_cdf_text(&text)?
        }
        _ => return Err(bad().into()),
    })
}

fn parse_locality(s: &str) -> Result<Locality> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<f64>().map_err(|_| UsageError(format!("bad locality `{s}`")));
    Ok(match parts.as_slice() {
        ["uniform"] => Locality::Uniform,
        ["zipf", e] => Locality::Zipfian { exponent: num(e)? },
        ["seq", p] => Locality::SequentialMix { continue_probability: num(p)?, zipf_exponent: None },
        ["seq", p, e] => Locality::SequentialMix { continue_probability: num(p)?, zipf_exponent: Some(num(e)?) },
        _ => return usage(format!("bad locality `{s}`")),
    })
}

impl WorkloadArgs {
    /// Builds the workload into `cfg`, starting from the spec file, the
    /// config's own spec, or a small-request zipfian default.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let mut spec = match &self.workload {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading workload {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("workload {}: {e}", path.display())))?
            }
            None => cfg.workload.clone().unwrap_or(WorkloadSpec {
                seed: cfg.seed,
                devices: 1,
                address_space: 16 * GIB,
                offset_alignment: 4 * KIB,
                sizes: SizeDistribution::small_dominant(),
                read_fraction: 0.7,
                locality: Locality::Zipfian { exponent: 1.2 },
            }),
        };
        spec.seed = cfg.seed;
        if let Some(n) = self.synthetic_devices {
            spec.devices = n;
        }
        if let Some(a) = self.address_space {
            spec.address_space = a;
        }
        if let Some(r) = self.read_fraction {
            spec.read_fraction = r;
        }
        if let Some(d) = &self.size_dist {
            spec.sizes = parse_size_dist(d)?;
        }
        if let Some(l) = &self.locality {
            spec.locality = parse_locality(l)?;
        }
        spec.validate()?;
        if let Some(n) = self.events {
            cfg.events = n;
        }
        cfg.workload = Some(spec);
        Ok(())
    }
}
