//! Seeded synthetic block workloads.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{IoEvent, OpKind, TraceFormat};
use crate::allocator::align;
use crate::error::ConfigError;
use crate::{DeviceId, KIB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SizeDistribution {
    Fixed { size: u64 },
    /// Equal probability for each listed size.
    Uniform { sizes: Vec<u64> },
    /// `(size, cumulative probability)` pairs, non-decreasing, ending at 1.
    Empirical { cdf: Vec<(u64, f64)> },
}

impl SizeDistribution {
    /// Small-request-dominant shape: 55% of requests at or below 4 KiB with a
    /// tail out to 1 MiB.
    pub fn small_dominant() -> Self {
        SizeDistribution::Empirical {
            cdf: vec![
                (4 * KIB, 0.55),
                (8 * KIB, 0.65),
                (16 * KIB, 0.74),
                (32 * KIB, 0.82),
                (64 * KIB, 0.89),
                (128 * KIB, 0.94),
                (256 * KIB, 0.97),
                (512 * KIB, 0.99),
                (1024 * KIB, 1.0),
            ],
        }
    }

    /// Reads `size,cumulative_probability` lines (sizes may use K/M suffixes).
    pub fn from_cdf_text(text: &str) -> Result<Self, ConfigError> {
        let mut cdf = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (s, p) = t
                .split_once(',')
                .ok_or_else(|| ConfigError::Invalid(format!("CDF line {}: expected `size,probability`", i + 1)))?;
            let size = crate::parse_size(s).ok_or_else(|| ConfigError::Invalid(format!("CDF line {}: bad size `{s}`", i + 1)))?;
            let p: f64 = p.trim().parse().map_err(|_| ConfigError::Invalid(format!("CDF line {}: bad probability `{p}`", i + 1)))?;
            cdf.push((size, p));
        }
        let d = SizeDistribution::Empirical { cdf };
        d.validate()?;
        Ok(d)
    }

    /// Probability of each distinct size.
    pub fn probabilities(&self) -> Vec<(u64, f64)> {
        match self {
            SizeDistribution::Fixed { size } => vec![(*size, 1.0)],
            SizeDistribution::Uniform { sizes } => sizes.iter().map(|s| (*s, 1.0 / sizes.len() as f64)).collect(),
            SizeDistribution::Empirical { cdf } => {
                let mut prev = 0.0;
                cdf.iter()
                    .map(|&(s, c)| {
                        let p = c - prev;
                        prev = c;
                        (s, p)
                    })
                    .collect()
            }
        }
    }

    fn max_size(&self) -> u64 {
        self.probabilities().iter().map(|p| p.0).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        match self {
            SizeDistribution::Fixed { size } if *size == 0 => return invalid("fixed size must be positive"),
            SizeDistribution::Uniform { sizes } if sizes.is_empty() || sizes.contains(&0) => {
                return invalid("uniform size list must be non-empty and positive")
            }
            SizeDistribution::Empirical { cdf } => {
                if cdf.is_empty() {
                    return invalid("empirical CDF is empty");
                }
                let mut prev = 0.0;
                for &(s, c) in cdf {
                    if s == 0 || !(0.0..=1.0 + 1e-9).contains(&c) || c < prev {
                        return invalid("empirical CDF must have positive sizes and non-decreasing probabilities in [0, 1]");
                    }
                    prev = c;
                }
                if (prev - 1.0).abs() > 1e-9 {
                    return invalid("empirical CDF must end at probability 1");
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            SizeDistribution::Fixed { size } => *size,
            SizeDistribution::Uniform { sizes } => sizes[rng.random_range(0..sizes.len())],
            SizeDistribution::Empirical { cdf } => {
                let u: f64 = rng.random();
                cdf.iter().find(|(_, c)| u < *c).unwrap_or(cdf.last().unwrap()).0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Locality {
    Uniform,
    Zipfian { exponent: f64 },
    /// With `continue_probability` the next request on a device starts where
    /// the previous one ended; otherwise it jumps (zipfian if an exponent is
    /// given, uniform otherwise).
    SequentialMix {
        continue_probability: f64,
        #[serde(default)]
        zipf_exponent: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    #[serde(default = "one")]
    pub devices: u32,
    /// Per-device address space in bytes.
    pub address_space: u64,
    /// Jump targets are multiples of this.
    #[serde(default = "four_k")]
    pub offset_alignment: u64,
    pub sizes: SizeDistribution,
    pub read_fraction: f64,
    pub locality: Locality,
}

fn one() -> u32 {
    1
}

fn four_k() -> u64 {
    4 * KIB
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.devices == 0 {
            return invalid("at least one device is required".into());
        }
        if self.offset_alignment == 0 || self.address_space < self.offset_alignment {
            return invalid("address space must hold at least one aligned slot".into());
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return invalid(format!("read fraction {} outside [0, 1]", self.read_fraction));
        }
        self.sizes.validate()?;
        if self.sizes.max_size() > self.address_space {
            return invalid("request size exceeds the address space".into());
        }
        match &self.locality {
            Locality::Zipfian { exponent } | Locality::SequentialMix { zipf_exponent: Some(exponent), .. } if exponent.is_nan() || *exponent <= 0.0 => {
                return invalid(format!("zipf exponent {exponent} must be positive"))
            }
            Locality::SequentialMix { continue_probability: p, .. } if !(0.0..=1.0).contains(p) => {
                return invalid(format!("continue probability {p} outside [0, 1]"))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Infinite deterministic event stream for a [`WorkloadSpec`].
pub struct WorkloadGenerator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    zipf: Option<Zipf<f64>>,
    slots: u64,
    // multiplier coprime to `slots`; scatters zipf ranks over the space
    scatter: u64,
    prev_end: Vec<Option<u64>>,
    emitted: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl WorkloadGenerator {
    pub fn new(spec: WorkloadSpec) -> Result<Self, ConfigError> {
        spec.validate()?;
        let slots = spec.address_space / spec.offset_alignment;
        let exponent = match spec.locality {
            Locality::Zipfian { exponent } => Some(exponent),
            Locality::SequentialMix { zipf_exponent, .. } => zipf_exponent,
            Locality::Uniform => None,
        };
        let zipf = exponent
            .map(|s| Zipf::new(slots as f64, s).map_err(|e| ConfigError::Invalid(format!("zipf: {e}"))))
            .transpose()?;
        let mut scatter = 0x9E37_79B9_7F4A_7C15 % slots.max(1);
        while slots > 1 && gcd(scatter, slots) != 1 {
            scatter += 1;
        }
        Ok(WorkloadGenerator {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            prev_end: vec![None; spec.devices as usize],
            spec,
            zipf,
            slots,
            scatter: scatter.max(1),
            emitted: 0,
        })
    }

    fn jump(&mut self) -> u64 {
        let slot = match &self.zipf {
            Some(z) => {
                let rank = (z.sample(&mut self.rng) as u64).clamp(1, self.slots) - 1;
                ((rank as u128 * self.scatter as u128) % self.slots as u128) as u64
            }
            None => self.rng.random_range(0..self.slots),
        };
        slot * self.spec.offset_alignment
    }
}

impl Iterator for WorkloadGenerator {
    type Item = IoEvent;

    fn next(&mut self) -> Option<IoEvent> {
        let dev = if self.spec.devices == 1 { 0 } else { self.rng.random_range(0..self.spec.devices) };
        let op = if self.rng.random::<f64>() < self.spec.read_fraction { OpKind::Read } else { OpKind::Write };
        let length = self.spec.sizes.sample(&mut self.rng);
        let space = self.spec.address_space;
        let cont = match self.spec.locality {
            Locality::SequentialMix { continue_probability, .. } => self.rng.random::<f64>() < continue_probability,
            _ => false,
        };
        let offset = match self.prev_end[dev as usize] {
            Some(end) if cont && end + length <= space => end,
            _ => {
                let off = self.jump();
                if off + length > space {
                    align(space - length, self.spec.offset_alignment)
                } else {
                    off
                }
            }
        };
        self.prev_end[dev as usize] = Some(offset + length);
        let timestamp = self.emitted * 1000;
        self.emitted += 1;
        Some(IoEvent { device: DeviceId(dev), op, offset, length, timestamp })
    }
}

/// First `n` events of the workload.
pub fn generate(spec: &WorkloadSpec, n: usize) -> Result<Vec<IoEvent>, ConfigError> {
    Ok(WorkloadGenerator::new(spec.clone())?.take(n).collect())
}

/// Writes events in the given trace layout so the matching parser reads
/// them back. Device `i` is named `synth_<i>` (MSR), `vd<i>` (Alibaba) or
/// `lun<i>` (Systor).
pub fn write_trace<W: Write>(events: &[IoEvent], format: TraceFormat, mut out: W) -> io::Result<()> {
    for e in events {
        let d = e.device.0;
        match format {
            TraceFormat::Msr => {
                let ty = if e.op == OpKind::Read { "Read" } else { "Write" };
                writeln!(out, "{},synth,{d},{ty},{},{},0", e.timestamp / 100, e.offset, e.length)?;
            }
            TraceFormat::Alibaba => {
                let ty = if e.op == OpKind::Read { 'R' } else { 'W' };
                writeln!(out, "{d},{ty},{},{},{}", e.offset, e.length, e.timestamp / 1000)?;
            }
            TraceFormat::Systor => {
                let ty = if e.op == OpKind::Read { 'R' } else { 'W' };
                let (s, ns) = (e.timestamp / 1_000_000_000, e.timestamp % 1_000_000_000);
                writeln!(out, "{s}.{ns:09},0.0,{ty},{d},{},{}", e.offset, e.length)?;
            }
        }
    }
    out.flush()
}
