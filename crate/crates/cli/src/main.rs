//! `varcache`: replay block traces through the variable-size block cache,
//! simulate synthetic workloads and compare reports.

mod config;
mod replay;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use varcache::ingestion::{load_traces, per_device_wss, write_trace, TraceFormat};
use varcache::metrics::{compare, ReplayReport};
use varcache::{parse_size, BlockSizeConfig, ConfigError, EngineError, ParseError, StoreError, WritePolicy};

use config::{usage, BackendError, RunArgs, RunConfig, UsageError, WorkloadArgs};

#[derive(Parser)]
#[command(name = "varcache", version, about = "Variable-size block cache trace replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay traces and write a JSON report.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Generate a synthetic workload and replay it.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        workload: WorkloadArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print per-device working-set sizes.
    Wss {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "msr")]
        format: TraceFormat,
        /// Granularity of the working set.
        #[arg(long, default_value = "32K")]
        step: String,
        #[arg(long, value_delimiter = ',')]
        devices: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        unit_multiplier: u64,
        #[arg(long)]
        skip_malformed: bool,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Replay the same input under each value of one axis and compare.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Replay a synthetic workload instead of traces.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, value_enum)]
        axis: Axis,
        /// One value per run; for `sizes` a comma-separated size list.
        #[arg(long = "value", required = true)]
        values: Vec<String>,
        /// Write each run's report here as `<n>.json`.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Write a synthetic workload as a trace file.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value = "msr")]
        format: TraceFormat,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare reports side by side, relative to the first.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Sizes,
    WssRatio,
    CacheBytes,
    Policy,
}

#[derive(Debug, Clone, Default, clap::Args)]
struct OutputArgs {
    /// Report path (default: standard output).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write a CSV export here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_report(report: &ReplayReport, out: &OutputArgs) -> Result<()> {
    let mut w = writer(out.output.as_deref())?;
    w.write_all(report.to_json().as_bytes())?;
    w.flush()?;
    if let Some(csv) = &out.csv {
        report.write_csv(writer(Some(csv))?)?;
    }
    Ok(())
}

fn apply_axis(cfg: &mut RunConfig, axis: Axis, value: &str) -> Result<()> {
    let bad = |what: &str| UsageError(format!("sweep value `{value}` is not a {what}"));
    match axis {
        Axis::Sizes => {
            let sizes = value.split(',').map(|s| parse_size(s.trim()).ok_or_else(|| bad("size list"))).collect::<Result<_, _>>()?;
            cfg.sizes = BlockSizeConfig::new(sizes)?;
        }
        Axis::WssRatio => {
            cfg.wss_ratio = Some(value.parse().map_err(|_| bad("ratio"))?);
            cfg.cache_bytes = None;
        }
        Axis::CacheBytes => {
            cfg.cache_bytes = Some(parse_size(value).ok_or_else(|| bad("size"))?);
            cfg.wss_ratio = None;
        }
        Axis::Policy => {
            cfg.policy = match value {
                "write-back" | "wb" => WritePolicy::WriteBack,
                "write-through" | "wt" => WritePolicy::WriteThrough,
                _ => return Err(bad("policy").into()),
            }
        }
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Replay { run, out } => {
            let cfg = run.resolve()?;
            let trace = replay::load(&cfg)?;
            emit_report(&replay::replay(&cfg, &trace)?, &out)
        }
        Command::Simulate { run, workload, out } => {
            let mut cfg = run.resolve()?;
            workload.apply(&mut cfg)?;
            let trace = replay::synthesize(&cfg)?;
            emit_report(&replay::replay(&cfg, &trace)?, &out)
        }
        Command::Wss { traces, format, step, devices, unit_multiplier, skip_malformed, json } => {
            let step = parse_size(&step).filter(|s| s.is_power_of_two()).ok_or_else(|| UsageError(format!("bad step `{step}`")))?;
            let cfg = RunConfig {
                format,
                devices,
                unit_multiplier,
                skip_malformed,
                ..RunConfig::default()
            };
            let trace = load_traces(&traces, &cfg.parse_options())?;
            let wss = per_device_wss(&trace.events, step);
            let rows: Vec<(String, u64)> = wss.iter().map(|(d, b)| (trace.device_name(*d).to_string(), *b)).collect();
            let total: u64 = rows.iter().map(|r| r.1).sum();
            let mut w = io::stdout().lock();
            if json {
                let devices: serde_json::Map<String, serde_json::Value> = rows.into_iter().map(|(n, b)| (n, b.into())).collect();
                writeln!(w, "{}", serde_json::json!({ "step": step, "devices": devices, "total": total }))?;
            } else {
                for (name, bytes) in rows {
                    writeln!(w, "{name}\t{bytes}")?;
                }
                writeln!(w, "total\t{total}")?;
            }
            Ok(())
        }
        Command::Sweep { run, workload, synthetic, axis, values, report_dir, out } => {
            let base = {
                let mut c = run.resolve()?;
                if synthetic {
                    workload.apply(&mut c)?;
                }
                c
            };
            let trace = if synthetic { replay::synthesize(&base)? } else { replay::load(&base)? };
            let mut reports = Vec::new();
            for (i, v) in values.iter().enumerate() {
                let mut cfg = base.clone();
                apply_axis(&mut cfg, axis, v)?;
                log::info!("sweep run {i}: {v}");
                let report = replay::replay(&cfg, &trace)?;
                if let Some(dir) = &report_dir {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join(format!("{i}.json")), report.to_json())?;
                }
                reports.push(report);
            }
            let table = compare(&values, &reports);
            let mut w = writer(out.output.as_deref())?;
            write!(w, "{table}")?;
            w.flush()?;
            if let Some(csv) = &out.csv {
                table.write_csv(writer(Some(csv))?)?;
            }
            Ok(())
        }
        Command::Generate { seed, workload, format, output } => {
            let mut cfg = RunConfig { seed, ..RunConfig::default() };
            workload.apply(&mut cfg)?;
            let trace = replay::synthesize(&cfg)?;
            let mut w = writer(output.as_deref())?;
            write_trace(&trace.events, format, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Compare { reports, labels, out } => {
            let labels = labels.unwrap_or_else(|| reports.iter().map(|p| p.display().to_string()).collect());
            if labels.len() != reports.len() {
                return usage(format!("{} labels for {} reports", labels.len(), reports.len()));
            }
            let parsed = reports
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    ReplayReport::from_json(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())).into())
                })
                .collect::<Result<Vec<_>>>()?;
            let table = compare(&labels, &parsed);
            let mut w = writer(out.output.as_deref())?;
            write!(w, "{table}")?;
            w.flush()?;
            if let Some(csv) = &out.csv {
                table.write_csv(writer(Some(csv))?)?;
            }
            Ok(())
        }
    }
}

/// 2 for configuration errors, 3 for trace parse errors, 4 for backing
/// store errors, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<ParseError>() {
            return 3;
        }
        if cause.is::<StoreError>() || cause.is::<BackendError>() {
            return 4;
        }
        match cause.downcast_ref::<EngineError>() {
            Some(EngineError::Store(_)) => return 4,
            Some(EngineError::Request(_)) => return 3,
            None => {}
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (e.g. `| head`) is not a failure.
        Err(e) if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
