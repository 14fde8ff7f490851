use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::report::{flatten, ReplayReport};

/// One metric across all compared reports. Deltas and ratios are relative to
/// the first report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `None` where the baseline value is zero.
    pub ratios: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of every aggregate metric.
pub fn compare(labels: &[String], reports: &[ReplayReport]) -> Comparison {
    assert_eq!(labels.len(), reports.len());
    let flat: Vec<_> = reports.iter().map(|r| flatten(&r.aggregate)).collect();
    let metrics: BTreeSet<&String> = flat.iter().flat_map(|m| m.keys()).collect();
    let rows = metrics
        .into_iter()
        .map(|metric| {
            let values: Vec<f64> = flat.iter().map(|m| m.get(metric).copied().unwrap_or(0.0)).collect();
            let base = values.first().copied().unwrap_or(0.0);
            ComparisonRow {
                metric: metric.clone(),
                deltas: values.iter().map(|v| v - base).collect(),
                ratios: values.iter().map(|v| (base != 0.0).then(|| v / base)).collect(),
                values,
            }
        })
        .collect();
    Comparison { labels: labels.to_vec(), rows }
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        for l in &self.labels {
            header.push(l.clone());
        }
        for l in self.labels.iter().skip(1) {
            header.push(format!("delta:{l}"));
            header.push(format!("ratio:{l}"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.metric.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            for i in 1..r.values.len() {
                rec.push(r.deltas[i].to_string());
                rec.push(r.ratios[i].map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        write!(f, "{:<width$}", "metric")?;
        for l in &self.labels {
            write!(f, " {:>18}", l)?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "{:<width$}", r.metric)?;
            for (i, v) in r.values.iter().enumerate() {
                let cell = match (i, r.ratios[i]) {
                    (0, _) | (_, None) => format!("{v:.4}"),
                    (_, Some(x)) => format!("{v:.4} ({x:.2}x)"),
                };
                write!(f, " {:>18}", cell)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
