use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use super::{Curve, CurvePoint, ExperimentResults, Summary};
use crate::error::{Error, Result};
use crate::fmt_sig17;

pub const CSV_HEADER: [&str; 15] = [
    "experiment",
    "algorithm",
    "B",
    "N",
    "R",
    "mu",
    "trial_count",
    "t",
    "t_prime",
    "sim_seconds",
    "metric",
    "mean",
    "median",
    "q10",
    "q90",
];

pub const RAW_HEADER: [&str; 12] = [
    "experiment",
    "algorithm",
    "B",
    "N",
    "R",
    "mu",
    "trial",
    "t",
    "t_prime",
    "sim_seconds",
    "metric",
    "value",
];

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn check_nonempty(results: &ExperimentResults) -> Result<()> {
    if results.curves.is_empty() || results.curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::EmptyResults);
    }
    Ok(())
}

fn prefix(results: &ExperimentResults, c: &Curve) -> [String; 6] {
    [
        results.experiment.clone(),
        c.id.clone(),
        c.minibatch.to_string(),
        c.nodes.to_string(),
        c.rounds.to_string(),
        c.discarded.to_string(),
    ]
}

/// Aggregated results as CSV; rows are ordered by algorithm, then
/// checkpoint, then metric.
pub fn write_csv(results: &ExperimentResults, path: impl AsRef<Path>) -> Result<()> {
    check_nonempty(results)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for c in &results.curves {
        let head = prefix(results, c);
        for p in &c.points {
            for (metric, s) in results.metrics.iter().zip(&p.stats) {
                w.write_record(head.iter().cloned().chain([
                    c.trial_count.to_string(),
                    p.t.to_string(),
                    p.t_prime.to_string(),
                    fmt_sig17(p.sim_seconds),
                    metric.clone(),
                    fmt_sig17(s.mean),
                    fmt_sig17(s.median),
                    fmt_sig17(s.q10),
                    fmt_sig17(s.q90),
                ]))?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path.as_ref(), &bytes)
}

/// Per-trial values without aggregation.
pub fn write_raw_csv(results: &ExperimentResults, path: impl AsRef<Path>) -> Result<()> {
    check_nonempty(results)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RAW_HEADER)?;
    for c in &results.curves {
        let head = prefix(results, c);
        for p in &c.points {
            for (metric, values) in results.metrics.iter().zip(&p.raw) {
                for (trial, v) in values.iter().enumerate() {
                    w.write_record(head.iter().cloned().chain([
                        trial.to_string(),
                        p.t.to_string(),
                        p.t_prime.to_string(),
                        fmt_sig17(p.sim_seconds),
                        metric.clone(),
                        fmt_sig17(*v),
                    ]))?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path.as_ref(), &bytes)
}

/// Read an aggregated CSV back; per-trial values are not restored.
pub fn read_results_csv(path: impl AsRef<Path>) -> Result<ExperimentResults> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut experiment = String::new();
    let mut metrics: Vec<String> = Vec::new();
    let mut curves: IndexMap<String, Curve> = IndexMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let bad = |reason: String| Error::MalformedRecord { line, reason };
        let int = |k: usize| -> Result<u64> {
            record[k]
                .parse()
                .map_err(|_| bad(format!("column {} is not an integer", CSV_HEADER[k])))
        };
        let float = |k: usize| -> Result<f64> {
            record[k]
                .parse()
                .map_err(|_| bad(format!("column {} is not a number", CSV_HEADER[k])))
        };
        experiment = record[0].to_string();
        let metric = record[10].to_string();
        let m = match metrics.iter().position(|x| *x == metric) {
            Some(m) => m,
            None => {
                metrics.push(metric);
                metrics.len() - 1
            }
        };
        let curve = curves.entry(record[1].to_string()).or_insert_with(|| Curve {
            id: record[1].to_string(),
            label: record[1].to_string(),
            minibatch: 0,
            nodes: 0,
            rounds: 0,
            discarded: 0,
            trial_count: 0,
            points: Vec::new(),
        });
        curve.minibatch = int(2)? as usize;
        curve.nodes = int(3)? as usize;
        curve.rounds = int(4)? as usize;
        curve.discarded = int(5)? as usize;
        curve.trial_count = int(6)? as usize;
        let t = int(7)?;
        let summary = Summary {
            mean: float(11)?,
            median: float(12)?,
            q10: float(13)?,
            q90: float(14)?,
        };
        if curve.points.last().is_none_or(|p| p.t != t) {
            curve.points.push(CurvePoint {
                t,
                t_prime: int(8)?,
                sim_seconds: float(9)?,
                stats: Vec::new(),
                raw: Vec::new(),
            });
        }
        let point = curve.points.last_mut().expect("just pushed");
        if point.stats.len() <= m {
            point.stats.resize(m + 1, Summary { mean: f64::NAN, median: f64::NAN, q10: f64::NAN, q90: f64::NAN });
        }
        point.stats[m] = summary;
    }
    let results = ExperimentResults {
        experiment,
        metrics,
        curves: curves.into_values().collect(),
    };
    check_nonempty(&results)?;
    Ok(results)
}
