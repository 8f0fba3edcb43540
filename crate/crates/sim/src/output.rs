//! CSV and NDJSON artifacts for a simulated experiment.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Comparison, Sample};
use crate::harness::ConditionRun;
use crate::summary::ConditionSummary;
use crate::SimError;

pub const SUMMARY: &str = "summary.csv";
pub const PER_COUNT: &str = "per_count.csv";
pub const SIZE_BUCKETS: &str = "size_buckets.csv";
pub const COMPLETION_BINS: &str = "completion_bins.csv";
pub const HITS_PER_WORKER: &str = "hits_per_worker.csv";
pub const MIOU_HISTOGRAM: &str = "miou_histogram.csv";
pub const UNITS: &str = "units.csv";
pub const COMPARISONS: &str = "comparisons.csv";
pub const EVENTS_DIR: &str = "events";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |e| SimError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<PathBuf, SimError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub mean_miou: f64,
    pub se: f64,
    pub mean_time: f64,
    pub n: usize,
    pub unit: String,
    pub excluded_workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRow {
    pub condition: String,
    pub unit: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub baseline: String,
    pub mean: f64,
    pub baseline_mean: f64,
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub m: usize,
    pub verdict: String,
}

impl From<&Comparison> for ComparisonRow {
    fn from(c: &Comparison) -> Self {
        Self {
            condition: c.condition.clone(),
            baseline: c.baseline.clone(),
            mean: c.mean,
            baseline_mean: c.baseline_mean,
            u: c.stat.u,
            p: c.stat.p,
            p_adjusted: c.stat.p_adjusted,
            m: c.m,
            verdict: c.verdict.clone(),
        }
    }
}

/// Writes every table and curve for the summaries into `dir`.
pub fn emit_outputs(summaries: &[ConditionSummary], dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut paths = Vec::new();
    paths.push(write_rows(
        dir,
        SUMMARY,
        summaries.iter().map(|s| SummaryRow {
            condition: s.condition.clone(),
            mean_miou: s.mean_miou,
            se: s.se,
            mean_time: s.mean_time,
            n: s.n,
            unit: s.unit.label().into(),
            excluded_workers: s.excluded.len(),
        }),
    )?);

    #[derive(Serialize)]
    struct Count<'a> {
        condition: &'a str,
        n: usize,
        responses: usize,
        mean_miou: f64,
        recall_50: f64,
        mean_time: f64,
    }
    paths.push(write_rows(
        dir,
        PER_COUNT,
        summaries.iter().flat_map(|s| {
            s.per_count.iter().map(|r| Count {
                condition: &s.condition,
                n: r.n,
                responses: r.responses,
                mean_miou: r.mean_miou,
                recall_50: r.recall_50,
                mean_time: r.mean_time,
            })
        }),
    )?);

    #[derive(Serialize)]
    struct Bucket<'a> {
        condition: &'a str,
        lower: f64,
        upper: Option<f64>,
        count: usize,
        mean_iou: Option<f64>,
    }
    paths.push(write_rows(
        dir,
        SIZE_BUCKETS,
        summaries.iter().flat_map(|s| {
            s.size_buckets.iter().map(|b| Bucket {
                condition: &s.condition,
                lower: b.lower,
                upper: b.upper,
                count: b.count,
                mean_iou: b.mean,
            })
        }),
    )?);

    #[derive(Serialize)]
    struct Bin<'a> {
        condition: &'a str,
        first: u32,
        last: Option<u32>,
        responses: usize,
        mean_miou: Option<f64>,
    }
    paths.push(write_rows(
        dir,
        COMPLETION_BINS,
        summaries.iter().flat_map(|s| {
            s.completion_bins.iter().map(|b| Bin {
                condition: &s.condition,
                first: b.first,
                last: b.last,
                responses: b.responses,
                mean_miou: b.mean_miou,
            })
        }),
    )?);

    #[derive(Serialize)]
    struct Hits<'a> {
        condition: &'a str,
        worker_id: &'a str,
        hits: u32,
        excluded: bool,
    }
    paths.push(write_rows(
        dir,
        HITS_PER_WORKER,
        summaries.iter().flat_map(|s| {
            s.hits_per_worker.iter().map(|h| Hits {
                condition: &s.condition,
                worker_id: &h.worker_id,
                hits: h.hits,
                excluded: h.excluded,
            })
        }),
    )?);

    #[derive(Serialize)]
    struct Hist<'a> {
        condition: &'a str,
        lower: u32,
        upper: u32,
        count: usize,
    }
    paths.push(write_rows(
        dir,
        MIOU_HISTOGRAM,
        summaries.iter().flat_map(|s| {
            s.miou_histogram.iter().enumerate().map(|(k, &count)| Hist {
                condition: &s.condition,
                lower: 10 * k as u32,
                upper: 10 * (k as u32 + 1),
                count,
            })
        }),
    )?);

    paths.push(write_rows(
        dir,
        UNITS,
        summaries.iter().flat_map(|s| {
            s.values.iter().map(|&value| UnitRow {
                condition: s.condition.clone(),
                unit: s.unit.label().into(),
                value,
            })
        }),
    )?);
    Ok(paths)
}

pub fn emit_comparisons(comparisons: &[Comparison], dir: &Path) -> Result<PathBuf, SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(dir, COMPARISONS, comparisons.iter().map(ComparisonRow::from))
}

/// Writes each run's event log as `events/<condition>.ndjson`.
pub fn emit_events(runs: &[ConditionRun], dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let events_dir = dir.join(EVENTS_DIR);
    fs::create_dir_all(&events_dir).map_err(io_err(&events_dir))?;
    let mut paths = Vec::new();
    for run in runs {
        let path = events_dir.join(format!("{}.ndjson", run.name()));
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for e in &run.events {
            serde_json::to_writer(&mut w, e).map_err(|e| SimError::Io {
                path: path.clone(),
                source: e.into(),
            })?;
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads `units.csv` back into per-condition samples, in first-seen order.
pub fn read_samples(dir: &Path) -> Result<Vec<Sample>, SimError> {
    let path = dir.join(UNITS);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let mut order: Vec<String> = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in r.deserialize::<UnitRow>() {
        let row = row.map_err(csv_err(&path))?;
        if !values.contains_key(&row.condition) {
            order.push(row.condition.clone());
        }
        values.entry(row.condition).or_default().push(row.value);
    }
    Ok(order
        .into_iter()
        .map(|c| Sample {
            values: values.remove(&c).unwrap_or_default(),
            condition: c,
        })
        .collect())
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, SimError> {
    let path = dir.join(SUMMARY);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    r.deserialize().map(|row| row.map_err(csv_err(&path))).collect()
}
