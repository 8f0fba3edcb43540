//! Condition summaries: means, curves, buckets and distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vgold_core::scoring::{score, size_buckets, ScoreReport, SizeBucket};

use crate::harness::ConditionRun;
use crate::stats::mean_se;
use crate::SimError;

/// Bucket edges in square pixels.
pub const SIZE_EDGES: [f64; 3] = [1024.0, 4096.0, 16384.0];
/// Completion-order bins as inclusive ordinal ranges; `None` is open-ended.
pub const COMPLETION_BINS: [(u32, Option<u32>); 3] = [(1, Some(10)), (11, Some(50)), (51, None)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatUnit {
    /// One mIoU per whole-scene response.
    #[default]
    Submission,
    /// One IoU per ground-truth box.
    GtBox,
}

impl StatUnit {
    pub fn label(self) -> &'static str {
        match self {
            StatUnit::Submission => "submission",
            StatUnit::GtBox => "gt_box",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub n: usize,
    pub responses: usize,
    pub mean_miou: f64,
    pub recall_50: f64,
    pub mean_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionBin {
    pub first: u32,
    pub last: Option<u32>,
    pub responses: usize,
    pub mean_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerHits {
    pub worker_id: String,
    pub hits: u32,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub unit: StatUnit,
    pub n: usize,
    pub mean_miou: f64,
    pub se: f64,
    /// Seconds per whole-scene response.
    pub mean_time: f64,
    pub per_count: Vec<CountRow>,
    pub size_buckets: Vec<SizeBucket>,
    pub completion_bins: Vec<CompletionBin>,
    pub hits_per_worker: Vec<WorkerHits>,
    /// Response counts per ten-point mIoU bin.
    pub miou_histogram: [usize; 10],
    pub excluded: Vec<String>,
    /// Observations in the statistical unit, in percent.
    pub values: Vec<f64>,
}

pub fn histogram_bin(miou: f64) -> usize {
    ((miou / 10.0).floor() as usize).min(9)
}

/// Summarises a run after the spam filter.
pub fn summarize(run: &ConditionRun, unit: StatUnit) -> Result<ConditionSummary, SimError> {
    let excluded = run.excluded_workers();
    let responses = run.engine.scene_responses_excluding(&excluded);
    let corpus = run.engine.corpus();
    let mut scored: Vec<(usize, ScoreReport, f64, Option<u32>)> = Vec::with_capacity(responses.len());
    for r in &responses {
        let scene = &corpus.scenes()[r.scene_idx];
        scored.push((r.scene_idx, score(scene, &r.annotation)?, r.elapsed, r.ordinal));
    }

    let values: Vec<f64> = match unit {
        StatUnit::Submission => scored.iter().map(|s| s.1.miou).collect(),
        StatUnit::GtBox => scored
            .iter()
            .flat_map(|s| s.1.per_gt_iou.iter().map(|v| 100.0 * v))
            .collect(),
    };
    let (mean_miou, se) = mean_se(&values);
    let times: Vec<f64> = scored.iter().map(|s| s.2).collect();
    let (mean_time, _) = mean_se(&times);

    let mut by_count: BTreeMap<usize, Vec<&(usize, ScoreReport, f64, Option<u32>)>> = BTreeMap::new();
    for s in &scored {
        by_count.entry(corpus.scenes()[s.0].count()).or_default().push(s);
    }
    let per_count = by_count
        .iter()
        .map(|(&n, rows)| {
            let k = rows.len() as f64;
            CountRow {
                n,
                responses: rows.len(),
                mean_miou: rows.iter().map(|r| r.1.miou).sum::<f64>() / k,
                recall_50: rows.iter().map(|r| r.1.recall_at(0.5)).sum::<f64>() / k,
                mean_time: rows.iter().map(|r| r.2).sum::<f64>() / k,
            }
        })
        .collect();

    let pairs: Vec<_> = scored.iter().map(|s| (&corpus.scenes()[s.0], &s.1)).collect();
    let size_buckets = size_buckets(&pairs, &SIZE_EDGES)?;

    let completion_bins = COMPLETION_BINS
        .iter()
        .map(|&(first, last)| {
            let in_bin: Vec<f64> = scored
                .iter()
                .filter(|s| s.3.is_some_and(|o| o >= first && last.is_none_or(|l| o <= l)))
                .map(|s| s.1.miou)
                .collect();
            CompletionBin {
                first,
                last,
                responses: in_bin.len(),
                mean_miou: (!in_bin.is_empty()).then(|| in_bin.iter().sum::<f64>() / in_bin.len() as f64),
            }
        })
        .collect();

    let hits_per_worker = run
        .engine
        .state()
        .workers
        .values()
        .filter(|w| w.completed_hits > 0)
        .map(|w| WorkerHits {
            worker_id: w.worker_id.clone(),
            hits: w.completed_hits,
            excluded: excluded.contains(&w.worker_id),
        })
        .collect();

    let mut miou_histogram = [0usize; 10];
    for s in &scored {
        miou_histogram[histogram_bin(s.1.miou)] += 1;
    }

    Ok(ConditionSummary {
        condition: run.name().to_string(),
        unit,
        n: values.len(),
        mean_miou,
        se,
        mean_time,
        per_count,
        size_buckets,
        completion_bins,
        hits_per_worker,
        miou_histogram,
        excluded: excluded.into_iter().collect(),
        values,
    })
}
