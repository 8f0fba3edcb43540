//! Box geometry and annotation quality metrics.
//!
//! Worker boxes are matched one-to-one to ground truth by maximising total IoU;
//! zero-IoU pairs are never matched. mIoU averages over ground-truth boxes
//! only, with every missed box contributing 0. Extra worker boxes are reported
//! as false positives and do not enter the mean.

mod assignment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationSet, BoundingBox, Scene};

pub use assignment::max_weight_assignment;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("annotation for scene {annotation:?} scored against scene {scene:?}")]
    SceneMismatch { scene: String, annotation: String },
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("bucket edges must be strictly increasing")]
    InvalidEdges,
}

/// Intersection over union of two boxes on continuous geometry.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // Identical boxes are exactly 1 even when right/bottom round.
    if a == b {
        return 1.0;
    }
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_matrix(gt: &[BoundingBox], worker: &[BoundingBox]) -> Vec<Vec<f64>> {
    gt.iter()
        .map(|g| worker.iter().map(|w| iou(g, w)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_index: usize,
    pub worker_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by `gt_index`.
    pub pairs: Vec<MatchedPair>,
    /// Ground-truth boxes left unmatched (false negatives).
    pub unmatched_gt: Vec<usize>,
    /// Worker boxes left unmatched (false positives).
    pub unmatched_worker: Vec<usize>,
}

impl MatchResult {
    /// Sum of matched IoUs, accumulated in ground-truth order.
    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }
}

pub fn match_boxes(gt: &[BoundingBox], worker: &[BoundingBox]) -> MatchResult {
    let weights = iou_matrix(gt, worker);
    let assignment = max_weight_assignment(&weights);
    let mut pairs = Vec::new();
    let mut unmatched_gt = Vec::new();
    let mut used = vec![false; worker.len()];
    for (g, col) in assignment.into_iter().enumerate() {
        match col {
            Some(w) if weights[g][w] > 0.0 => {
                used[w] = true;
                pairs.push(MatchedPair {
                    gt_index: g,
                    worker_index: w,
                    iou: weights[g][w],
                });
            }
            _ => unmatched_gt.push(g),
        }
    }
    let unmatched_worker = used
        .iter()
        .enumerate()
        .filter_map(|(i, &u)| (!u).then_some(i))
        .collect();
    MatchResult {
        pairs,
        unmatched_gt,
        unmatched_worker,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(rename = "match")]
    pub match_result: MatchResult,
    /// Percent, in [0, 100].
    pub miou: f64,
    /// IoU ratio per ground-truth box, 0 for misses.
    pub per_gt_iou: Vec<f64>,
    pub fn_count: usize,
    pub fp_count: usize,
}

impl ScoreReport {
    /// Fraction of ground-truth boxes matched with IoU strictly above `tau`.
    pub fn recall_at(&self, tau: f64) -> f64 {
        if self.per_gt_iou.is_empty() {
            return 0.0;
        }
        let hits = self.per_gt_iou.iter().filter(|&&v| v > tau).count();
        hits as f64 / self.per_gt_iou.len() as f64
    }

    /// Ground-truth boxes matched with IoU strictly above `tau`.
    pub fn correct_count(&self, tau: f64) -> usize {
        self.per_gt_iou.iter().filter(|&&v| v > tau).count()
    }
}

/// Scores worker boxes against an arbitrary ground-truth list.
pub fn score_boxes(gt: &[BoundingBox], worker: &[BoundingBox]) -> ScoreReport {
    let match_result = match_boxes(gt, worker);
    let mut per_gt_iou = vec![0.0; gt.len()];
    for p in &match_result.pairs {
        per_gt_iou[p.gt_index] = p.iou;
    }
    let miou = if gt.is_empty() {
        0.0
    } else {
        100.0 * per_gt_iou.iter().sum::<f64>() / gt.len() as f64
    };
    ScoreReport {
        fn_count: match_result.unmatched_gt.len(),
        fp_count: match_result.unmatched_worker.len(),
        match_result,
        miou,
        per_gt_iou,
    }
}

pub fn score(scene: &Scene, ann: &AnnotationSet) -> Result<ScoreReport, ScoringError> {
    if scene.scene_id != ann.scene_id {
        return Err(ScoringError::SceneMismatch {
            scene: scene.scene_id.clone(),
            annotation: ann.scene_id.clone(),
        });
    }
    Ok(score_boxes(&scene.gt_boxes, &ann.boxes))
}

pub fn recall_at(scene: &Scene, ann: &AnnotationSet, tau: f64) -> Result<f64, ScoringError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ScoringError::InvalidThreshold(tau));
    }
    Ok(score(scene, ann)?.recall_at(tau))
}

/// Per-area bucket of ground-truth box quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    /// Inclusive lower area bound in square pixels.
    pub lower: f64,
    /// Exclusive upper bound; `None` for the open top bucket.
    pub upper: Option<f64>,
    pub count: usize,
    /// Mean IoU in percent; `None` when the bucket is empty.
    pub mean: Option<f64>,
}

/// Groups every ground-truth box by pixel area. `edges` split `[0, inf)` into
/// `edges.len() + 1` buckets.
pub fn size_buckets(
    reports: &[(&Scene, &ScoreReport)],
    edges: &[f64],
) -> Result<Vec<SizeBucket>, ScoringError> {
    if edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
        return Err(ScoringError::InvalidEdges);
    }
    let mut sums = vec![0.0; edges.len() + 1];
    let mut counts = vec![0usize; edges.len() + 1];
    for (scene, report) in reports {
        for (b, v) in scene.gt_boxes.iter().zip(&report.per_gt_iou) {
            let k = edges.partition_point(|&e| e <= b.area());
            sums[k] += v;
            counts[k] += 1;
        }
    }
    Ok((0..=edges.len())
        .map(|k| SizeBucket {
            lower: if k == 0 { 0.0 } else { edges[k - 1] },
            upper: edges.get(k).copied(),
            count: counts[k],
            mean: (counts[k] > 0).then(|| 100.0 * sums[k] / counts[k] as f64),
        })
        .collect())
}

/// Feedback released to a worker after a visible-gold submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldFeedback {
    /// Objects missed (false negatives).
    pub missed: usize,
    /// Worker boxes that matched nothing in the answer key (false positives).
    pub extra: usize,
    /// Accuracy of every true positive.
    pub per_box: Vec<MatchedPair>,
    /// Average accuracy over the answer key in percent, misses counted as 0.
    pub average: f64,
    /// Answer key for the overlay.
    pub gold_boxes: Vec<BoundingBox>,
    pub worker_boxes: Vec<BoundingBox>,
}

impl GoldFeedback {
    pub fn new(scene: &Scene, worker_boxes: &[BoundingBox], report: &ScoreReport) -> Self {
        Self {
            missed: report.fn_count,
            extra: report.fp_count,
            per_box: report.match_result.pairs.clone(),
            average: report.miou,
            gold_boxes: scene.gt_boxes.clone(),
            worker_boxes: worker_boxes.to_vec(),
        }
    }
}
