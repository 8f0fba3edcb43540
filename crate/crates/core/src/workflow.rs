//! Non-gold task structures: task decomposition into marked subtasks,
//! iterative improvement chains, and reassembly into whole-scene annotations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationSet, BoundingBox, Scene};

/// Maximum targets per subtask and new boxes per iteration.
pub const MAX_TARGETS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum WorkflowError {
    #[error("iteration on scene {0:?} is already completed")]
    Completed(String),
    #[error("at most {MAX_TARGETS} boxes per iteration, got {0}")]
    TooManyBoxes(usize),
    #[error("adjust index {index} out of range for {len} boxes")]
    BadIndex { index: usize, len: usize },
    #[error("part for scene {part:?} does not belong to scene {scene:?}")]
    SceneMismatch { scene: String, part: String },
    #[error("invalid marker noise: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerSource {
    /// Markers at ground-truth centres.
    Oracle,
    /// Markers from an upstream point-annotation pass: jittered and sometimes missing.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub scene_id: String,
    /// Position within the scene's partition.
    pub part: usize,
    pub markers: Vec<Marker>,
    pub marker_source: MarkerSource,
}

/// Imperfection of manual point markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerNoise {
    /// Isotropic Gaussian sigma as a fraction of the scene diagonal.
    pub sigma_frac: f64,
    pub miss_prob: f64,
}

impl Default for MarkerNoise {
    fn default() -> Self {
        Self {
            sigma_frac: 0.03,
            miss_prob: 0.05,
        }
    }
}

impl MarkerNoise {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if !(self.sigma_frac >= 0.0 && self.sigma_frac.is_finite()) {
            return Err(WorkflowError::InvalidNoise("sigma_frac must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return Err(WorkflowError::InvalidNoise("miss_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Splits a scene into subtasks of at most three markers, ordered left to
/// right then top to bottom. A manual pass that drops every marker yields no
/// subtasks.
pub fn decompose(
    scene: &Scene,
    source: MarkerSource,
    noise: &MarkerNoise,
    rng: &mut impl Rng,
) -> Vec<SubTask> {
    let w = f64::from(scene.width);
    let h = f64::from(scene.height);
    let mut markers: Vec<Marker> = match source {
        MarkerSource::Oracle => scene
            .gt_boxes
            .iter()
            .map(|b| {
                let (x, y) = b.center();
                Marker { x, y }
            })
            .collect(),
        MarkerSource::Manual => {
            let sigma = noise.sigma_frac * scene.diagonal();
            let jitter = Normal::new(0.0, sigma).expect("sigma validated non-negative");
            let mut out = Vec::with_capacity(scene.count());
            for b in &scene.gt_boxes {
                // Both draws happen for every box so the stream stays aligned.
                let missed = rng.random_bool(noise.miss_prob);
                let (dx, dy) = (jitter.sample(rng), jitter.sample(rng));
                if missed {
                    continue;
                }
                let (cx, cy) = b.center();
                out.push(Marker {
                    x: (cx + dx).clamp(0.0, w),
                    y: (cy + dy).clamp(0.0, h),
                });
            }
            out
        }
    };
    markers.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    markers
        .chunks(MAX_TARGETS)
        .enumerate()
        .map(|(part, chunk)| SubTask {
            scene_id: scene.scene_id.clone(),
            part,
            markers: chunk.to_vec(),
            marker_source: source,
        })
        .collect()
}

/// Ground-truth index nearest to each marker, by centre distance.
pub fn marker_targets(scene: &Scene, subtask: &SubTask) -> Vec<usize> {
    subtask
        .markers
        .iter()
        .map(|m| {
            scene
                .gt_boxes
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let (cx, cy) = b.center();
                    (i, (cx - m.x).hypot(cy - m.y))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("scene has at least one box")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributedBox {
    pub bbox: BoundingBox,
    pub contributor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub scene_id: String,
    pub boxes: Vec<ContributedBox>,
    pub completed: bool,
    pub iteration_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contribution {
    AddBoxes { boxes: Vec<BoundingBox> },
    Adjust { index: usize, bbox: BoundingBox },
    Complete,
}

impl IterationState {
    pub fn new(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            boxes: Vec::new(),
            completed: false,
            iteration_index: 0,
        }
    }

    pub fn plain_boxes(&self) -> Vec<BoundingBox> {
        self.boxes.iter().map(|c| c.bbox).collect()
    }
}

pub fn iterate(
    state: &IterationState,
    contributor: &str,
    contribution: &Contribution,
) -> Result<IterationState, WorkflowError> {
    if state.completed {
        return Err(WorkflowError::Completed(state.scene_id.clone()));
    }
    let mut next = state.clone();
    match contribution {
        Contribution::AddBoxes { boxes } => {
            if boxes.len() > MAX_TARGETS {
                return Err(WorkflowError::TooManyBoxes(boxes.len()));
            }
            next.boxes.extend(boxes.iter().map(|&bbox| ContributedBox {
                bbox,
                contributor: contributor.to_string(),
            }));
        }
        Contribution::Adjust { index, bbox } => {
            let len = next.boxes.len();
            let slot = next
                .boxes
                .get_mut(*index)
                .ok_or(WorkflowError::BadIndex { index: *index, len })?;
            *slot = ContributedBox {
                bbox: *bbox,
                contributor: contributor.to_string(),
            };
        }
        Contribution::Complete => next.completed = true,
    }
    next.iteration_index += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Part {
    Annotation(AnnotationSet),
    Iteration(IterationState),
}

impl Part {
    fn scene_id(&self) -> &str {
        match self {
            Part::Annotation(a) => &a.scene_id,
            Part::Iteration(s) => &s.scene_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reassembled {
    pub annotation: AnnotationSet,
    /// Contributor of each box in `annotation.boxes`.
    pub provenance: Vec<String>,
}

/// Label used as the worker id of a reassembled annotation.
pub const REASSEMBLED: &str = "reassembled";

/// Union of all parts. Duplicates are kept and score as false positives.
pub fn reassemble(scene: &Scene, parts: &[Part]) -> Result<Reassembled, WorkflowError> {
    let mut boxes = Vec::new();
    let mut provenance = Vec::new();
    let mut elapsed = 0.0;
    for part in parts {
        if part.scene_id() != scene.scene_id {
            return Err(WorkflowError::SceneMismatch {
                scene: scene.scene_id.clone(),
                part: part.scene_id().to_string(),
            });
        }
        match part {
            Part::Annotation(a) => {
                boxes.extend_from_slice(&a.boxes);
                provenance.extend(std::iter::repeat_n(a.worker_id.clone(), a.boxes.len()));
                elapsed += a.elapsed;
            }
            Part::Iteration(s) => {
                for c in &s.boxes {
                    boxes.push(c.bbox);
                    provenance.push(c.contributor.clone());
                }
            }
        }
    }
    Ok(Reassembled {
        annotation: AnnotationSet {
            scene_id: scene.scene_id.clone(),
            worker_id: REASSEMBLED.into(),
            boxes,
            elapsed,
        },
        provenance,
    })
}
