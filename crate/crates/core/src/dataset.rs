//! Scenes, corpora and annotation records.
//!
//! A [`Scene`] is one annotation item; its ground-truth box count is the
//! effort level of the task. Corpora are read from and written to
//! line-delimited JSON: a header line `{"coords": "absolute" | "normalized"}`
//! followed by one record per scene.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::iou;
use crate::seed;

pub const DEFAULT_WIDTH: u32 = 1024;
pub const DEFAULT_HEIGHT: u32 = 768;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line 1: missing coordinate header, expected {{\"coords\": \"absolute\"|\"normalized\"}}")]
    MissingHeader,
    #[error("no scenes")]
    NoScenes { rejected: Vec<RejectedRecord> },
    #[error("invalid box [{x}, {y}, {w}, {h}]: width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("duplicate scene id {0:?}")]
    DuplicateScene(String),
    #[error("scene {scene_id:?}: {reason}")]
    InvalidScene { scene_id: String, reason: String },
    #[error("invalid size model: {0}")]
    InvalidSizeModel(String),
    #[error("could not pack {count} boxes for scene #{index} of count {count} after {attempts} attempts")]
    Packing {
        count: usize,
        index: usize,
        attempts: usize,
    },
}

/// Axis-aligned box in pixel coordinates (left, top, width, height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DatasetError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(DatasetError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Clips the box to `[0, width] x [0, height]`. Returns `None` when
    /// nothing of positive area remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        // Untouched boxes keep their exact width and height.
        if self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height {
            return Some(*self);
        }
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
            return None;
        }
        Some(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = DatasetError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One annotation item with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "boxes")]
    pub gt_boxes: Vec<BoundingBox>,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        width: u32,
        height: u32,
        gt_boxes: Vec<BoundingBox>,
    ) -> Result<Self, DatasetError> {
        let scene = Scene {
            scene_id: scene_id.into(),
            width,
            height,
            gt_boxes,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Object count; the scene's effort level.
    pub fn count(&self) -> usize {
        self.gt_boxes.len()
    }

    pub fn diagonal(&self) -> f64 {
        f64::from(self.width).hypot(f64::from(self.height))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: &str| DatasetError::InvalidScene {
            scene_id: self.scene_id.clone(),
            reason: reason.to_string(),
        };
        if self.width == 0 || self.height == 0 {
            return Err(invalid("zero extent"));
        }
        if self.gt_boxes.is_empty() {
            return Err(invalid("no ground-truth boxes"));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let mut seen = BTreeSet::new();
        for b in &self.gt_boxes {
            if b.x < 0.0 || b.y < 0.0 || b.right() > w || b.bottom() > h {
                return Err(invalid("box outside scene extent"));
            }
            let key = [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()];
            if !seen.insert(key) {
                return Err(invalid("duplicated ground-truth box"));
            }
        }
        Ok(())
    }
}

/// Ordered scenes plus the effort-level histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    scenes: Vec<Scene>,
    count_histogram: BTreeMap<usize, usize>,
}

impl Corpus {
    pub fn new(scenes: Vec<Scene>) -> Result<Self, DatasetError> {
        if scenes.is_empty() {
            return Err(DatasetError::NoScenes {
                rejected: Vec::new(),
            });
        }
        let mut ids = BTreeSet::new();
        let mut count_histogram = BTreeMap::new();
        for s in &scenes {
            s.validate()?;
            if !ids.insert(s.scene_id.as_str()) {
                return Err(DatasetError::DuplicateScene(s.scene_id.clone()));
            }
            *count_histogram.entry(s.count()).or_insert(0) += 1;
        }
        Ok(Self {
            scenes,
            count_histogram,
        })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn count_histogram(&self) -> &BTreeMap<usize, usize> {
        &self.count_histogram
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scene(&self, scene_id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn total_boxes(&self) -> usize {
        self.scenes.iter().map(Scene::count).sum()
    }

    /// Smallest and largest effort level present.
    pub fn count_range(&self) -> (usize, usize) {
        let lo = *self.count_histogram.keys().next().unwrap_or(&1);
        let hi = *self.count_histogram.keys().next_back().unwrap_or(&1);
        (lo, hi)
    }
}

/// One worker's submission for a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub scene_id: String,
    pub worker_id: String,
    pub boxes: Vec<BoundingBox>,
    /// Seconds from accept to submit.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    Absolute,
    Normalized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    coords: CoordinateMode,
}

#[derive(Debug, Clone, Deserialize)]
struct RawRecord {
    scene_id: String,
    width: u32,
    height: u32,
    boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub scene_id: String,
    pub reason: String,
}

/// Result of ingesting a corpus file: the corpus and what was repaired or dropped.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub coords: CoordinateMode,
    /// Boxes clipped back into their scene extent.
    pub clamped_boxes: usize,
    /// Records dropped for invariant violations.
    pub rejected: Vec<RejectedRecord>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_corpus(reader: impl BufRead) -> Result<LoadedCorpus, DatasetError> {
    let mut coords = None;
    let mut scenes = Vec::new();
    let mut rejected = Vec::new();
    let mut clamped_boxes = 0;
    let mut ids = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some(mode) = coords else {
            let header: Header = serde_json::from_str(trimmed).map_err(|_| {
                if line_no == 1 {
                    DatasetError::MissingHeader
                } else {
                    DatasetError::Parse {
                        line: line_no,
                        message: "expected coordinate header".into(),
                    }
                }
            })?;
            coords = Some(header.coords);
            continue;
        };
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut reject = |reason: String| {
            rejected.push(RejectedRecord {
                line: line_no,
                scene_id: raw.scene_id.clone(),
                reason,
            })
        };
        if raw.width == 0 || raw.height == 0 {
            reject("zero scene extent".into());
            continue;
        }
        if !ids.insert(raw.scene_id.clone()) {
            reject("duplicate scene id".into());
            continue;
        }
        let (sw, sh) = (f64::from(raw.width), f64::from(raw.height));
        let mut boxes = Vec::with_capacity(raw.boxes.len());
        let mut problem = None;
        for [x, y, w, h] in raw.boxes.iter().copied() {
            let (x, y, w, h) = match mode {
                CoordinateMode::Absolute => (x, y, w, h),
                CoordinateMode::Normalized => (x * sw, y * sh, w * sw, h * sh),
            };
            let b = match BoundingBox::new(x, y, w, h) {
                Ok(b) => b,
                Err(e) => {
                    problem = Some(e.to_string());
                    break;
                }
            };
            match b.clamp_to(sw, sh) {
                Some(c) => {
                    if c != b {
                        clamped_boxes += 1;
                    }
                    boxes.push(c);
                }
                None => {
                    problem = Some(format!("box {:?} lies outside the scene extent", <[f64; 4]>::from(b)));
                    break;
                }
            }
        }
        if let Some(reason) = problem {
            reject(reason);
            continue;
        }
        match Scene::new(raw.scene_id.clone(), raw.width, raw.height, boxes) {
            Ok(scene) => scenes.push(scene),
            Err(e) => reject(e.to_string()),
        }
    }

    let coords = match coords {
        Some(c) => c,
        None => return Err(DatasetError::NoScenes { rejected }),
    };
    if scenes.is_empty() {
        return Err(DatasetError::NoScenes { rejected });
    }
    Ok(LoadedCorpus {
        corpus: Corpus::new(scenes)?,
        coords,
        clamped_boxes,
        rejected,
    })
}

/// Writes the corpus in absolute coordinates.
pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        coords: CoordinateMode::Absolute,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for scene in corpus.scenes() {
        serde_json::to_writer(&mut out, scene)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    write_corpus(corpus, &mut file).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Box-size distribution for synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeModel {
    pub width: u32,
    pub height: u32,
    /// Box area bounds as fractions of the scene area; sampled log-uniformly.
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    /// Width/height ratio bounds; sampled log-uniformly.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Largest IoU allowed between two ground-truth boxes of one scene.
    pub max_overlap: f64,
    pub attempts_per_box: usize,
    pub attempts_per_scene: usize,
}

impl Default for SizeModel {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            min_area_frac: 0.0005,
            max_area_frac: 0.04,
            min_aspect: 0.7,
            max_aspect: 1.0,
            max_overlap: 0.3,
            attempts_per_box: 200,
            attempts_per_scene: 50,
        }
    }
}

impl SizeModel {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSizeModel(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("scene extent must be positive");
        }
        if !(self.min_area_frac > 0.0 && self.min_area_frac <= self.max_area_frac && self.max_area_frac <= 1.0) {
            return bad("area fractions must satisfy 0 < min <= max <= 1");
        }
        if !(self.min_aspect > 0.0 && self.min_aspect <= self.max_aspect) {
            return bad("aspect bounds must satisfy 0 < min <= max");
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad("overlap cap must lie in [0, 1]");
        }
        if self.attempts_per_box == 0 || self.attempts_per_scene == 0 {
            return bad("attempt budgets must be positive");
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let area = self.min_area_frac * w * h;
        let fits = |aspect: f64| (area * aspect).sqrt() <= w && (area / aspect).sqrt() <= h;
        if !fits(self.min_aspect) && !fits(self.max_aspect) {
            return bad("smallest box does not fit the scene extent");
        }
        Ok(())
    }
}

/// The 140-scene default shape: ten scenes for every count 1..=14.
pub fn default_histogram() -> BTreeMap<usize, usize> {
    (1..=14).map(|n| (n, 10)).collect()
}

/// Generates a synthetic corpus; a pure function of its arguments.
pub fn generate_corpus(
    seed: u64,
    histogram: &BTreeMap<usize, usize>,
    size_model: &SizeModel,
) -> Result<Corpus, DatasetError> {
    size_model.validate()?;
    let mut scenes = Vec::new();
    for (&count, &copies) in histogram {
        if count == 0 {
            if copies > 0 {
                return Err(DatasetError::InvalidSizeModel(
                    "histogram contains scenes with zero objects".into(),
                ));
            }
            continue;
        }
        for index in 0..copies {
            let scene_seed = seed::derive(seed, &format!("scene/{count}/{index}"));
            let boxes = pack_scene(scene_seed, count, index, size_model)?;
            let id = format!("s{count:02}-{index:02}");
            scenes.push(Scene::new(id, size_model.width, size_model.height, boxes)?);
        }
    }
    Corpus::new(scenes)
}

fn pack_scene(
    scene_seed: u64,
    count: usize,
    index: usize,
    model: &SizeModel,
) -> Result<Vec<BoundingBox>, DatasetError> {
    let mut rng = seed::rng(scene_seed);
    let (sw, sh) = (f64::from(model.width), f64::from(model.height));
    let (la0, la1) = (model.min_area_frac.ln(), model.max_area_frac.ln());
    let (lr0, lr1) = (model.min_aspect.ln(), model.max_aspect.ln());
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };

    for _ in 0..model.attempts_per_scene {
        let mut boxes: Vec<BoundingBox> = Vec::with_capacity(count);
        'place: for _ in 0..count {
            for _ in 0..model.attempts_per_box {
                let area = uniform(&mut rng, la0, la1).exp() * sw * sh;
                let aspect = uniform(&mut rng, lr0, lr1).exp();
                let (w, h) = ((area * aspect).sqrt(), (area / aspect).sqrt());
                if w > sw || h > sh {
                    continue;
                }
                let x = uniform(&mut rng, 0.0, sw - w);
                let y = uniform(&mut rng, 0.0, sh - h);
                let candidate = BoundingBox { x, y, w, h };
                if boxes.iter().all(|b| iou(b, &candidate) <= model.max_overlap) {
                    boxes.push(candidate);
                    continue 'place;
                }
            }
            break;
        }
        if boxes.len() == count {
            return Ok(boxes);
        }
    }
    Err(DatasetError::Packing {
        count,
        index,
        attempts: model.attempts_per_scene,
    })
}
