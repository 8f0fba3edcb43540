//! Parametric annotator: per-box misses, corner noise, learning from gold
//! feedback, effort responses to pay and consequences, and dropout.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vgold_core::dataset::{BoundingBox, Scene};
use vgold_core::ledger::Tier;
use vgold_core::scoring::iou;
use vgold_core::workflow::Contribution;
use vgold_core::Cents;

use crate::SimError;

/// Area at and above which a box carries no small-object penalty.
pub const SMALL_UPPER: f64 = 16384.0;
/// Area at and below which the small-object penalty is full.
pub const SMALL_LOWER: f64 = 256.0;

/// One simulated annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorker {
    pub worker_id: String,
    /// Corner-placement precision in [0, 1].
    pub skill: f64,
    /// Per-box miss resistance in [0, 1].
    pub diligence: f64,
    /// Degradation per extra object.
    pub load_sensitivity: f64,
    pub small_object_penalty: f64,
    /// Fraction of the gap to the potential closed per gold feedback.
    pub learn_rate: f64,
    /// Baseline per-HIT probability of leaving.
    pub dropout_propensity: f64,
    pub spam: bool,
    /// Seconds per box.
    pub base_speed: f64,
    /// HITs the worker intends to complete.
    pub capacity: u32,
}

impl SimWorker {
    /// A worker with no noise of any kind.
    pub fn ideal(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            skill: 1.0,
            diligence: 1.0,
            load_sensitivity: 0.0,
            small_object_penalty: 0.0,
            learn_rate: 0.0,
            dropout_propensity: 0.0,
            spam: false,
            base_speed: 10.0,
            capacity: u32::MAX,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let bad = |m: &str| Err(SimError::InvalidWorker(format!("{}: {m}", self.worker_id)));
        if !unit(self.skill) || !unit(self.diligence) || !unit(self.learn_rate) || !unit(self.dropout_propensity) {
            return bad("skill, diligence, learn_rate and dropout_propensity must lie in [0, 1]");
        }
        if !(self.load_sensitivity >= 0.0 && self.small_object_penalty >= 0.0) {
            return bad("load_sensitivity and small_object_penalty must be >= 0");
        }
        if !(self.base_speed > 0.0 && self.base_speed.is_finite()) {
            return bad("base_speed must be positive");
        }
        if self.spam && self.learn_rate != 0.0 {
            return bad("spam workers ignore feedback");
        }
        Ok(())
    }
}

/// Population-wide behavioural constants. `p0`, `noise_scale` and
/// `banner_focus` are the calibrated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorModel {
    /// Load-free miss probability.
    pub p0: f64,
    /// Corner sigma per unit of box dimension at skill 0.
    pub noise_scale: f64,
    /// Corner sigma floor in pixels at skill 0.
    pub pixel_noise: f64,
    /// Effort gain while the tier banner is visible.
    pub banner_focus: f64,
    /// Effort gain per warning received, counted up to three.
    pub vigilance: f64,
    /// Effort gain once any gold feedback has shown that work is checked.
    pub scrutiny: f64,
    /// Ceiling that skill and diligence approach through feedback.
    pub potential: f64,
    /// Weight of accumulated load on the miss term.
    pub fatigue_weight: f64,
    /// Smoothing rate of the load accumulator.
    pub fatigue_rate: f64,
    /// Load level treated as neutral.
    pub fatigue_ref: f64,
    /// Cents per expected box a worker regards as fair.
    pub fair_rate: f64,
    /// Exponent on the pay shortfall when the advertised price is unfair.
    pub distrust: f64,
    /// Chance an iterative worker stops early when prior boxes exist.
    pub premature_completion: f64,
    /// IoU above which a worker treats an object as already annotated.
    pub covered_iou: f64,
    /// Sub-linear exponent of time against boxes drawn.
    pub time_exponent: f64,
    /// Log-normal sigma of task time.
    pub time_noise: f64,
    /// Fixed seconds per HIT.
    pub overhead_secs: f64,
    pub hazard_per_warning: f64,
    /// Extra hazard while the banner shows a tier below B.
    pub hazard_low_tier: f64,
    /// Extra hazard scaled by the pay shortfall.
    pub hazard_unfair: f64,
    pub spam_max_boxes: usize,
}

impl Default for BehaviorModel {
    fn default() -> Self {
        Self {
            p0: 0.06,
            noise_scale: 0.08,
            pixel_noise: 3.0,
            banner_focus: 0.3,
            vigilance: 0.15,
            scrutiny: 0.2,
            potential: 0.95,
            fatigue_weight: 3.0,
            fatigue_rate: 0.3,
            fatigue_ref: 7.5,
            fair_rate: 2.0,
            distrust: 0.4,
            premature_completion: 0.55,
            covered_iou: 0.5,
            time_exponent: 0.8,
            time_noise: 0.25,
            overhead_secs: 15.0,
            hazard_per_warning: 0.15,
            hazard_low_tier: 0.03,
            hazard_unfair: 0.02,
            spam_max_boxes: 6,
        }
    }
}

impl BehaviorModel {
    /// A model with every noise source switched off.
    pub fn noiseless() -> Self {
        Self {
            p0: 0.0,
            time_noise: 0.0,
            premature_completion: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidModel(m.into()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.p0) || !unit(self.potential) || !unit(self.premature_completion) || !unit(self.fatigue_rate) {
            return bad("p0, potential, premature_completion and fatigue_rate must lie in [0, 1]");
        }
        let nonneg = [
            self.noise_scale,
            self.pixel_noise,
            self.banner_focus,
            self.vigilance,
            self.scrutiny,
            self.fatigue_weight,
            self.distrust,
            self.time_noise,
            self.overhead_secs,
            self.hazard_per_warning,
            self.hazard_low_tier,
            self.hazard_unfair,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("noise, effort, time and hazard constants must be finite and >= 0");
        }
        if !(self.fatigue_ref > 0.0 && self.fair_rate > 0.0) {
            return bad("fatigue_ref and fair_rate must be positive");
        }
        if !(self.time_exponent > 0.0 && self.time_exponent < 1.0) {
            return bad("time_exponent must lie in (0, 1)");
        }
        if !(self.covered_iou > 0.0 && self.covered_iou < 1.0) {
            return bad("covered_iou must lie in (0, 1)");
        }
        if self.spam_max_boxes == 0 {
            return bad("spam_max_boxes must be positive");
        }
        Ok(())
    }
}

/// What the worker has learned and experienced so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMind {
    pub skill: f64,
    pub diligence: f64,
    pub exposures: u32,
    pub warnings: u32,
    /// Tier on the banner, when one is shown.
    pub tier: Option<Tier>,
    pub blocked: bool,
    pub hits: u32,
    /// Smoothed object load of recent HITs.
    pub fatigue: f64,
    /// Advertised pay over fair pay for the latest HIT, capped at 1.
    pub pay_ratio: f64,
}

impl WorkerMind {
    pub fn new(worker: &SimWorker, model: &BehaviorModel) -> Self {
        Self {
            skill: worker.skill,
            diligence: worker.diligence,
            exposures: 0,
            warnings: 0,
            tier: None,
            blocked: false,
            hits: 0,
            fatigue: model.fatigue_ref,
            pay_ratio: 1.0,
        }
    }

    /// Gold feedback moves skill and diligence toward the potential.
    pub fn observe_feedback(&mut self, worker: &SimWorker, model: &BehaviorModel) {
        self.exposures += 1;
        if worker.spam {
            return;
        }
        let lr = worker.learn_rate;
        self.skill += lr * (model.potential.max(worker.skill) - self.skill);
        self.diligence += lr * (model.potential.max(worker.diligence) - self.diligence);
    }

    pub fn observe_hit(&mut self, load: usize, model: &BehaviorModel) {
        self.hits += 1;
        self.fatigue += model.fatigue_rate * (load as f64 - self.fatigue);
    }
}

/// The part of a HIT the simulator acts on.
#[derive(Debug, Clone, Copy)]
pub enum SimTask<'a> {
    Scene(&'a Scene),
    /// Marked objects, as ground-truth indices.
    Marked { scene: &'a Scene, targets: &'a [usize] },
    /// An iterative pass over prior boxes.
    Extend {
        scene: &'a Scene,
        prior: &'a [BoundingBox],
        max_new: usize,
    },
}

impl SimTask<'_> {
    pub fn scene(&self) -> &Scene {
        match self {
            SimTask::Scene(s) => s,
            SimTask::Marked { scene, .. } | SimTask::Extend { scene, .. } => scene,
        }
    }

    /// Boxes a diligent worker would expect to draw.
    pub fn expected_boxes(&self) -> usize {
        match self {
            SimTask::Scene(s) => s.count(),
            SimTask::Marked { targets, .. } => targets.len(),
            SimTask::Extend { scene, prior, max_new } => scene.count().saturating_sub(prior.len()).min(*max_new),
        }
    }
}

/// Condition signals visible to the worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimContext {
    pub advertised: Cents,
    pub banner_visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub boxes: Vec<BoundingBox>,
    pub elapsed: f64,
    pub contribution: Option<Contribution>,
    /// Object load used for time and fatigue.
    pub load: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Abandon,
}

/// Penalty weight in [0, 1]: 1 at `SMALL_LOWER` and below, 0 from `SMALL_UPPER`.
pub fn small(area: f64) -> f64 {
    ((SMALL_UPPER.ln() - area.max(1.0).ln()) / (SMALL_UPPER.ln() - SMALL_LOWER.ln())).clamp(0.0, 1.0)
}

/// Advertised price over fair pay for the expected boxes, capped at 1.
pub fn pay_ratio(model: &BehaviorModel, advertised: Cents, expected_boxes: usize) -> f64 {
    if expected_boxes == 0 {
        return 1.0;
    }
    (advertised.0 as f64 / (model.fair_rate * expected_boxes as f64)).clamp(0.0, 1.0)
}

/// Multiplier on the worker's attention; 1 is neutral.
pub fn effort(model: &BehaviorModel, mind: &WorkerMind, ctx: &SimContext, expected_boxes: usize) -> f64 {
    let banner = if ctx.banner_visible { 1.0 + model.banner_focus } else { 1.0 };
    let warned = 1.0 + model.vigilance * f64::from(mind.warnings.min(3));
    let checked = if mind.exposures > 0 { 1.0 + model.scrutiny } else { 1.0 };
    let fair = pay_ratio(model, ctx.advertised, expected_boxes).powf(model.distrust);
    (banner * warned * checked * fair).max(1e-3)
}

/// Probability of missing one box of a scene with `n` objects.
pub fn miss_probability(
    model: &BehaviorModel,
    worker: &SimWorker,
    diligence: f64,
    fatigue: f64,
    n: usize,
    area: f64,
) -> f64 {
    let load = (1.0 + model.fatigue_weight * (fatigue / model.fatigue_ref - 1.0)).max(0.0);
    let p = model.p0
        + worker.load_sensitivity * (n.saturating_sub(1)) as f64 * (1.0 - diligence) * load
        + worker.small_object_penalty * small(area);
    p.clamp(0.0, 0.95)
}

struct Perceiver<'a> {
    model: &'a BehaviorModel,
    worker: &'a SimWorker,
    skill: f64,
    diligence: f64,
    fatigue: f64,
    n: usize,
    width: f64,
    height: f64,
}

impl Perceiver<'_> {
    /// Draws one ground-truth box; `None` when missed or clamped away.
    fn perceive(&self, gt: &BoundingBox, rng: &mut impl Rng) -> Option<BoundingBox> {
        let u: f64 = rng.random();
        let d = draw_noise(rng);
        let p = miss_probability(self.model, self.worker, self.diligence, self.fatigue, self.n, gt.area());
        if u < p {
            return None;
        }
        let spread = (1.0 - self.skill) * (1.0 + self.worker.load_sensitivity * self.n.saturating_sub(1) as f64);
        let sx = self.model.noise_scale * gt.w * spread + self.model.pixel_noise * (1.0 - self.skill);
        let sy = self.model.noise_scale * gt.h * spread + self.model.pixel_noise * (1.0 - self.skill);
        if sx == 0.0 && sy == 0.0 {
            return Some(*gt);
        }
        let x1 = gt.x + sx * d[0];
        let y1 = gt.y + sy * d[1];
        let x2 = (gt.right() + sx * d[2]).max(x1 + 1.0);
        let y2 = (gt.bottom() + sy * d[3]).max(y1 + 1.0);
        BoundingBox::new(x1, y1, x2 - x1, y2 - y1).ok()?.clamp_to(self.width, self.height)
    }
}

fn draw_noise(rng: &mut impl Rng) -> [f64; 4] {
    let mut noise = [0.0; 4];
    for v in &mut noise {
        *v = StandardNormal.sample(rng);
    }
    noise
}

fn spam_boxes(model: &BehaviorModel, scene: &Scene, rng: &mut impl Rng) -> Vec<BoundingBox> {
    let (w, h) = (f64::from(scene.width), f64::from(scene.height));
    let k = rng.random_range(1..=model.spam_max_boxes);
    (0..k)
        .filter_map(|_| {
            let bw = rng.random_range(0.02..0.3) * w;
            let bh = rng.random_range(0.02..0.3) * h;
            let x = rng.random_range(0.0..w - bw);
            let y = rng.random_range(0.0..h - bh);
            BoundingBox::new(x, y, bw, bh).ok()
        })
        .collect()
}

fn elapsed(model: &BehaviorModel, worker: &SimWorker, load: usize, effort: f64, rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let work = worker.base_speed * (load.max(1) as f64).powf(model.time_exponent) * effort.sqrt();
    model.overhead_secs + work * (model.time_noise * z).exp()
}

/// Produces the worker's answer to one HIT. Consumes a fixed number of draws
/// per ground-truth box so streams stay aligned across conditions.
pub fn simulate_hit(
    worker: &SimWorker,
    mind: &WorkerMind,
    model: &BehaviorModel,
    task: SimTask<'_>,
    ctx: &SimContext,
    rng: &mut impl Rng,
) -> SimOutput {
    let scene = task.scene();
    if worker.spam {
        let boxes = spam_boxes(model, scene, rng);
        let load = boxes.len();
        let secs = elapsed(model, worker, load, 0.3, rng);
        let contribution = matches!(task, SimTask::Extend { .. }).then(|| Contribution::AddBoxes {
            boxes: boxes.iter().copied().take(vgold_core::workflow::MAX_TARGETS).collect(),
        });
        let boxes = match &contribution {
            Some(Contribution::AddBoxes { boxes }) => boxes.clone(),
            _ => boxes,
        };
        return SimOutput { boxes, elapsed: secs, contribution, load };
    }
    let e = effort(model, mind, ctx, task.expected_boxes());
    let perceiver = Perceiver {
        model,
        worker,
        skill: 1.0 - (1.0 - mind.skill) / e,
        diligence: 1.0 - (1.0 - mind.diligence) / e,
        fatigue: mind.fatigue,
        n: scene.count(),
        width: f64::from(scene.width),
        height: f64::from(scene.height),
    };
    match task {
        SimTask::Scene(scene) => {
            let boxes: Vec<BoundingBox> = scene.gt_boxes.iter().filter_map(|b| perceiver.perceive(b, rng)).collect();
            let load = scene.count();
            SimOutput {
                elapsed: elapsed(model, worker, load, e, rng),
                boxes,
                contribution: None,
                load,
            }
        }
        SimTask::Marked { scene, targets } => {
            let mut unique: Vec<usize> = targets.to_vec();
            unique.sort_unstable();
            unique.dedup();
            let p = Perceiver { n: unique.len(), ..perceiver };
            let boxes = unique.iter().filter_map(|&t| p.perceive(&scene.gt_boxes[t], rng)).collect();
            let load = unique.len();
            SimOutput {
                elapsed: elapsed(model, worker, load, e, rng),
                boxes,
                contribution: None,
                load,
            }
        }
        SimTask::Extend { scene, prior, max_new } => {
            let stop_early = rng.random::<f64>() < model.premature_completion && !prior.is_empty();
            let mut noticed = Vec::new();
            for gt in &scene.gt_boxes {
                let drawn = perceiver.perceive(gt, rng);
                let covered = prior.iter().any(|p| iou(p, gt) > model.covered_iou);
                if let (Some(b), false) = (drawn, covered) {
                    noticed.push(b);
                }
            }
            noticed.truncate(max_new);
            let load = noticed.len() + 1;
            let secs = elapsed(model, worker, load, e, rng);
            if stop_early || noticed.is_empty() {
                return SimOutput {
                    boxes: Vec::new(),
                    elapsed: secs,
                    contribution: Some(Contribution::Complete),
                    load,
                };
            }
            SimOutput {
                boxes: noticed.clone(),
                elapsed: secs,
                contribution: Some(Contribution::AddBoxes { boxes: noticed }),
                load,
            }
        }
    }
}

/// Per-HIT probability of leaving after a completed HIT.
pub fn hazard(worker: &SimWorker, mind: &WorkerMind, model: &BehaviorModel) -> f64 {
    if mind.blocked {
        return 1.0;
    }
    let low_tier = matches!(mind.tier, Some(Tier::Standard | Tier::AtRisk));
    let h = worker.dropout_propensity
        + model.hazard_per_warning * f64::from(mind.warnings)
        + if low_tier { model.hazard_low_tier } else { 0.0 }
        + model.hazard_unfair * (1.0 - mind.pay_ratio);
    h.clamp(0.0, 1.0)
}

/// Whether the worker takes another HIT. Always consumes one draw.
pub fn decide_continue(worker: &SimWorker, mind: &WorkerMind, model: &BehaviorModel, rng: &mut impl Rng) -> Decision {
    let u: f64 = rng.random();
    if mind.blocked || mind.hits >= worker.capacity || u < hazard(worker, mind, model) {
        Decision::Abandon
    } else {
        Decision::Continue
    }
}
