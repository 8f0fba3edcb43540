//! Event-sourced session engine.
//!
//! Every state change goes through [`Engine::apply`]. Live operations first
//! compute the events they imply, then append and apply them, so the state
//! after any prefix of the log equals a fold of `apply` over that prefix.

mod clock;
mod config;
mod event;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationSet, BoundingBox, Corpus, Scene};
use crate::ledger::{banner, BannerState, LedgerAction, Tier, WorkerLedger, BLOCK_REASON};
use crate::money::Cents;
use crate::payment::{price, settle, PaymentPolicy};
use crate::scheduler::{next_hit_kind, record_gold_outcome, record_issue, GoldVerdict, HitKind, ScheduleState};
use crate::scoring::{iou, score_boxes, GoldFeedback};
use crate::seed;
use crate::workflow::{self, decompose, iterate, marker_targets, Contribution, IterationState, Marker, Part, SubTask};

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{ConditionSpec, TaskSelection, WorkflowSpec};
pub use event::{parse_log, read_log, EventPayload, EventSink, MemorySink, NdjsonSink, NullSink, SessionEvent};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown worker {0:?}")]
    UnknownWorker(String),
    #[error("worker {0:?} is blocked: {BLOCK_REASON}")]
    Blocked(String),
    #[error("worker {0:?} has left the session")]
    Departed(String),
    #[error("HIT {hit_id:?} is not the HIT assigned to worker {worker:?}")]
    StaleHit { worker: String, hit_id: String },
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
    #[error("event {seq} cannot be applied: {message}")]
    Replay { seq: u64, message: String },
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemKind {
    /// A whole scene.
    Scene,
    /// Part of a decomposed scene; `targets` index the scene's ground truth.
    Subtask { subtask: SubTask, targets: Vec<usize> },
    /// One iterative-improvement chain over a scene.
    Chain { slot: usize },
}

/// A unit of work with its response quota.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkItem {
    pub scene_idx: usize,
    pub kind: ItemKind,
    pub price: Cents,
    /// Object count the price is quoted on.
    pub price_count: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub hit_id: String,
    pub worker_id: String,
    pub boxes: Vec<BoundingBox>,
    pub elapsed: f64,
    pub gold: bool,
    pub quality: Option<f64>,
    /// 1-based position among the worker's completed HITs.
    pub ordinal: u32,
    pub contribution: Option<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ItemState {
    pub in_flight: u32,
    pub responses: Vec<Response>,
    pub chain: Option<IterationState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedHit {
    pub hit_id: String,
    pub item: usize,
    pub gold: bool,
    pub advertised: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub worker_id: String,
    /// Item preference order, fixed at registration.
    pub order: Vec<usize>,
    pub schedule: ScheduleState,
    pub ledger: WorkerLedger,
    pub assigned: Option<AssignedHit>,
    pub done: BTreeSet<usize>,
    pub completed_hits: u32,
    pub earned: Cents,
    pub departed: bool,
    pub next_worker_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineState {
    pub workers: BTreeMap<String, WorkerState>,
    pub items: Vec<ItemState>,
    pub hits_issued: u64,
    pub next_seq: u64,
}

/// Client view of a scene: no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
}

/// A HIT as sent to the worker. Gold status is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitPayload {
    pub hit_id: String,
    pub scene: SceneView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<Vec<Marker>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_boxes: Option<Vec<BoundingBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_boxes: Option<usize>,
    pub advertised: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextHit {
    Assigned { hit: HitPayload },
    Blocked { reason: String },
    NoWork,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Submission {
    pub boxes: Vec<BoundingBox>,
    pub elapsed: f64,
    /// Iterative HITs only; defaults to adding `boxes`.
    #[serde(default)]
    pub contribution: Option<Contribution>,
}

/// Payout as shown to the worker. Post-task bonuses depend on accuracy and
/// stay pending so non-gold responses never disclose a score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPayout {
    pub hit_id: String,
    pub advertised: Cents,
    pub base_paid: Cents,
    pub bonus_paid: Option<Cents>,
    pub bonus_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    /// Present only for visible golds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<GoldFeedback>,
    pub banner: BannerState,
    pub payout: ClientPayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub blocked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub worker_id: String,
    pub gold_count: usize,
    pub running_avg: Option<f64>,
    pub tier: Option<Tier>,
    pub blocked: bool,
    pub warnings_issued: u32,
    pub bonus_total: Cents,
    pub completed_hits: u32,
    pub earned: Cents,
    pub has_assignment: bool,
    pub departed: bool,
    pub banner: BannerState,
}

/// One whole-scene response, reassembled when the workflow splits scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneResponse {
    pub scene_idx: usize,
    pub slot: usize,
    pub annotation: AnnotationSet,
    pub contributors: Vec<String>,
    pub gold: bool,
    /// Summed over contributing HITs.
    pub elapsed: f64,
    /// Completion ordinal of the submitting worker; single-pass only.
    pub ordinal: Option<u32>,
}

pub struct Engine {
    spec: ConditionSpec,
    corpus: Arc<Corpus>,
    catalog: Vec<WorkItem>,
    state: EngineState,
    clock: Box<dyn Clock>,
    sink: Box<dyn EventSink>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("condition", &self.spec.name)
            .field("items", &self.catalog.len())
            .field("workers", &self.state.workers.len())
            .field("events", &self.state.next_seq)
            .finish()
    }
}

fn warning_text(t_min: f64) -> String {
    format!("Your accuracy on a quality check was below {t_min:.0}%. Continued low accuracy will end your access to these tasks.")
}

/// Mean best IoU of each box against any ground-truth box, in percent.
fn best_match_quality(gt: &[BoundingBox], boxes: &[BoundingBox]) -> Option<f64> {
    if boxes.is_empty() {
        return None;
    }
    let total: f64 = boxes
        .iter()
        .map(|b| gt.iter().map(|g| iou(g, b)).fold(0.0, f64::max))
        .sum();
    Some(100.0 * total / boxes.len() as f64)
}

impl Engine {
    pub fn new(
        spec: ConditionSpec,
        corpus: Arc<Corpus>,
        clock: Box<dyn Clock>,
        sink: Box<dyn EventSink>,
    ) -> Result<Self, EngineError> {
        spec.validate()?;
        if corpus.is_empty() {
            return Err(EngineError::Config("corpus has no scenes".into()));
        }
        let catalog = build_catalog(&spec, &corpus)?;
        let mut engine = Self {
            state: EngineState {
                items: vec![ItemState::default(); catalog.len()],
                ..Default::default()
            },
            spec,
            corpus,
            catalog,
            clock,
            sink,
        };
        for (i, item) in engine.catalog.iter().enumerate() {
            if let ItemKind::Chain { .. } = item.kind {
                let scene = &engine.corpus.scenes()[item.scene_idx];
                engine.state.items[i].chain = Some(IterationState::new(scene.scene_id.clone()));
            }
        }
        for w in engine.spec.roster.clone() {
            let fresh = engine.fresh_worker(&w);
            engine.state.workers.insert(w, fresh);
        }
        Ok(engine)
    }

    /// Engine without persistence, driven by a manual clock starting at 0.
    pub fn in_memory(spec: ConditionSpec, corpus: Arc<Corpus>) -> Result<Self, EngineError> {
        Self::new(spec, corpus, Box::new(ManualClock::new(0)), Box::new(NullSink))
    }

    /// Rebuilds an engine by applying `events` in order; later events go to `sink`.
    pub fn from_log(
        spec: ConditionSpec,
        corpus: Arc<Corpus>,
        events: &[SessionEvent],
        clock: Box<dyn Clock>,
        sink: Box<dyn EventSink>,
    ) -> Result<Self, EngineError> {
        let mut engine = Self::new(spec, corpus, clock, sink)?;
        for e in events {
            engine.apply(e)?;
        }
        Ok(engine)
    }

    pub fn replay(spec: ConditionSpec, corpus: Arc<Corpus>, events: &[SessionEvent]) -> Result<Self, EngineError> {
        Self::from_log(spec, corpus, events, Box::new(ManualClock::new(0)), Box::new(NullSink))
    }

    pub fn spec(&self) -> &ConditionSpec {
        &self.spec
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn catalog(&self) -> &[WorkItem] {
        &self.catalog
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn worker(&self, worker_id: &str) -> Option<&WorkerState> {
        self.state.workers.get(worker_id)
    }

    fn scene_of(&self, item: usize) -> &Scene {
        &self.corpus.scenes()[self.catalog[item].scene_idx]
    }

    /// Item order for a worker: a seeded shuffle, optionally re-sorted by price.
    pub fn preference_order(&self, worker_id: &str) -> Vec<usize> {
        let mut rng = seed::rng(seed::derive(seed::derive(self.spec.seed, "order"), worker_id));
        let mut order: Vec<usize> = (0..self.catalog.len()).collect();
        order.shuffle(&mut rng);
        if self.spec.task_selection == TaskSelection::HighPayFirst {
            order.sort_by_key(|&i| std::cmp::Reverse(self.catalog[i].price));
        }
        order
    }

    fn fresh_worker(&self, worker_id: &str) -> WorkerState {
        WorkerState {
            worker_id: worker_id.to_string(),
            order: self.preference_order(worker_id),
            schedule: ScheduleState::new(worker_id),
            ledger: WorkerLedger::new(worker_id),
            assigned: None,
            done: BTreeSet::new(),
            completed_hits: 0,
            earned: Cents::ZERO,
            departed: false,
            next_worker_seq: 0,
        }
    }

    fn available(&self, item: usize, worker: &WorkerState) -> bool {
        if worker.done.contains(&item) {
            return false;
        }
        let st = &self.state.items[item];
        match &self.catalog[item].kind {
            ItemKind::Chain { .. } => st.in_flight == 0 && !st.chain.as_ref().is_some_and(|c| c.completed),
            _ => st.responses.len() + (st.in_flight as usize) < self.catalog[item].quota,
        }
    }

    fn pick_item(&self, worker: &WorkerState) -> Option<usize> {
        worker.order.iter().copied().find(|&i| self.available(i, worker))
    }

    /// Whether every item has met its quota.
    pub fn quota_met(&self) -> bool {
        self.catalog.iter().zip(&self.state.items).all(|(item, st)| match item.kind {
            ItemKind::Chain { .. } => st.chain.as_ref().is_some_and(|c| c.completed),
            _ => st.responses.len() >= item.quota,
        })
    }

    /// Whether `worker_id` could be assigned anything right now.
    pub fn has_work_for(&self, worker_id: &str) -> bool {
        match self.state.workers.get(worker_id) {
            Some(w) => self.pick_item(w).is_some(),
            None => self.pick_item(&self.fresh_worker(worker_id)).is_some(),
        }
    }

    fn payload(&self, hit: &AssignedHit) -> HitPayload {
        let scene = self.scene_of(hit.item);
        let view = SceneView {
            scene_id: scene.scene_id.clone(),
            width: scene.width,
            height: scene.height,
        };
        let (markers, prior_boxes, max_new_boxes) = match &self.catalog[hit.item].kind {
            ItemKind::Scene => (None, None, None),
            ItemKind::Subtask { subtask, .. } => (Some(subtask.markers.clone()), None, None),
            ItemKind::Chain { .. } => {
                let chain = self.state.items[hit.item].chain.as_ref().expect("chain item has chain state");
                (None, Some(chain.plain_boxes()), Some(workflow::MAX_TARGETS))
            }
        };
        HitPayload {
            hit_id: hit.hit_id.clone(),
            scene: view,
            markers,
            prior_boxes,
            max_new_boxes,
            advertised: hit.advertised,
        }
    }

    fn emit(&mut self, worker_id: &str, hit_id: Option<&str>, payload: EventPayload) -> Result<(), EngineError> {
        let worker_seq = self.state.workers.get(worker_id).map_or(0, |w| w.next_worker_seq);
        let event = SessionEvent {
            seq: self.state.next_seq,
            worker_seq,
            worker_id: worker_id.to_string(),
            hit_id: hit_id.map(str::to_string),
            timestamp_ms: self.clock.now_ms(),
            payload,
        };
        self.sink.append(&event).map_err(|source| EngineError::Io {
            path: PathBuf::from("<event sink>"),
            source,
        })?;
        self.apply(&event)
    }

    /// Returns the worker's current HIT, assigning a new one if none is open.
    pub fn next_hit(&mut self, worker_id: &str) -> Result<NextHit, EngineError> {
        let fresh;
        let worker = match self.state.workers.get(worker_id) {
            Some(w) => {
                if let Some(hit) = &w.assigned {
                    return Ok(NextHit::Assigned { hit: self.payload(hit) });
                }
                if w.ledger.blocked {
                    return Ok(NextHit::Blocked { reason: BLOCK_REASON.into() });
                }
                if w.departed {
                    return Err(EngineError::Departed(worker_id.into()));
                }
                w
            }
            None if self.spec.open_enrollment => {
                fresh = self.fresh_worker(worker_id);
                &fresh
            }
            None => return Err(EngineError::UnknownWorker(worker_id.into())),
        };
        let Some(item) = self.pick_item(worker) else {
            return Ok(NextHit::NoWork);
        };
        let gold = match &self.spec.schedule {
            Some(policy) => next_hit_kind(policy, &worker.schedule) == HitKind::Gold,
            None => false,
        };
        let hit_id = format!("h{:06}", self.state.hits_issued + 1);
        let advertised = self.catalog[item].price;
        self.emit(worker_id, Some(&hit_id), EventPayload::HitAssigned { item, gold, advertised })?;
        let hit = self.state.workers[worker_id].assigned.clone().expect("assignment just applied");
        Ok(NextHit::Assigned { hit: self.payload(&hit) })
    }

    pub fn submit(&mut self, worker_id: &str, hit_id: &str, sub: Submission) -> Result<SubmitOutcome, EngineError> {
        let worker = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| EngineError::UnknownWorker(worker_id.into()))?;
        if worker.ledger.blocked {
            return Err(EngineError::Blocked(worker_id.into()));
        }
        if worker.departed {
            return Err(EngineError::Departed(worker_id.into()));
        }
        let hit = match &worker.assigned {
            Some(h) if h.hit_id == hit_id => h.clone(),
            _ => {
                return Err(EngineError::StaleHit {
                    worker: worker_id.into(),
                    hit_id: hit_id.into(),
                })
            }
        };
        if !(sub.elapsed.is_finite() && sub.elapsed >= 0.0) {
            return Err(EngineError::InvalidSubmission("elapsed must be finite and non-negative".into()));
        }
        let item = &self.catalog[hit.item];
        let scene = self.scene_of(hit.item);
        let (boxes, contribution, quality, report) = match &item.kind {
            ItemKind::Scene => {
                if sub.contribution.is_some() {
                    return Err(EngineError::InvalidSubmission("contribution only applies to iterative HITs".into()));
                }
                let report = score_boxes(&scene.gt_boxes, &sub.boxes);
                let q = Some(report.miou);
                (sub.boxes, None, q, report)
            }
            ItemKind::Subtask { targets, .. } => {
                if sub.contribution.is_some() {
                    return Err(EngineError::InvalidSubmission("contribution only applies to iterative HITs".into()));
                }
                let gt: Vec<BoundingBox> = targets.iter().map(|&t| scene.gt_boxes[t]).collect();
                let report = score_boxes(&gt, &sub.boxes);
                let q = Some(report.miou);
                (sub.boxes, None, q, report)
            }
            ItemKind::Chain { .. } => {
                let c = sub.contribution.unwrap_or(Contribution::AddBoxes { boxes: sub.boxes });
                let chain = self.state.items[hit.item].chain.as_ref().expect("chain item has chain state");
                iterate(chain, worker_id, &c).map_err(|e| EngineError::InvalidSubmission(e.to_string()))?;
                let boxes = match &c {
                    Contribution::AddBoxes { boxes } => boxes.clone(),
                    Contribution::Adjust { bbox, .. } => vec![*bbox],
                    Contribution::Complete => Vec::new(),
                };
                let q = best_match_quality(&scene.gt_boxes, &boxes);
                let report = score_boxes(&scene.gt_boxes, &boxes);
                (boxes, Some(c), q, report)
            }
        };

        let mut follow = Vec::new();
        let mut bonus = Cents::ZERO;
        let mut feedback = None;
        let mut warning = None;
        let consequence = &self.spec.consequence;
        let mut ledger = worker.ledger.clone();
        if hit.gold {
            let miou = report.miou;
            ledger
                .push_gold_score(miou)
                .map_err(|_| EngineError::Blocked(worker_id.into()))?;
            let avg = ledger.running_avg().expect("score just pushed");
            let verdict = match &self.spec.schedule {
                Some(policy) => {
                    let mut sched = worker.schedule.clone();
                    record_gold_outcome(policy, &mut sched, miou, avg)
                        .map_err(|e| EngineError::InvalidSubmission(e.to_string()))?
                }
                None => GoldVerdict::Continue,
            };
            let fb = GoldFeedback::new(scene, &boxes, &report);
            feedback = Some(fb.clone());
            follow.push(EventPayload::GoldFeedback { feedback: fb });
            match ledger.decide_action(consequence, miou, scene.count(), verdict) {
                LedgerAction::None => {}
                LedgerAction::Warn => {
                    warning = Some(warning_text(consequence.tiers.t_min));
                    follow.push(EventPayload::Warning { running_avg: avg });
                }
                LedgerAction::Bonus(amount) => {
                    bonus = amount;
                    follow.push(EventPayload::Bonus { amount });
                }
                LedgerAction::Block => follow.push(EventPayload::Block { reason: BLOCK_REASON.into() }),
            }
        } else if item.kind == ItemKind::Scene {
            let amount = ledger.image_bonus(consequence, scene.count());
            if amount > Cents::ZERO {
                bonus = amount;
                follow.push(EventPayload::Bonus { amount });
            }
        }
        let payout = settle(
            &self.spec.payment,
            hit_id,
            item.price_count,
            &report,
            bonus,
            &self.spec.price_context,
        )
        .map_err(|e| EngineError::Config(e.to_string()))?;
        let pending = matches!(self.spec.payment, PaymentPolicy::PostTaskBonus { .. });
        let client_payout = ClientPayout {
            hit_id: hit_id.to_string(),
            advertised: payout.advertised,
            base_paid: payout.base_paid,
            bonus_paid: (!pending).then_some(payout.bonus_paid),
            bonus_pending: pending,
        };

        self.emit(
            worker_id,
            Some(hit_id),
            EventPayload::Submitted {
                boxes,
                elapsed: sub.elapsed,
                contribution,
                quality,
                payout,
            },
        )?;
        for payload in follow {
            self.emit(worker_id, Some(hit_id), payload)?;
        }
        let w = &self.state.workers[worker_id];
        Ok(SubmitOutcome {
            feedback,
            banner: banner(&w.ledger, &self.spec.consequence),
            payout: client_payout,
            warning,
            blocked: w.ledger.blocked,
        })
    }

    /// The worker leaves; any open HIT returns to the pool.
    pub fn abandon(&mut self, worker_id: &str) -> Result<(), EngineError> {
        let w = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| EngineError::UnknownWorker(worker_id.into()))?;
        if w.departed {
            return Ok(());
        }
        let hit_id = w.assigned.as_ref().map(|h| h.hit_id.clone());
        self.emit(worker_id, hit_id.as_deref(), EventPayload::Abandon)
    }

    pub fn status(&self, worker_id: &str) -> Result<StatusView, EngineError> {
        let w = self
            .state
            .workers
            .get(worker_id)
            .ok_or_else(|| EngineError::UnknownWorker(worker_id.into()))?;
        let tiers = &self.spec.consequence.tiers;
        Ok(StatusView {
            worker_id: w.worker_id.clone(),
            gold_count: w.ledger.gold_scores.len(),
            running_avg: w.ledger.running_avg(),
            tier: w.ledger.tier(tiers),
            blocked: w.ledger.blocked,
            warnings_issued: w.ledger.warnings_issued,
            bonus_total: w.ledger.bonus_total(),
            completed_hits: w.completed_hits,
            earned: w.earned,
            has_assignment: w.assigned.is_some(),
            departed: w.departed,
            banner: banner(&w.ledger, &self.spec.consequence),
        })
    }

    fn replay_err(&self, seq: u64, message: impl Into<String>) -> EngineError {
        EngineError::Replay {
            seq,
            message: message.into(),
        }
    }

    /// Applies one event. This is the only place engine state changes.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), EngineError> {
        let seq = event.seq;
        if seq != self.state.next_seq {
            return Err(self.replay_err(seq, format!("expected sequence number {}", self.state.next_seq)));
        }
        let wid = event.worker_id.as_str();
        if !self.state.workers.contains_key(wid) {
            let registers = matches!(event.payload, EventPayload::HitAssigned { .. });
            if !registers {
                return Err(self.replay_err(seq, format!("unknown worker {wid:?}")));
            }
            if !self.spec.open_enrollment {
                return Err(self.replay_err(seq, format!("worker {wid:?} not enrolled")));
            }
            let fresh = self.fresh_worker(wid);
            self.state.workers.insert(wid.to_string(), fresh);
        }
        let expected_wseq = self.state.workers[wid].next_worker_seq;
        if event.worker_seq != expected_wseq {
            return Err(self.replay_err(seq, format!("expected worker sequence number {expected_wseq}")));
        }
        let hit_id = event.hit_id.clone().unwrap_or_default();

        match &event.payload {
            EventPayload::HitAssigned { item, gold, advertised } => {
                let item = *item;
                let w = &self.state.workers[wid];
                if w.assigned.is_some() || w.ledger.blocked || w.departed {
                    return Err(self.replay_err(seq, "worker cannot take a HIT"));
                }
                if item >= self.catalog.len() || !self.available(item, w) {
                    return Err(self.replay_err(seq, format!("item {item} not available")));
                }
                if *gold && self.spec.schedule.is_none() {
                    return Err(self.replay_err(seq, "gold HIT without a schedule"));
                }
                let w = self.state.workers.get_mut(wid).expect("checked above");
                record_issue(&mut w.schedule, if *gold { HitKind::Gold } else { HitKind::Standard });
                w.assigned = Some(AssignedHit {
                    hit_id,
                    item,
                    gold: *gold,
                    advertised: *advertised,
                });
                self.state.items[item].in_flight += 1;
                self.state.hits_issued += 1;
            }
            EventPayload::Submitted {
                boxes,
                elapsed,
                contribution,
                quality,
                payout,
            } => {
                let hit = match &self.state.workers[wid].assigned {
                    Some(h) if h.hit_id == hit_id => h.clone(),
                    _ => return Err(self.replay_err(seq, format!("HIT {hit_id:?} not assigned to {wid:?}"))),
                };
                let max_iterations = match self.spec.workflow {
                    WorkflowSpec::Iterative { max_iterations } => max_iterations,
                    _ => u32::MAX,
                };
                let st = &mut self.state.items[hit.item];
                if let Some(chain) = &mut st.chain {
                    let c = contribution.clone().unwrap_or(Contribution::AddBoxes { boxes: boxes.clone() });
                    let mut next = iterate(chain, wid, &c).map_err(|e| EngineError::Replay {
                        seq,
                        message: e.to_string(),
                    })?;
                    if next.iteration_index >= max_iterations {
                        next.completed = true;
                    }
                    *chain = next;
                }
                st.in_flight -= 1;
                let w = self.state.workers.get_mut(wid).expect("worker registered");
                w.assigned = None;
                w.done.insert(hit.item);
                w.completed_hits += 1;
                w.earned += payout.total;
                let ordinal = w.completed_hits;
                if hit.gold {
                    let score = quality.ok_or_else(|| EngineError::Replay {
                        seq,
                        message: "gold submission without a score".into(),
                    })?;
                    w.ledger.push_gold_score(score).map_err(|e| EngineError::Replay {
                        seq,
                        message: e.to_string(),
                    })?;
                    if let Some(policy) = &self.spec.schedule {
                        let avg = w.ledger.running_avg().expect("score just pushed");
                        record_gold_outcome(policy, &mut w.schedule, score, avg).map_err(|e| EngineError::Replay {
                            seq,
                            message: e.to_string(),
                        })?;
                    }
                }
                self.state.items[hit.item].responses.push(Response {
                    hit_id,
                    worker_id: wid.to_string(),
                    boxes: boxes.clone(),
                    elapsed: *elapsed,
                    gold: hit.gold,
                    quality: *quality,
                    ordinal,
                    contribution: contribution.clone(),
                });
            }
            EventPayload::GoldFeedback { .. } => {}
            EventPayload::Warning { .. } => {
                let w = self.state.workers.get_mut(wid).expect("worker registered");
                w.ledger.apply_action(&hit_id, &LedgerAction::Warn);
            }
            EventPayload::Bonus { amount } => {
                let w = self.state.workers.get_mut(wid).expect("worker registered");
                w.ledger.apply_action(&hit_id, &LedgerAction::Bonus(*amount));
            }
            EventPayload::Block { .. } => {
                let w = self.state.workers.get_mut(wid).expect("worker registered");
                w.ledger.apply_action(&hit_id, &LedgerAction::Block);
            }
            EventPayload::Abandon => {
                let w = self.state.workers.get_mut(wid).expect("worker registered");
                if let Some(h) = w.assigned.take() {
                    self.state.items[h.item].in_flight -= 1;
                }
                w.departed = true;
            }
        }
        self.state.next_seq += 1;
        self.state
            .workers
            .get_mut(wid)
            .expect("worker registered")
            .next_worker_seq += 1;
        Ok(())
    }

    /// Whole-scene responses. Decomposed scenes pair the k-th response of
    /// every subtask; iterative scenes yield one response per completed chain.
    pub fn scene_responses(&self) -> Vec<SceneResponse> {
        self.scene_responses_excluding(&BTreeSet::new())
    }

    /// As [`Engine::scene_responses`], with every box contributed by an
    /// excluded worker removed. Responses left with no contributor are dropped.
    pub fn scene_responses_excluding(&self, excluded: &BTreeSet<String>) -> Vec<SceneResponse> {
        let mut out = Vec::new();
        match &self.spec.workflow {
            WorkflowSpec::Single => {
                for (i, item) in self.catalog.iter().enumerate() {
                    let scene = &self.corpus.scenes()[item.scene_idx];
                    for (slot, r) in self.state.items[i].responses.iter().enumerate() {
                        if excluded.contains(&r.worker_id) {
                            continue;
                        }
                        out.push(SceneResponse {
                            scene_idx: item.scene_idx,
                            slot,
                            annotation: AnnotationSet {
                                scene_id: scene.scene_id.clone(),
                                worker_id: r.worker_id.clone(),
                                boxes: r.boxes.clone(),
                                elapsed: r.elapsed,
                            },
                            contributors: vec![r.worker_id.clone()],
                            gold: r.gold,
                            elapsed: r.elapsed,
                            ordinal: Some(r.ordinal),
                        });
                    }
                }
            }
            WorkflowSpec::Decomposition { .. } => {
                let mut by_scene: Vec<Vec<usize>> = vec![Vec::new(); self.corpus.len()];
                for (i, item) in self.catalog.iter().enumerate() {
                    by_scene[item.scene_idx].push(i);
                }
                for (scene_idx, items) in by_scene.iter().enumerate() {
                    let scene = &self.corpus.scenes()[scene_idx];
                    let filled = items
                        .iter()
                        .map(|&i| self.state.items[i].responses.len())
                        .min()
                        .unwrap_or(self.spec.responses_per_scene);
                    for slot in 0..filled {
                        let kept: Vec<&Response> = items
                            .iter()
                            .map(|&i| &self.state.items[i].responses[slot])
                            .filter(|r| !excluded.contains(&r.worker_id))
                            .collect();
                        if kept.is_empty() && !items.is_empty() {
                            continue;
                        }
                        let parts: Vec<Part> = kept
                            .iter()
                            .map(|r| {
                                Part::Annotation(AnnotationSet {
                                    scene_id: scene.scene_id.clone(),
                                    worker_id: r.worker_id.clone(),
                                    boxes: r.boxes.clone(),
                                    elapsed: r.elapsed,
                                })
                            })
                            .collect();
                        let merged = workflow::reassemble(scene, &parts).expect("parts share the scene");
                        out.push(SceneResponse {
                            scene_idx,
                            slot,
                            elapsed: merged.annotation.elapsed,
                            annotation: merged.annotation,
                            contributors: kept.iter().map(|r| r.worker_id.clone()).collect(),
                            gold: false,
                            ordinal: None,
                        });
                    }
                }
            }
            WorkflowSpec::Iterative { .. } => {
                for (i, item) in self.catalog.iter().enumerate() {
                    let st = &self.state.items[i];
                    let Some(chain) = st.chain.as_ref().filter(|c| c.completed) else {
                        continue;
                    };
                    let ItemKind::Chain { slot } = item.kind else { continue };
                    let mut contributors: Vec<String> = Vec::new();
                    for r in st.responses.iter().filter(|r| !excluded.contains(&r.worker_id)) {
                        if !contributors.contains(&r.worker_id) {
                            contributors.push(r.worker_id.clone());
                        }
                    }
                    if contributors.is_empty() {
                        continue;
                    }
                    let mut chain = chain.clone();
                    chain.boxes.retain(|b| !excluded.contains(&b.contributor));
                    let scene = &self.corpus.scenes()[item.scene_idx];
                    let merged = workflow::reassemble(scene, &[Part::Iteration(chain)]).expect("chain shares the scene");
                    let elapsed = st
                        .responses
                        .iter()
                        .filter(|r| !excluded.contains(&r.worker_id))
                        .map(|r| r.elapsed)
                        .sum();
                    out.push(SceneResponse {
                        scene_idx: item.scene_idx,
                        slot,
                        annotation: AnnotationSet { elapsed, ..merged.annotation },
                        contributors,
                        gold: false,
                        elapsed,
                        ordinal: None,
                    });
                }
            }
        }
        out
    }
}

fn build_catalog(spec: &ConditionSpec, corpus: &Corpus) -> Result<Vec<WorkItem>, EngineError> {
    let quote = |count: usize| {
        price(&spec.payment, count, &spec.price_context)
            .map(|q| q.amount)
            .map_err(|e| EngineError::Config(e.to_string()))
    };
    let r = spec.responses_per_scene;
    let mut catalog = Vec::new();
    for (scene_idx, scene) in corpus.scenes().iter().enumerate() {
        match &spec.workflow {
            WorkflowSpec::Single => catalog.push(WorkItem {
                scene_idx,
                kind: ItemKind::Scene,
                price: quote(scene.count())?,
                price_count: scene.count(),
                quota: r,
            }),
            WorkflowSpec::Decomposition { source, noise } => {
                let mut rng = seed::rng(seed::derive(spec.seed, &format!("markers/{}", scene.scene_id)));
                for subtask in decompose(scene, *source, noise, &mut rng) {
                    let targets = marker_targets(scene, &subtask);
                    let n = subtask.markers.len();
                    catalog.push(WorkItem {
                        scene_idx,
                        price: quote(n)?,
                        price_count: n,
                        kind: ItemKind::Subtask { subtask, targets },
                        quota: r,
                    });
                }
            }
            WorkflowSpec::Iterative { .. } => {
                for slot in 0..r {
                    catalog.push(WorkItem {
                        scene_idx,
                        kind: ItemKind::Chain { slot },
                        price: quote(scene.count())?,
                        price_count: scene.count(),
                        quota: 1,
                    });
                }
            }
        }
    }
    Ok(catalog)
}

#[cfg(test)]
mod tests;
