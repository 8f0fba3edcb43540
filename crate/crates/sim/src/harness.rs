//! Runs conditions end to end through the session engine with simulated
//! workers, then filters spammers and summarises.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::PathBuf;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vgold_core::dataset::{default_histogram, generate_corpus, load_corpus, Corpus, SizeModel};
use vgold_core::ledger::ConsequenceMode;
use vgold_core::seed;
use vgold_core::session::{
    ConditionSpec, Engine, ItemKind, ManualClock, MemorySink, NextHit, SessionEvent, Submission,
};

use crate::model::{
    decide_continue, pay_ratio, simulate_hit, BehaviorModel, Decision, SimContext, SimOutput, SimTask, SimWorker,
    WorkerMind,
};
use crate::population::PopulationSpec;
use crate::summary::{summarize, ConditionSummary, StatUnit};
use crate::SimError;

/// Spam filter: more than this many scored HITs...
pub const SPAM_MIN_HITS: usize = 5;
/// ...with an average below this mIoU.
pub const SPAM_MAX_AVG: f64 = 25.0;

/// Milliseconds between a worker's HITs.
const GAP_MS: u64 = 5_000;
/// Milliseconds a worker with nothing to do waits before asking again.
const RETRY_MS: u64 = 60_000;
const MAX_RETRIES: u32 = 30;
/// Arrival spacing of the initial pool and of replacements.
const ARRIVAL_MS: u64 = 7_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    Generate {
        seed: u64,
        /// Scenes per object count.
        #[serde(default, deserialize_with = "count_keys")]
        histogram: Option<BTreeMap<usize, usize>>,
        #[serde(default)]
        size_model: SizeModel,
    },
    Path {
        path: PathBuf,
    },
}

/// Tagged enums buffer their content, so integer map keys arrive as strings.
fn count_keys<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<BTreeMap<usize, usize>>, D::Error> {
    let raw: Option<BTreeMap<String, usize>> = Option::deserialize(d)?;
    raw.map(|m| {
        m.into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| serde::de::Error::custom(format!("histogram key {k:?} is not an object count")))
            })
            .collect()
    })
    .transpose()
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Generate {
            seed: 7,
            histogram: None,
            size_model: SizeModel::default(),
        }
    }
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus, SimError> {
        match self {
            CorpusSource::Generate {
                seed,
                histogram,
                size_model,
            } => {
                let hist = histogram.clone().unwrap_or_else(default_histogram);
                Ok(generate_corpus(*seed, &hist, size_model)?)
            }
            CorpusSource::Path { path } => Ok(load_corpus(path)?.corpus),
        }
    }
}

/// A full experiment: shared corpus and population, several conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub corpus: CorpusSource,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default)]
    pub model: BehaviorModel,
    pub conditions: Vec<ConditionSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stat_unit: StatUnit,
    #[serde(default = "default_baseline")]
    pub baseline: String,
}

fn default_baseline() -> String {
    "baseline".into()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.population.validate()?;
        self.model.validate()?;
        if self.conditions.is_empty() {
            return Err(SimError::Config("at least one condition is required".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.conditions {
            c.validate()?;
            if !names.insert(c.name.as_str()) {
                return Err(SimError::Config(format!("duplicate condition name {:?}", c.name)));
            }
        }
        Ok(())
    }
}

/// Raw outcome of one condition.
#[derive(Debug)]
pub struct ConditionRun {
    pub engine: Engine,
    pub events: Vec<SessionEvent>,
    pub workers: Vec<SimWorker>,
    pub minds: Vec<WorkerMind>,
}

impl ConditionRun {
    pub fn name(&self) -> &str {
        &self.engine.spec().name
    }

    /// Per-worker scored HIT qualities in completion order.
    pub fn worker_qualities(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
        for st in &self.engine.state().items {
            for r in &st.responses {
                if let Some(q) = r.quality {
                    out.entry(r.worker_id.clone()).or_default().push((r.ordinal, q));
                }
            }
        }
        out.into_iter()
            .map(|(w, mut v)| {
                v.sort_by_key(|p| p.0);
                (w, v.into_iter().map(|p| p.1).collect())
            })
            .collect()
    }

    pub fn excluded_workers(&self) -> BTreeSet<String> {
        spam_filter(&self.worker_qualities())
    }
}

/// Workers with more than `SPAM_MIN_HITS` scored HITs averaging below `SPAM_MAX_AVG`.
pub fn spam_filter(qualities: &BTreeMap<String, Vec<f64>>) -> BTreeSet<String> {
    qualities
        .iter()
        .filter(|(_, q)| q.len() > SPAM_MIN_HITS && q.iter().sum::<f64>() / (q.len() as f64) < SPAM_MAX_AVG)
        .map(|(w, _)| w.clone())
        .collect()
}

struct Pending {
    hit_id: String,
    output: SimOutput,
}

struct Slot {
    index: usize,
    worker: SimWorker,
    mind: WorkerMind,
    rng: ChaCha8Rng,
    pending: Option<Pending>,
    waits: u32,
}

/// Seeds the engine and its schedule from the experiment seed so every
/// condition of one seed shares item orders and gold offsets.
pub fn seeded_spec(spec: &ConditionSpec, seed: u64) -> ConditionSpec {
    let mut spec = spec.clone();
    spec.seed = seed::derive(seed, "engine");
    if let Some(s) = &mut spec.schedule {
        s.rng_seed = seed::derive(seed, "schedule");
    }
    spec
}

/// Simulates one condition until every item meets its quota.
pub fn run_condition(
    spec: &ConditionSpec,
    corpus: Arc<Corpus>,
    population: &PopulationSpec,
    model: &BehaviorModel,
    seed: u64,
) -> Result<ConditionRun, SimError> {
    population.validate()?;
    model.validate()?;
    let spec = seeded_spec(spec, seed);
    let banner_visible = spec.consequence.mode == ConsequenceMode::Tiered;
    let population_seed = seed::derive(seed, "population");
    let behaviour_seed = seed::derive(seed, "behaviour");
    let clock = ManualClock::new(0);
    let sink = MemorySink::new();
    let mut engine = Engine::new(spec, corpus.clone(), Box::new(clock.clone()), Box::new(sink.clone()))?;

    let spawn = |index: usize| {
        let worker = population.draw(population_seed, index);
        Slot {
            index,
            mind: WorkerMind::new(&worker, model),
            worker,
            rng: seed::rng(seed::derive_index(behaviour_seed, index as u64)),
            pending: None,
            waits: 0,
        }
    };
    let mut slots: Vec<Slot> = (0..population.size).map(spawn).collect();
    let mut drawn: Vec<SimWorker> = slots.iter().map(|s| s.worker.clone()).collect();
    let mut retired: Vec<(usize, WorkerMind)> = Vec::new();
    let mut next_index = population.size;
    let mut queue: BinaryHeap<Reverse<(u64, usize)>> =
        (0..slots.len()).map(|i| Reverse((i as u64 * ARRIVAL_MS, i))).collect();

    while let Some(Reverse((t, s))) = queue.pop() {
        if engine.quota_met() {
            break;
        }
        clock.set_ms(t);
        let depart = {
            let slot = &mut slots[s];
            let id = slot.worker.worker_id.clone();
            match slot.pending.take() {
                None => match engine.next_hit(&id)? {
                    NextHit::Assigned { hit } => {
                        let assigned = engine.worker(&id).and_then(|w| w.assigned.clone()).expect("just assigned");
                        let item = &engine.catalog()[assigned.item];
                        let scene = &corpus.scenes()[item.scene_idx];
                        let task = match &item.kind {
                            ItemKind::Scene => SimTask::Scene(scene),
                            ItemKind::Subtask { targets, .. } => SimTask::Marked { scene, targets },
                            ItemKind::Chain { .. } => SimTask::Extend {
                                scene,
                                prior: hit.prior_boxes.as_deref().unwrap_or(&[]),
                                max_new: hit.max_new_boxes.unwrap_or(vgold_core::workflow::MAX_TARGETS),
                            },
                        };
                        let ctx = SimContext {
                            advertised: hit.advertised,
                            banner_visible,
                        };
                        let output = simulate_hit(&slot.worker, &slot.mind, model, task, &ctx, &mut slot.rng);
                        slot.mind.pay_ratio = pay_ratio(model, hit.advertised, task.expected_boxes());
                        slot.waits = 0;
                        let done_at = t + (output.elapsed * 1000.0).round() as u64;
                        slot.pending = Some(Pending {
                            hit_id: hit.hit_id,
                            output,
                        });
                        queue.push(Reverse((done_at, s)));
                        false
                    }
                    NextHit::Blocked { .. } => true,
                    NextHit::NoWork => {
                        let others_busy = engine.state().workers.values().any(|w| w.assigned.is_some());
                        if others_busy && slot.waits < MAX_RETRIES {
                            slot.waits += 1;
                            queue.push(Reverse((t + RETRY_MS, s)));
                            false
                        } else {
                            true
                        }
                    }
                },
                Some(Pending { hit_id, output }) => {
                    let sub = Submission {
                        boxes: output.boxes,
                        elapsed: output.elapsed,
                        contribution: output.contribution,
                    };
                    let outcome = engine.submit(&id, &hit_id, sub)?;
                    slot.mind.observe_hit(output.load, model);
                    if outcome.feedback.is_some() {
                        slot.mind.observe_feedback(&slot.worker, model);
                    }
                    if outcome.warning.is_some() {
                        slot.mind.warnings += 1;
                    }
                    slot.mind.tier = if banner_visible { outcome.banner.tier } else { None };
                    slot.mind.blocked = outcome.blocked;
                    match decide_continue(&slot.worker, &slot.mind, model, &mut slot.rng) {
                        Decision::Continue => {
                            queue.push(Reverse((t + GAP_MS, s)));
                            false
                        }
                        Decision::Abandon => true,
                    }
                }
            }
        };
        if depart {
            let id = slots[s].worker.worker_id.clone();
            engine.abandon(&id)?;
            if next_index < population.max_draws && !engine.quota_met() {
                let fresh = spawn(next_index);
                next_index += 1;
                drawn.push(fresh.worker.clone());
                let old = std::mem::replace(&mut slots[s], fresh);
                retired.push((old.index, old.mind));
                queue.push(Reverse((t + ARRIVAL_MS, s)));
            }
        }
    }

    let events = sink.events();
    if !engine.quota_met() {
        return Err(SimError::PopulationExhausted {
            condition: engine.spec().name.clone(),
            draws: next_index,
            events: Box::new(events),
        });
    }
    retired.extend(slots.into_iter().map(|s| (s.index, s.mind)));
    retired.sort_by_key(|r| r.0);
    let minds = retired.into_iter().map(|r| r.1).collect();
    Ok(ConditionRun {
        engine,
        events,
        workers: drawn,
        minds,
    })
}

/// Every condition of an experiment for one seed.
#[derive(Debug)]
pub struct ExperimentRun {
    pub runs: Vec<ConditionRun>,
    pub summaries: Vec<ConditionSummary>,
}

/// Runs the conditions in parallel; results keep configuration order.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentRun, SimError> {
    config.validate()?;
    let corpus = Arc::new(config.corpus.load()?);
    let results: Vec<Result<ConditionRun, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .conditions
            .iter()
            .map(|c| {
                let corpus = corpus.clone();
                scope.spawn(move || run_condition(c, corpus, &config.population, &config.model, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("condition thread panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summaries = runs.iter().map(|r| summarize(r, config.stat_unit)).collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentRun { runs, summaries })
}
