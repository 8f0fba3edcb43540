use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgold_core::dataset::{generate_corpus, BoundingBox, Corpus, Scene, SizeModel};
use vgold_core::ledger::Tier;
use vgold_core::scoring::score_boxes;
use vgold_core::Cents;
use vgold_sim::model::{
    decide_continue, hazard, simulate_hit, BehaviorModel, Decision, SimContext, SimTask, SimWorker, WorkerMind,
};

fn typical(id: &str) -> SimWorker {
    SimWorker {
        worker_id: id.into(),
        skill: 0.75,
        diligence: 0.7,
        load_sensitivity: 0.045,
        small_object_penalty: 0.06,
        learn_rate: 0.2,
        dropout_propensity: 0.01,
        spam: false,
        base_speed: 30.0,
        capacity: 50,
    }
}

fn spammer() -> SimWorker {
    SimWorker {
        spam: true,
        learn_rate: 0.0,
        ..typical("spam")
    }
}

/// Generous pay so the pay-fairness hook stays neutral.
const CTX: SimContext = SimContext {
    advertised: Cents(10_000),
    banner_visible: false,
};

fn corpus(per_count: usize) -> Corpus {
    let hist: BTreeMap<usize, usize> = (1..=14).map(|n| (n, per_count)).collect();
    generate_corpus(11, &hist, &SizeModel::default()).unwrap()
}

fn miou(worker: &SimWorker, mind: &WorkerMind, model: &BehaviorModel, scene: &Scene, rng: &mut ChaCha8Rng) -> f64 {
    let out = simulate_hit(worker, mind, model, SimTask::Scene(scene), &CTX, rng);
    score_boxes(&scene.gt_boxes, &out.boxes).miou
}

#[test]
fn noiseless_worker_scores_exactly_100() {
    let model = BehaviorModel::noiseless();
    let worker = SimWorker::ideal("ideal");
    let mind = WorkerMind::new(&worker, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scene in corpus(10).scenes() {
        assert_eq!(miou(&worker, &mind, &model, scene, &mut rng), 100.0, "{}", scene.scene_id);
    }
}

#[test]
fn spam_mean_is_below_the_filter_threshold() {
    let model = BehaviorModel::default();
    let worker = spammer();
    let mind = WorkerMind::new(&worker, &model);
    let scenes = corpus(72);
    assert!(scenes.len() >= 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mean = scenes.scenes().iter().map(|s| miou(&worker, &mind, &model, s, &mut rng)).sum::<f64>()
        / scenes.len() as f64;
    assert!(mean < 25.0, "spam mean {mean}");
}

#[test]
fn quality_declines_with_object_count() {
    let model = BehaviorModel::default();
    let worker = typical("w");
    let mind = WorkerMind::new(&worker, &model);
    let scenes = corpus(10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in 1..=14usize {
        let of_n: Vec<&Scene> = scenes.scenes().iter().filter(|s| s.count() == n).collect();
        let total: f64 = (0..1000).map(|t| miou(&worker, &mind, &model, of_n[t % of_n.len()], &mut rng)).sum();
        xs.push(n as f64);
        ys.push(total / 1000.0);
    }
    let mx = xs.iter().sum::<f64>() / 14.0;
    let my = ys.iter().sum::<f64>() / 14.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope < 0.0, "slope {slope} over {ys:?}");
}

#[test]
fn larger_boxes_score_higher() {
    let model = BehaviorModel::default();
    let worker = typical("w");
    let mind = WorkerMind::new(&worker, &model);
    let mut means = Vec::new();
    for side in [10.0, 20.0, 40.0, 80.0, 160.0] {
        let scene = Scene::new("one", 1024, 768, vec![BoundingBox::new(400.0, 300.0, side, side).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let total: f64 = (0..4000).map(|_| miou(&worker, &mind, &model, &scene, &mut rng)).sum();
        means.push(total / 4000.0);
    }
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

/// Mean mIoU after `k` feedback exposures, with the same draws for every `k`.
fn after_exposures(worker: &SimWorker, model: &BehaviorModel, scenes: &Corpus, k: usize) -> (WorkerMind, f64) {
    let mut mind = WorkerMind::new(worker, model);
    for _ in 0..k {
        mind.observe_feedback(worker, model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let total: f64 = (0..4).flat_map(|_| scenes.scenes()).map(|s| miou(worker, &mind, model, s, &mut rng)).sum();
    (mind, total / (4 * scenes.len()) as f64)
}

#[test]
fn feedback_never_lowers_expected_quality() {
    let model = BehaviorModel::default();
    let worker = typical("w");
    let scenes = corpus(10);
    let means: Vec<f64> = (0..=10).map(|k| after_exposures(&worker, &model, &scenes, k).1).collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
    assert!(means[10] > means[0] + 1.0, "{means:?}");
}

#[test]
fn spam_workers_do_not_learn() {
    let model = BehaviorModel::default();
    let worker = spammer();
    let scenes = corpus(10);
    let (first_mind, first) = after_exposures(&worker, &model, &scenes, 0);
    for k in 1..=10 {
        let (mind, mean) = after_exposures(&worker, &model, &scenes, k);
        assert_eq!(mean, first);
        assert_eq!((mind.skill, mind.diligence), (first_mind.skill, first_mind.diligence));
    }
}

#[test]
fn warnings_and_low_tiers_raise_the_hazard() {
    let model = BehaviorModel::default();
    let worker = SimWorker {
        skill: 0.4,
        ..typical("low")
    };
    let mut mind = WorkerMind::new(&worker, &model);
    let h0 = hazard(&worker, &mind, &model);
    mind.warnings = 2;
    let h2 = hazard(&worker, &mind, &model);
    assert!(h2 > h0);
    mind.tier = Some(Tier::AtRisk);
    assert!(hazard(&worker, &mind, &model) > h2);
    mind.tier = Some(Tier::A);
    mind.pay_ratio = 0.5;
    assert!(hazard(&worker, &mind, &model) > h2);
}

#[test]
fn blocked_workers_always_leave() {
    let model = BehaviorModel::default();
    let worker = SimWorker::ideal("w");
    let mut mind = WorkerMind::new(&worker, &model);
    mind.blocked = true;
    assert_eq!(hazard(&worker, &mind, &model), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        assert_eq!(decide_continue(&worker, &mind, &model, &mut rng), Decision::Abandon);
    }
}

#[test]
fn capacity_ends_participation() {
    let model = BehaviorModel::default();
    let worker = SimWorker {
        capacity: 3,
        ..SimWorker::ideal("w")
    };
    let mut mind = WorkerMind::new(&worker, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        assert_eq!(decide_continue(&worker, &mind, &model, &mut rng), Decision::Continue);
        mind.observe_hit(4, &model);
    }
    assert_eq!(decide_continue(&worker, &mind, &model, &mut rng), Decision::Abandon);
}

#[test]
fn time_grows_sublinearly_with_count() {
    let model = BehaviorModel {
        time_noise: 0.0,
        ..BehaviorModel::default()
    };
    let worker = SimWorker::ideal("w");
    let mind = WorkerMind::new(&worker, &model);
    let scenes = corpus(1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let per_box: Vec<f64> = scenes
        .scenes()
        .iter()
        .map(|s| {
            let out = simulate_hit(&worker, &mind, &model, SimTask::Scene(s), &CTX, &mut rng);
            (out.elapsed - model.overhead_secs) / s.count() as f64
        })
        .collect();
    assert!(per_box.windows(2).all(|w| w[1] < w[0]), "{per_box:?}");
}

#[test]
fn invalid_workers_are_rejected() {
    let w = SimWorker {
        spam: true,
        learn_rate: 0.1,
        ..typical("bad")
    };
    assert!(w.validate().is_err());
    let w = SimWorker {
        skill: 1.2,
        ..typical("bad")
    };
    assert!(w.validate().is_err());
    assert!(typical("ok").validate().is_ok());
}
