use super::*;
use crate::dataset::{default_histogram, generate_corpus, SizeModel};
use crate::ledger::{ConsequenceMode, ConsequencePolicy};
use crate::scheduler::SchedulePolicy;
use crate::workflow::MarkerSource;

fn corpus() -> Arc<Corpus> {
    Arc::new(generate_corpus(3, &default_histogram(), &SizeModel::default()).unwrap())
}

fn small_corpus() -> Arc<Corpus> {
    let hist = [(2usize, 2usize), (5, 1)].into_iter().collect();
    Arc::new(generate_corpus(4, &hist, &SizeModel::default()).unwrap())
}

fn assigned(n: NextHit) -> HitPayload {
    match n {
        NextHit::Assigned { hit } => hit,
        other => panic!("expected assignment, got {other:?}"),
    }
}

fn gt_of(engine: &Engine, hit: &HitPayload) -> Vec<BoundingBox> {
    engine.corpus().scene(&hit.scene.scene_id).unwrap().gt_boxes.clone()
}

fn submit(engine: &mut Engine, worker: &str, hit: &HitPayload, boxes: Vec<BoundingBox>) -> SubmitOutcome {
    engine
        .submit(worker, &hit.hit_id, Submission { boxes, elapsed: 10.0, contribution: None })
        .unwrap()
}

fn dynamic_tiered() -> ConditionSpec {
    let mut spec = ConditionSpec::new("dyn", PaymentPolicy::baseline_binned(), 5);
    spec.schedule = Some(SchedulePolicy::dynamic(50.0, 1));
    spec.consequence = ConsequencePolicy {
        mode: ConsequenceMode::Tiered,
        ..Default::default()
    };
    spec
}

#[test]
fn next_hit_is_idempotent() {
    let spec = ConditionSpec::new("base", PaymentPolicy::baseline_binned(), 3);
    let mut e = Engine::in_memory(spec, corpus()).unwrap();
    let a = assigned(e.next_hit("w1").unwrap());
    let b = assigned(e.next_hit("w1").unwrap());
    assert_eq!(a, b);
    assert_eq!(e.state().next_seq, 1);
}

#[test]
fn upfront_first_hit_is_gold_but_hidden() {
    let mut spec = ConditionSpec::new("up", PaymentPolicy::baseline_binned(), 5);
    spec.schedule = Some(SchedulePolicy::upfront(5, 0));
    let mut e = Engine::in_memory(spec, corpus()).unwrap();
    let hit = assigned(e.next_hit("w").unwrap());
    assert!(e.worker("w").unwrap().assigned.as_ref().unwrap().gold);
    let json = serde_json::to_string(&hit).unwrap();
    assert!(!json.contains("gold"));
    let gt = gt_of(&e, &hit);
    let out = submit(&mut e, "w", &hit, gt);
    let fb = out.feedback.unwrap();
    assert_eq!(fb.missed, 0);
    assert_eq!(fb.average, 100.0);
}

#[test]
fn standard_submission_discloses_no_accuracy() {
    let spec = ConditionSpec::new("base", PaymentPolicy::baseline_binned(), 3);
    let mut e = Engine::in_memory(spec, corpus()).unwrap();
    let hit = assigned(e.next_hit("w").unwrap());
    let out = submit(&mut e, "w", &hit, Vec::new());
    assert!(out.feedback.is_none());
    let json = serde_json::to_string(&out).unwrap();
    assert!(!json.contains("miou") && !json.contains("average") && !json.contains("per_box"));
}

#[test]
fn dynamic_failure_forces_gold_and_blocks() {
    let mut e = Engine::in_memory(dynamic_tiered(), corpus()).unwrap();
    for strike in 1..=3 {
        let hit = assigned(e.next_hit("w").unwrap());
        assert!(e.worker("w").unwrap().assigned.as_ref().unwrap().gold, "strike {strike}");
        let out = submit(&mut e, "w", &hit, Vec::new());
        assert!(out.feedback.is_some());
        assert_eq!(out.blocked, strike == 3);
    }
    assert_eq!(e.next_hit("w").unwrap(), NextHit::Blocked { reason: BLOCK_REASON.into() });
    assert!(e.status("w").unwrap().blocked);
}

#[test]
fn stale_and_unknown_rejected() {
    let mut spec = ConditionSpec::new("base", PaymentPolicy::baseline_binned(), 3);
    spec.open_enrollment = false;
    spec.roster = vec!["w".into()];
    let mut e = Engine::in_memory(spec, corpus()).unwrap();
    assert!(matches!(e.next_hit("x"), Err(EngineError::UnknownWorker(_))));
    assert!(matches!(e.status("x"), Err(EngineError::UnknownWorker(_))));
    let hit = assigned(e.next_hit("w").unwrap());
    let bad = e.submit("w", "h999999", Submission::default());
    assert!(matches!(bad, Err(EngineError::StaleHit { .. })));
    submit(&mut e, "w", &hit, Vec::new());
    let again = e.submit("w", &hit.hit_id, Submission::default());
    assert!(matches!(again, Err(EngineError::StaleHit { .. })));
}

#[test]
fn quota_is_respected() {
    let spec = ConditionSpec::new("base", PaymentPolicy::baseline_binned(), 2);
    let mut e = Engine::in_memory(spec, small_corpus()).unwrap();
    let mut served = 0;
    for w in 0..10 {
        let id = format!("w{w}");
        while let NextHit::Assigned { hit } = e.next_hit(&id).unwrap() {
            submit(&mut e, &id, &hit, Vec::new());
            served += 1;
        }
    }
    assert_eq!(served, 3 * 2);
    assert!(e.quota_met());
    assert_eq!(e.scene_responses().len(), 6);
}

#[test]
fn abandon_releases_hit() {
    let spec = ConditionSpec::new("base", PaymentPolicy::baseline_binned(), 1);
    let mut e = Engine::in_memory(spec, small_corpus()).unwrap();
    let _ = assigned(e.next_hit("a").unwrap());
    e.abandon("a").unwrap();
    assert!(matches!(e.next_hit("a"), Err(EngineError::Departed(_))));
    let mut n = 0;
    while let NextHit::Assigned { hit } = e.next_hit("b").unwrap() {
        submit(&mut e, "b", &hit, Vec::new());
        n += 1;
    }
    assert_eq!(n, 3);
}

#[test]
fn replay_matches_live() {
    let sink = MemorySink::new();
    let spec = dynamic_tiered();
    let mut e = Engine::new(spec.clone(), corpus(), Box::new(ManualClock::new(0)), Box::new(sink.clone())).unwrap();
    for round in 0..30 {
        for w in ["a", "b", "c"] {
            if let Ok(NextHit::Assigned { hit }) = e.next_hit(w) {
                let gt = gt_of(&e, &hit);
                let boxes = if (round + w.len()) % 3 == 0 { Vec::new() } else { gt };
                submit(&mut e, w, &hit, boxes);
            }
        }
    }
    let rebuilt = Engine::replay(spec, corpus(), &sink.events()).unwrap();
    assert_eq!(rebuilt.state(), e.state());
}

#[test]
fn decomposition_reassembles_whole_scenes() {
    let mut spec = ConditionSpec::new("decomp", PaymentPolicy::flat_subtask(), 1);
    spec.workflow = WorkflowSpec::Decomposition {
        source: MarkerSource::Oracle,
        noise: Default::default(),
    };
    let mut e = Engine::in_memory(spec, small_corpus()).unwrap();
    assert_eq!(e.catalog().len(), 4);
    for w in 0..4 {
        let id = format!("w{w}");
        while let NextHit::Assigned { hit } = e.next_hit(&id).unwrap() {
            assert_eq!(hit.advertised, Cents(8));
            let scene = e.corpus().scene(&hit.scene.scene_id).unwrap().clone();
            let marks = hit.markers.clone().unwrap();
            let boxes = marks
                .iter()
                .map(|m| *scene.gt_boxes.iter().find(|b| b.center() == (m.x, m.y)).unwrap())
                .collect();
            submit(&mut e, &id, &hit, boxes);
        }
    }
    let responses = e.scene_responses();
    assert_eq!(responses.len(), 3);
    for r in responses {
        let scene = &e.corpus().scenes()[r.scene_idx];
        assert_eq!(crate::scoring::score(scene, &r.annotation).unwrap().miou, 100.0);
    }
}

#[test]
fn iterative_chain_completes() {
    let mut spec = ConditionSpec::new("iter", PaymentPolicy::flat_subtask(), 1);
    spec.workflow = WorkflowSpec::Iterative { max_iterations: 8 };
    let hist = [(5usize, 1usize)].into_iter().collect();
    let c = Arc::new(generate_corpus(9, &hist, &SizeModel::default()).unwrap());
    let mut e = Engine::in_memory(spec, c).unwrap();
    let gt = e.corpus().scenes()[0].gt_boxes.clone();
    let hit = assigned(e.next_hit("a").unwrap());
    submit(&mut e, "a", &hit, gt[..3].to_vec());
    let hit = assigned(e.next_hit("b").unwrap());
    assert_eq!(hit.prior_boxes.as_ref().unwrap().len(), 3);
    let too_many = e.submit("b", &hit.hit_id, Submission { boxes: gt[..4].to_vec(), elapsed: 1.0, contribution: None });
    assert!(matches!(too_many, Err(EngineError::InvalidSubmission(_))));
    submit(&mut e, "b", &hit, gt[3..].to_vec());
    let hit = assigned(e.next_hit("c").unwrap());
    e.submit("c", &hit.hit_id, Submission { boxes: vec![], elapsed: 1.0, contribution: Some(Contribution::Complete) })
        .unwrap();
    assert!(e.quota_met());
    let r = e.scene_responses();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].contributors, vec!["a", "b", "c"]);
    assert_eq!(crate::scoring::score(&e.corpus().scenes()[0], &r[0].annotation).unwrap().miou, 100.0);
}

#[test]
fn high_pay_first_orders_by_price() {
    let mut spec = ConditionSpec::new("var", PaymentPolicy::variable_pay(), 3);
    spec.task_selection = TaskSelection::HighPayFirst;
    let e = Engine::in_memory(spec, corpus()).unwrap();
    let order = e.preference_order("w");
    let prices: Vec<Cents> = order.iter().map(|&i| e.catalog()[i].price).collect();
    assert!(prices.windows(2).all(|p| p[0] >= p[1]));
}

#[test]
fn post_task_bonus_stays_pending() {
    let spec = ConditionSpec::new("ptb", PaymentPolicy::post_task_bonus(), 3);
    let mut e = Engine::in_memory(spec, corpus()).unwrap();
    let hit = assigned(e.next_hit("w").unwrap());
    let gt = gt_of(&e, &hit);
    let n = gt.len() as i64;
    let out = submit(&mut e, "w", &hit, gt);
    assert!(out.payout.bonus_pending);
    assert_eq!(out.payout.bonus_paid, None);
    assert_eq!(e.status("w").unwrap().earned, Cents(4 * n).max(Cents(4)));
}

#[test]
fn config_validation() {
    let mut spec = ConditionSpec::new("bad", PaymentPolicy::baseline_binned(), 0);
    assert!(spec.validate().is_err());
    spec.responses_per_scene = 3;
    spec.consequence.mode = ConsequenceMode::Tiered;
    assert!(spec.validate().is_err());
    spec.schedule = Some(SchedulePolicy::dynamic(40.0, 0));
    assert!(spec.validate().is_err());
    spec.schedule = Some(SchedulePolicy::dynamic(50.0, 0));
    assert!(spec.validate().is_ok());
}
