use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use vgold_core::dataset::{AnnotationSet, BoundingBox, Scene};
use vgold_core::scoring::{score, score_boxes};
use vgold_core::seed;
use vgold_core::workflow::{
    decompose, iterate, reassemble, Contribution, IterationState, MarkerNoise, MarkerSource, Part, MAX_TARGETS,
};

fn row_scene(n: usize) -> Scene {
    let boxes = (0..n)
        .map(|i| BoundingBox::new(5.0 + 70.0 * (i % 14) as f64, 10.0 + 90.0 * (i / 14) as f64 + i as f64, 50.0, 60.0).unwrap())
        .collect();
    Scene::new("s", 1024, 768, boxes).unwrap()
}

#[test]
fn manual_marker_count_replays_the_seeded_draw() {
    let scene = row_scene(10);
    let noise = MarkerNoise { sigma_frac: 0.03, miss_prob: 0.1 };
    let parts = decompose(&scene, MarkerSource::Manual, &noise, &mut seed::rng(77));
    let realized: usize = parts.iter().map(|p| p.markers.len()).sum();

    // Independent replay of the documented stream: one Bernoulli miss draw
    // and two jitter draws per ground-truth box, in box order.
    let mut rng = seed::rng(77);
    let jitter = Normal::new(0.0, 0.03 * scene.diagonal()).unwrap();
    let mut kept = 0;
    for _ in 0..10 {
        let missed = rng.random_bool(0.1);
        let _ = (jitter.sample(&mut rng), jitter.sample(&mut rng));
        kept += usize::from(!missed);
    }
    assert_eq!(realized, kept);

    // Mean over many seeds is close to 9 markers.
    let total: usize = (0..2000)
        .map(|s| decompose(&scene, MarkerSource::Manual, &noise, &mut seed::rng(s)).iter().map(|p| p.markers.len()).sum::<usize>())
        .sum();
    let mean = total as f64 / 2000.0;
    assert!((mean - 9.0).abs() < 0.1, "mean {mean}");
}

#[test]
fn missed_marker_becomes_false_negative() {
    let scene = row_scene(4);
    let noise = MarkerNoise { sigma_frac: 0.0, miss_prob: 0.5 };
    let (parts, s) = (0..100)
        .map(|s| (decompose(&scene, MarkerSource::Manual, &noise, &mut seed::rng(s)), s))
        .find(|(p, _)| p.iter().map(|t| t.markers.len()).sum::<usize>() == 3)
        .unwrap();
    let _ = s;
    let annotations: Vec<Part> = parts
        .iter()
        .map(|t| {
            let boxes = t
                .markers
                .iter()
                .map(|m| *scene.gt_boxes.iter().find(|b| b.center() == (m.x, m.y)).unwrap())
                .collect();
            Part::Annotation(AnnotationSet { scene_id: "s".into(), worker_id: "w".into(), boxes, elapsed: 1.0 })
        })
        .collect();
    let merged = reassemble(&scene, &annotations).unwrap();
    let r = score(&scene, &merged.annotation).unwrap();
    assert_eq!(r.fn_count, 1);
    assert_eq!(r.miou, 75.0);
}

#[test]
fn premature_completion_leaves_misses() {
    let scene = row_scene(9);
    let gt = &scene.gt_boxes;
    let mut st = IterationState::new("s");
    st = iterate(&st, "a", &Contribution::AddBoxes { boxes: gt[0..3].to_vec() }).unwrap();
    // Slightly off box: IoU 50*54 / (50*60) = 0.9.
    let shifted = BoundingBox::new(gt[3].x, gt[3].y, 50.0, 54.0).unwrap();
    st = iterate(&st, "b", &Contribution::AddBoxes { boxes: vec![shifted, gt[4]] }).unwrap();
    st = iterate(&st, "c", &Contribution::Complete).unwrap();
    assert!(st.completed);
    assert_eq!(st.iteration_index, 3);
    let merged = reassemble(&scene, &[Part::Iteration(st)]).unwrap();
    let r = score(&scene, &merged.annotation).unwrap();
    assert_eq!(r.fn_count, 4);
    assert_eq!(r.recall_at(0.5), 5.0 / 9.0);
    assert_eq!(r.recall_at(0.95), 4.0 / 9.0);
}

proptest! {
    #[test]
    fn oracle_markers_cover_each_box_once(n in 1usize..=28, s in any::<u64>()) {
        let scene = row_scene(n);
        let parts = decompose(&scene, MarkerSource::Oracle, &MarkerNoise::default(), &mut seed::rng(s));
        prop_assert_eq!(parts.len(), n.div_ceil(3));
        prop_assert!(parts.iter().all(|p| (1..=MAX_TARGETS).contains(&p.markers.len())));
        let mut centres: Vec<(f64, f64)> = parts.iter().flat_map(|p| p.markers.iter().map(|m| (m.x, m.y))).collect();
        let mut expected: Vec<(f64, f64)> = scene.gt_boxes.iter().map(|b| b.center()).collect();
        centres.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(centres, expected);
    }

    #[test]
    fn manual_markers_stay_in_extent(n in 1usize..=14, s in any::<u64>()) {
        let scene = row_scene(n);
        let noise = MarkerNoise { sigma_frac: 0.5, miss_prob: 0.2 };
        for p in decompose(&scene, MarkerSource::Manual, &noise, &mut seed::rng(s)) {
            for m in p.markers {
                prop_assert!((0.0..=1024.0).contains(&m.x) && (0.0..=768.0).contains(&m.y));
            }
        }
    }

    #[test]
    fn iterate_is_append_only_except_adjust(ops in prop::collection::vec((0u8..3, 0usize..4, 0usize..10), 1..20)) {
        let mut st = IterationState::new("s");
        for (k, (op, n, idx)) in ops.into_iter().enumerate() {
            let before = st.clone();
            let c = match op {
                0 => Contribution::AddBoxes {
                    boxes: (0..n.min(3)).map(|i| BoundingBox::new(i as f64, k as f64, 3.0, 3.0).unwrap()).collect(),
                },
                1 => Contribution::Adjust { index: idx, bbox: BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap() },
                _ => Contribution::Complete,
            };
            let Ok(next) = iterate(&st, "w", &c) else { continue };
            prop_assert_eq!(next.iteration_index, before.iteration_index + 1);
            match c {
                Contribution::AddBoxes { boxes } => {
                    prop_assert_eq!(&next.boxes[..before.boxes.len()], &before.boxes[..]);
                    prop_assert_eq!(next.boxes.len(), before.boxes.len() + boxes.len());
                }
                Contribution::Adjust { index, .. } => {
                    prop_assert_eq!(next.boxes.len(), before.boxes.len());
                    for i in (0..before.boxes.len()).filter(|&i| i != index) {
                        prop_assert_eq!(&next.boxes[i], &before.boxes[i]);
                    }
                }
                Contribution::Complete => {
                    prop_assert!(next.completed);
                    prop_assert!(iterate(&next, "w", &Contribution::Complete).is_err());
                }
            }
            st = next;
            if st.completed {
                break;
            }
        }
    }

    #[test]
    fn reassembly_equals_direct_scoring(n in 1usize..=14, cut in 1usize..5, jitter in 0.0..5.0f64) {
        let scene = row_scene(n);
        let worker: Vec<BoundingBox> = scene
            .gt_boxes
            .iter()
            .map(|b| BoundingBox::new(b.x + jitter, b.y, b.w, b.h).unwrap())
            .collect();
        let parts: Vec<Part> = worker
            .chunks(cut)
            .map(|c| Part::Annotation(AnnotationSet { scene_id: "s".into(), worker_id: "w".into(), boxes: c.to_vec(), elapsed: 1.0 }))
            .collect();
        let merged = reassemble(&scene, &parts).unwrap();
        prop_assert_eq!(score(&scene, &merged.annotation).unwrap(), score_boxes(&scene.gt_boxes, &worker));
    }
}
