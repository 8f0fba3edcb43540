use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgold_core::scheduler::{
    is_gold_ordinal, issue, next_hit_kind, record_gold_outcome, GoldVerdict, HitKind, SchedulePolicy, ScheduleState,
};

const FIB: [u32; 8] = [1, 2, 3, 5, 8, 13, 21, 34];

fn gold_ordinals(policy: &SchedulePolicy, worker: &str, upto: u32) -> Vec<u32> {
    (1..=upto).filter(|&o| is_gold_ordinal(policy, worker, o)).collect()
}

#[test]
fn fib_prefix_for_every_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let p = SchedulePolicy::fib_regular(rng.random());
        let w = format!("w{}", rng.random::<u16>());
        assert_eq!(gold_ordinals(&p, &w, 50), FIB);
    }
}

#[test]
fn fib_regular_hundred_hits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = [false; 2];
    for _ in 0..2000 {
        let p = SchedulePolicy::fib_regular(rng.random());
        let n = gold_ordinals(&p, "w", 100).len();
        assert!(n == 10 || n == 11, "{n} golds");
        seen[n - 10] = true;
        // One gold in each full tail block [51, 70] and [71, 90].
        for (lo, hi) in [(51, 70), (71, 90)] {
            assert_eq!((lo..=hi).filter(|&o| is_gold_ordinal(&p, "w", o)).count(), 1);
        }
        assert!((35..=50).all(|o| !is_gold_ordinal(&p, "w", o)));
    }
    assert_eq!(seen, [true, true]);
}

#[test]
fn regular_one_gold_per_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let p = SchedulePolicy::regular(5, rng.random());
        let m: u32 = rng.random_range(1..40);
        let golds = gold_ordinals(&p, "w", 5 * m);
        assert_eq!(golds.len() as u32, m);
        for b in 0..m {
            assert_eq!(golds.iter().filter(|&&o| (o - 1) / 5 == b).count(), 1);
        }
    }
    let p = SchedulePolicy::regular(5, 9);
    assert_eq!(gold_ordinals(&p, "w", 20).len(), 4);
}

#[test]
fn upfront_k() {
    let p = SchedulePolicy::upfront(5, 0);
    assert_eq!(gold_ordinals(&p, "w", 100), vec![1, 2, 3, 4, 5]);
    assert!(gold_ordinals(&SchedulePolicy::upfront(0, 0), "w", 100).is_empty());
}

/// Replays a random outcome history against an explicit reference model.
fn check_history(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_min = 50.0;
    let policy = SchedulePolicy::dynamic(t_min, rng.random());
    let worker = format!("w{seed}");
    let mut state = ScheduleState::new(worker.clone());
    let skill: f64 = rng.random_range(10.0..90.0);
    let mut scores: Vec<f64> = Vec::new();
    let mut run = 0u32;
    let mut expect_gold_next = false;
    for _ in 0..rng.random_range(1..200) {
        let ordinal = state.hit_ordinal;
        let base = FIB.contains(&ordinal) || (ordinal > 50 && is_gold_ordinal(&policy, &worker, ordinal));
        let kind = issue(&policy, &mut state);
        if expect_gold_next {
            assert_eq!(kind, HitKind::Gold, "seed {seed}: override missing");
        } else {
            assert_eq!(kind == HitKind::Gold, base, "seed {seed}: base pattern");
        }
        if kind == HitKind::Standard {
            continue;
        }
        let score = (skill + rng.random_range(-40.0..40.0)).clamp(0.0, 100.0);
        scores.push(score);
        let avg = scores.iter().sum::<f64>() / scores.len() as f64;
        let verdict = record_gold_outcome(&policy, &mut state, score, avg).unwrap();
        if score >= t_min {
            run = 0;
            expect_gold_next = false;
        } else {
            run += 1;
            expect_gold_next = true;
        }
        assert_eq!(state.consecutive_gold_failures, run);
        let should_block = run >= 3 && avg < t_min;
        assert_eq!(verdict == GoldVerdict::Block, should_block, "seed {seed}: run {run}, avg {avg}");
        if run < 3 {
            assert_eq!(verdict, GoldVerdict::Continue);
        }
        if verdict == GoldVerdict::Block {
            return;
        }
    }
}

#[test]
fn dynamic_over_ten_thousand_histories() {
    for seed in 0..10_000 {
        check_history(seed);
    }
}

#[test]
fn three_strikes_example() {
    let p = SchedulePolicy::dynamic(50.0, 0);
    let mut s = ScheduleState::new("w");
    let mut verdicts = Vec::new();
    let mut scores = Vec::new();
    for score in [30.0, 35.0, 20.0] {
        while issue(&p, &mut s) != HitKind::Gold {}
        scores.push(score);
        let avg: f64 = scores.iter().sum::<f64>() / scores.len() as f64;
        verdicts.push(record_gold_outcome(&p, &mut s, score, avg).unwrap());
        if score < 50.0 {
            assert_eq!(next_hit_kind(&p, &s), HitKind::Gold);
        }
    }
    assert_eq!(verdicts, vec![GoldVerdict::Continue, GoldVerdict::Continue, GoldVerdict::Block]);
}

#[test]
fn non_consecutive_failures_never_block() {
    let p = SchedulePolicy::dynamic(50.0, 0);
    let mut s = ScheduleState::new("w");
    for score in [40.0, 42.0, 80.0, 10.0, 10.0] {
        while issue(&p, &mut s) != HitKind::Gold {}
        let v = record_gold_outcome(&p, &mut s, score, 30.0).unwrap();
        assert_eq!(v, GoldVerdict::Continue);
    }
    assert_eq!(s.consecutive_gold_failures, 2);
}

proptest! {
    #[test]
    fn schedules_are_deterministic(seed in any::<u64>(), outcomes in prop::collection::vec(0.0..100.0f64, 0..60)) {
        let run = || {
            let p = SchedulePolicy::dynamic(50.0, seed);
            let mut s = ScheduleState::new("w");
            let mut kinds = Vec::new();
            let mut it = outcomes.iter();
            for _ in 0..120 {
                let k = issue(&p, &mut s);
                kinds.push(k);
                if k == HitKind::Gold {
                    let Some(&o) = it.next() else { break };
                    if record_gold_outcome(&p, &mut s, o, 60.0).unwrap() == GoldVerdict::Block {
                        break;
                    }
                }
            }
            kinds
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn regular_density(seed in any::<u64>(), block in 2u32..12, m in 1u32..20) {
        let p = SchedulePolicy::regular(block, seed);
        prop_assert_eq!(gold_ordinals(&p, "w", block * m).len() as u32, m);
    }
}
