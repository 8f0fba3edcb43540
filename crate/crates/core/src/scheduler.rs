//! Per-worker visible-gold issuance.
//!
//! Every policy is a deterministic function of the policy seed, the worker id
//! and the worker's outcome history. In-block gold positions are drawn from a
//! stream keyed by `(seed, worker_id, phase, block index)`, so they cannot be
//! anticipated from the ordinal alone and replay identically.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule policy: {0}")]
    InvalidPolicy(String),
    #[error("gold outcome recorded for worker {0:?} but the last HIT issued was not gold")]
    NotGold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibRegular {
    pub fib_cutoff: u32,
    pub tail_block: u32,
}

impl Default for FibRegular {
    fn default() -> Self {
        Self {
            fib_cutoff: 50,
            tail_block: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Gold for the first `k` HITs.
    Upfront { k: u32 },
    /// One gold per consecutive block of `block` HITs.
    Regular { block: u32 },
    /// Gold at Fibonacci ordinals up to the cutoff, then one per tail block.
    FibRegular(FibRegular),
    /// Fib+Regular, plus an immediate extra gold after every failed gold.
    Dynamic { base: FibRegular, t_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SchedulePolicy {
    pub fn upfront(k: u32, rng_seed: u64) -> Self {
        Self { kind: PolicyKind::Upfront { k }, rng_seed }
    }

    pub fn regular(block: u32, rng_seed: u64) -> Self {
        Self { kind: PolicyKind::Regular { block }, rng_seed }
    }

    pub fn fib_regular(rng_seed: u64) -> Self {
        Self { kind: PolicyKind::FibRegular(FibRegular::default()), rng_seed }
    }

    pub fn dynamic(t_min: f64, rng_seed: u64) -> Self {
        Self {
            kind: PolicyKind::Dynamic { base: FibRegular::default(), t_min },
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidPolicy(m.into()));
        let fib_ok = |f: &FibRegular| f.fib_cutoff >= 1 && f.tail_block >= 2;
        match &self.kind {
            PolicyKind::Upfront { .. } => Ok(()),
            PolicyKind::Regular { block } if *block < 2 => bad("block must be at least 2"),
            PolicyKind::Regular { .. } => Ok(()),
            PolicyKind::FibRegular(f) if !fib_ok(f) => bad("fib_cutoff >= 1 and tail_block >= 2 required"),
            PolicyKind::FibRegular(_) => Ok(()),
            PolicyKind::Dynamic { base, .. } if !fib_ok(base) => bad("fib_cutoff >= 1 and tail_block >= 2 required"),
            PolicyKind::Dynamic { t_min, .. } if !(0.0..=100.0).contains(t_min) => bad("t_min must lie in [0, 100]"),
            PolicyKind::Dynamic { .. } => Ok(()),
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self.kind, PolicyKind::Dynamic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Gold,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldVerdict {
    Continue,
    Block,
}

/// Number of consecutive failed golds that arms the blocking condition.
pub const STRIKES_TO_BLOCK: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub worker_id: String,
    /// 1-based ordinal of the next HIT to issue.
    pub hit_ordinal: u32,
    pub override_active: bool,
    pub consecutive_gold_failures: u32,
    pub golds_issued: u32,
    pub last_issued: Option<HitKind>,
}

impl ScheduleState {
    pub fn new(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            hit_ordinal: 1,
            override_active: false,
            consecutive_gold_failures: 0,
            golds_issued: 0,
            last_issued: None,
        }
    }
}

/// Fibonacci ordinals not exceeding `cutoff`, with the repeated 1 removed.
pub fn fibonacci_ordinals(cutoff: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let (mut a, mut b) = (1u32, 2u32);
    while a <= cutoff {
        out.push(a);
        let next = a.saturating_add(b);
        a = b;
        b = next;
    }
    out
}

fn block_offset(policy_seed: u64, worker_id: &str, phase: &str, block: u32, len: u32) -> u32 {
    let s = seed::derive_index(seed::derive(seed::derive(policy_seed, worker_id), phase), u64::from(block));
    seed::rng(s).random_range(0..len)
}

/// Whether `ordinal` falls on the gold slot of its block. `start` is the first
/// ordinal of block 0.
fn regular_gold(policy_seed: u64, worker_id: &str, phase: &str, ordinal: u32, start: u32, len: u32) -> bool {
    let rel = ordinal - start;
    rel % len == block_offset(policy_seed, worker_id, phase, rel / len, len)
}

fn fib_regular_gold(f: &FibRegular, policy_seed: u64, worker_id: &str, ordinal: u32) -> bool {
    if ordinal <= f.fib_cutoff {
        fibonacci_ordinals(f.fib_cutoff).contains(&ordinal)
    } else {
        regular_gold(policy_seed, worker_id, "fib-tail", ordinal, f.fib_cutoff + 1, f.tail_block)
    }
}

/// Base pattern only: whether `ordinal` is a gold slot for this worker.
pub fn is_gold_ordinal(policy: &SchedulePolicy, worker_id: &str, ordinal: u32) -> bool {
    debug_assert!(ordinal >= 1);
    match &policy.kind {
        PolicyKind::Upfront { k } => ordinal <= *k,
        PolicyKind::Regular { block } => regular_gold(policy.rng_seed, worker_id, "regular", ordinal, 1, *block),
        PolicyKind::FibRegular(f) | PolicyKind::Dynamic { base: f, .. } => {
            fib_regular_gold(f, policy.rng_seed, worker_id, ordinal)
        }
    }
}

pub fn next_hit_kind(policy: &SchedulePolicy, state: &ScheduleState) -> HitKind {
    if state.override_active && policy.is_dynamic() {
        return HitKind::Gold;
    }
    if is_gold_ordinal(policy, &state.worker_id, state.hit_ordinal) {
        HitKind::Gold
    } else {
        HitKind::Standard
    }
}

/// Records that a HIT of `kind` was issued and advances the ordinal.
pub fn record_issue(state: &mut ScheduleState, kind: HitKind) {
    state.hit_ordinal += 1;
    if kind == HitKind::Gold {
        state.golds_issued += 1;
    }
    state.last_issued = Some(kind);
}

/// Decides the next HIT's kind and records its issue.
pub fn issue(policy: &SchedulePolicy, state: &mut ScheduleState) -> HitKind {
    let kind = next_hit_kind(policy, state);
    record_issue(state, kind);
    kind
}

/// Applies the result of the gold just completed. `running_avg` is the
/// worker's average gold accuracy including this gold.
///
/// Only Dynamic policies track failures and can block; the other policies
/// carry warnings through the consequence ledger instead.
pub fn record_gold_outcome(
    policy: &SchedulePolicy,
    state: &mut ScheduleState,
    image_miou: f64,
    running_avg: f64,
) -> Result<GoldVerdict, ScheduleError> {
    if state.last_issued != Some(HitKind::Gold) {
        return Err(ScheduleError::NotGold(state.worker_id.clone()));
    }
    state.last_issued = None;
    let PolicyKind::Dynamic { t_min, .. } = policy.kind else {
        return Ok(GoldVerdict::Continue);
    };
    if image_miou >= t_min {
        state.consecutive_gold_failures = 0;
        state.override_active = false;
        return Ok(GoldVerdict::Continue);
    }
    state.consecutive_gold_failures += 1;
    state.override_active = true;
    if state.consecutive_gold_failures >= STRIKES_TO_BLOCK && running_avg < t_min {
        Ok(GoldVerdict::Block)
    } else {
        Ok(GoldVerdict::Continue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golds(policy: &SchedulePolicy, worker: &str, upto: u32) -> Vec<u32> {
        (1..=upto).filter(|&o| is_gold_ordinal(policy, worker, o)).collect()
    }

    #[test]
    fn fibonacci_prefix() {
        assert_eq!(fibonacci_ordinals(50), vec![1, 2, 3, 5, 8, 13, 21, 34]);
        assert_eq!(fibonacci_ordinals(1), vec![1]);
        for seed in 0..50 {
            let p = SchedulePolicy::fib_regular(seed);
            assert_eq!(golds(&p, "w", 50), vec![1, 2, 3, 5, 8, 13, 21, 34]);
        }
    }

    #[test]
    fn fib_regular_over_100_hits() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let n = golds(&SchedulePolicy::fib_regular(seed), "w", 100).len();
            assert!(n == 10 || n == 11, "{n}");
            seen.insert(n);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn regular_one_per_block() {
        for seed in 0..50 {
            let p = SchedulePolicy::regular(5, seed);
            let g = golds(&p, "worker-3", 20);
            assert_eq!(g.len(), 4);
            for (b, o) in g.iter().enumerate() {
                assert_eq!((o - 1) / 5, b as u32);
            }
        }
    }

    #[test]
    fn upfront_prefix() {
        let p = SchedulePolicy::upfront(5, 0);
        assert_eq!(golds(&p, "w", 30), vec![1, 2, 3, 4, 5]);
        assert!(golds(&SchedulePolicy::upfront(0, 0), "w", 10).is_empty());
    }

    #[test]
    fn dynamic_failure_forces_gold() {
        let p = SchedulePolicy::dynamic(50.0, 3);
        let mut s = ScheduleState::new("w");
        assert_eq!(issue(&p, &mut s), HitKind::Gold);
        assert_eq!(record_gold_outcome(&p, &mut s, 45.0, 45.0), Ok(GoldVerdict::Continue));
        assert!(s.override_active);
        assert_eq!(next_hit_kind(&p, &s), HitKind::Gold);
    }

    #[test]
    fn dynamic_blocks_on_third_strike() {
        let p = SchedulePolicy::dynamic(50.0, 3);
        let mut s = ScheduleState::new("w");
        let scores = [30.0, 35.0, 20.0];
        let mut verdicts = Vec::new();
        let mut sum = 0.0;
        for (i, sc) in scores.iter().enumerate() {
            assert_eq!(issue(&p, &mut s), HitKind::Gold);
            sum += sc;
            verdicts.push(record_gold_outcome(&p, &mut s, *sc, sum / (i + 1) as f64).unwrap());
        }
        assert_eq!(verdicts, vec![GoldVerdict::Continue, GoldVerdict::Continue, GoldVerdict::Block]);
    }

    #[test]
    fn pass_resets_failures() {
        let p = SchedulePolicy::dynamic(50.0, 3);
        let mut s = ScheduleState::new("w");
        for (sc, avg) in [(40.0, 40.0), (42.0, 41.0), (80.0, 54.0)] {
            issue(&p, &mut s);
            s.last_issued = Some(HitKind::Gold);
            assert_eq!(record_gold_outcome(&p, &mut s, sc, avg), Ok(GoldVerdict::Continue));
        }
        assert_eq!(s.consecutive_gold_failures, 0);
        assert!(!s.override_active);
    }

    #[test]
    fn standard_hit_outcome_is_rejected() {
        let p = SchedulePolicy::regular(5, 0);
        let mut s = ScheduleState::new("w");
        s.last_issued = Some(HitKind::Standard);
        assert!(matches!(record_gold_outcome(&p, &mut s, 10.0, 10.0), Err(ScheduleError::NotGold(_))));
    }

    #[test]
    fn non_dynamic_never_blocks() {
        let p = SchedulePolicy::fib_regular(1);
        let mut s = ScheduleState::new("w");
        for _ in 0..5 {
            s.last_issued = Some(HitKind::Gold);
            assert_eq!(record_gold_outcome(&p, &mut s, 0.0, 0.0), Ok(GoldVerdict::Continue));
        }
        assert!(!s.override_active);
    }

    #[test]
    fn validation() {
        assert!(SchedulePolicy::regular(1, 0).validate().is_err());
        assert!(SchedulePolicy::dynamic(120.0, 0).validate().is_err());
        assert!(SchedulePolicy::dynamic(50.0, 0).validate().is_ok());
    }

    #[test]
    fn policy_json_shape() {
        let p: SchedulePolicy = serde_json::from_str(r#"{"kind":"regular","block":5,"rng_seed":9}"#).unwrap();
        assert_eq!(p, SchedulePolicy::regular(5, 9));
        let d: SchedulePolicy =
            serde_json::from_str(r#"{"kind":"dynamic","base":{"fib_cutoff":50,"tail_block":20},"t_min":50}"#).unwrap();
        assert!(d.is_dynamic());
    }
}
