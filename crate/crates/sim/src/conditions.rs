//! Named condition presets for the two experiment rounds.

use vgold_core::ledger::{ConsequenceMode, ConsequencePolicy};
use vgold_core::payment::PaymentPolicy;
use vgold_core::scheduler::SchedulePolicy;
use vgold_core::session::{ConditionSpec, TaskSelection, WorkflowSpec};
use vgold_core::workflow::{MarkerNoise, MarkerSource};

pub const BASELINE: &str = "baseline";
pub const VARIABLE_PAY: &str = "variable_pay";
pub const POST_TASK_BONUS: &str = "post_task_bonus";
pub const DECOMPOSITION_ORACLE: &str = "decomposition_oracle";
pub const DECOMPOSITION_MANUAL: &str = "decomposition_manual";
pub const ITERATIVE: &str = "iterative";
pub const GOLD_UPFRONT: &str = "gold_upfront";
pub const GOLD_REGULAR: &str = "gold_regular";
pub const GOLD_FIB_REGULAR: &str = "gold_fib_regular";
pub const GOLD_REGULAR_BONUS: &str = "gold_regular_bonus";
pub const GOLD_IMPROVED: &str = "gold_improved";

/// Responses per scene in the first round.
pub const ROUND_ONE_RESPONSES: usize = 3;
/// Responses per scene for visible-gold conditions.
pub const GOLD_RESPONSES: usize = 5;
/// Golds issued by the upfront pattern.
pub const UPFRONT_GOLDS: u32 = 5;
/// Regular pattern: one gold per block of this many HITs.
pub const REGULAR_BLOCK: u32 = 5;

fn gold(name: &str, schedule: SchedulePolicy, mode: ConsequenceMode, payment: PaymentPolicy) -> ConditionSpec {
    let mut c = ConditionSpec::new(name, payment, GOLD_RESPONSES);
    c.schedule = Some(schedule);
    c.consequence = ConsequencePolicy {
        mode,
        ..ConsequencePolicy::default()
    };
    c
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Option<ConditionSpec> {
    let binned = PaymentPolicy::baseline_binned;
    let r1 = ROUND_ONE_RESPONSES;
    let spec = match name {
        BASELINE => ConditionSpec::new(name, binned(), r1),
        VARIABLE_PAY => {
            let mut c = ConditionSpec::new(name, PaymentPolicy::variable_pay(), r1);
            c.task_selection = TaskSelection::HighPayFirst;
            c
        }
        POST_TASK_BONUS => ConditionSpec::new(name, PaymentPolicy::post_task_bonus(), r1),
        DECOMPOSITION_ORACLE | DECOMPOSITION_MANUAL => {
            let mut c = ConditionSpec::new(name, PaymentPolicy::flat_subtask(), r1);
            let source = if name == DECOMPOSITION_ORACLE {
                MarkerSource::Oracle
            } else {
                MarkerSource::Manual
            };
            c.workflow = WorkflowSpec::Decomposition {
                source,
                noise: MarkerNoise::default(),
            };
            c
        }
        ITERATIVE => {
            let mut c = ConditionSpec::new(name, PaymentPolicy::flat_subtask(), r1);
            c.workflow = WorkflowSpec::Iterative { max_iterations: 8 };
            c
        }
        GOLD_UPFRONT => gold(name, SchedulePolicy::upfront(UPFRONT_GOLDS, 0), ConsequenceMode::Warning, binned()),
        GOLD_REGULAR => gold(name, SchedulePolicy::regular(REGULAR_BLOCK, 0), ConsequenceMode::Warning, binned()),
        GOLD_FIB_REGULAR => gold(name, SchedulePolicy::fib_regular(0), ConsequenceMode::Warning, binned()),
        GOLD_REGULAR_BONUS => gold(
            name,
            SchedulePolicy::regular(REGULAR_BLOCK, 0),
            ConsequenceMode::Bonus,
            PaymentPolicy::regular_bonus(),
        ),
        GOLD_IMPROVED => {
            let t_min = ConsequencePolicy::default().tiers.t_min;
            gold(name, SchedulePolicy::dynamic(t_min, 0), ConsequenceMode::Tiered, binned())
        }
        _ => return None,
    };
    Some(spec)
}

pub const ROUND_ONE: [&str; 7] = [
    BASELINE,
    ITERATIVE,
    POST_TASK_BONUS,
    DECOMPOSITION_MANUAL,
    DECOMPOSITION_ORACLE,
    VARIABLE_PAY,
    GOLD_REGULAR,
];

pub const ROUND_TWO: [&str; 6] = [
    BASELINE,
    GOLD_REGULAR,
    GOLD_UPFRONT,
    GOLD_FIB_REGULAR,
    GOLD_REGULAR_BONUS,
    GOLD_IMPROVED,
];

/// Conditions whose ordering the calibrated simulator is checked against,
/// from best to worst.
pub const ORDERED: [&str; 6] = [GOLD_IMPROVED, GOLD_REGULAR, BASELINE, VARIABLE_PAY, POST_TASK_BONUS, ITERATIVE];

/// Every preset, each once, baseline first.
pub fn all() -> Vec<ConditionSpec> {
    let mut names: Vec<&str> = ROUND_ONE.to_vec();
    for n in ROUND_TWO {
        if !names.contains(&n) {
            names.push(n);
        }
    }
    names.into_iter().map(|n| preset(n).expect("known preset")).collect()
}

/// Presets for a named round: `round1`, `round2`, `ordered` or `all`.
pub fn suite(name: &str) -> Option<Vec<ConditionSpec>> {
    let pick = |names: &[&str]| names.iter().map(|n| preset(n).expect("known preset")).collect();
    match name {
        "round1" => Some(pick(&ROUND_ONE)),
        "round2" => Some(pick(&ROUND_TWO)),
        "ordered" => Some(pick(&ORDERED)),
        "all" => Some(all()),
        _ => None,
    }
}
