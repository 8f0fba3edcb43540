//! Advertised prices and settled payouts.
//!
//! Amounts are whole cents. Ledger bonuses (regular or tiered) are passed in
//! by the caller; only the post-task bonus is computed here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Cents;
use crate::scoring::ScoreReport;

#[derive(Debug, Error, PartialEq)]
pub enum PaymentError {
    #[error("object count must be at least 1")]
    ZeroCount,
    #[error("invalid payment policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaymentPolicy {
    /// Two price bins split at `bin_edge` objects (inclusive low bin).
    BaselineBinned { low: Cents, high: Cents, bin_edge: usize },
    VariablePay { per_box: Cents },
    /// Base pay up front; after review the total becomes `per_correct` per
    /// box matched above `correct_iou`, never less than the base.
    PostTaskBonus { base: Cents, per_correct: Cents, correct_iou: f64 },
    FlatSubtask { per_hit: Cents },
    /// Binned base pay plus ledger bonuses.
    RegularBonus { low: Cents, high: Cents, bin_edge: usize },
}

impl PaymentPolicy {
    pub fn baseline_binned() -> Self {
        PaymentPolicy::BaselineBinned {
            low: Cents(16),
            high: Cents(44),
            bin_edge: 7,
        }
    }

    pub fn variable_pay() -> Self {
        PaymentPolicy::VariablePay { per_box: Cents(4) }
    }

    /// The base is configurable; a worked example elsewhere implies $0.08.
    pub fn post_task_bonus() -> Self {
        PaymentPolicy::PostTaskBonus {
            base: Cents(4),
            per_correct: Cents(4),
            correct_iou: 0.5,
        }
    }

    pub fn flat_subtask() -> Self {
        PaymentPolicy::FlatSubtask { per_hit: Cents(8) }
    }

    pub fn regular_bonus() -> Self {
        PaymentPolicy::RegularBonus {
            low: Cents(16),
            high: Cents(44),
            bin_edge: 7,
        }
    }

    pub fn validate(&self) -> Result<(), PaymentError> {
        let amounts: Vec<Cents> = match self {
            PaymentPolicy::BaselineBinned { low, high, bin_edge }
            | PaymentPolicy::RegularBonus { low, high, bin_edge } => {
                if *bin_edge == 0 {
                    return Err(PaymentError::InvalidPolicy("bin_edge must be at least 1".into()));
                }
                vec![*low, *high]
            }
            PaymentPolicy::VariablePay { per_box } => vec![*per_box],
            PaymentPolicy::PostTaskBonus { base, per_correct, correct_iou } => {
                if !(0.0..1.0).contains(correct_iou) {
                    return Err(PaymentError::InvalidPolicy("correct_iou must be in [0, 1)".into()));
                }
                vec![*base, *per_correct]
            }
            PaymentPolicy::FlatSubtask { per_hit } => vec![*per_hit],
        };
        if amounts.iter().any(|a| *a < Cents::ZERO) {
            return Err(PaymentError::InvalidPolicy("amounts must be non-negative".into()));
        }
        Ok(())
    }
}

/// Object-count range the prices were designed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceContext {
    pub min_count: usize,
    pub max_count: usize,
}

impl Default for PriceContext {
    fn default() -> Self {
        Self { min_count: 1, max_count: 14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub amount: Cents,
    /// The count fell outside the context range; binned prices keep the
    /// high bin and per-box prices extend linearly.
    pub extrapolated: bool,
}

fn binned(low: Cents, high: Cents, bin_edge: usize, count: usize) -> Cents {
    if count <= bin_edge {
        low
    } else {
        high
    }
}

pub fn price(policy: &PaymentPolicy, count: usize, ctx: &PriceContext) -> Result<Quote, PaymentError> {
    if count == 0 {
        return Err(PaymentError::ZeroCount);
    }
    let amount = match policy {
        PaymentPolicy::BaselineBinned { low, high, bin_edge }
        | PaymentPolicy::RegularBonus { low, high, bin_edge } => binned(*low, *high, *bin_edge, count),
        PaymentPolicy::VariablePay { per_box } => *per_box * count as i64,
        PaymentPolicy::PostTaskBonus { base, .. } => *base,
        PaymentPolicy::FlatSubtask { per_hit } => *per_hit,
    };
    Ok(Quote {
        amount,
        extrapolated: count < ctx.min_count || count > ctx.max_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub hit_id: String,
    pub advertised: Cents,
    pub base_paid: Cents,
    pub bonus_paid: Cents,
    pub total: Cents,
}

/// Settles one HIT. `count` is the object count the price was quoted on and
/// `ledger_bonus` any bonus the consequence ledger awarded for this HIT.
pub fn settle(
    policy: &PaymentPolicy,
    hit_id: &str,
    count: usize,
    report: &ScoreReport,
    ledger_bonus: Cents,
    ctx: &PriceContext,
) -> Result<Payout, PaymentError> {
    let advertised = price(policy, count, ctx)?.amount;
    let bonus = match policy {
        PaymentPolicy::PostTaskBonus { base, per_correct, correct_iou } => {
            let earned = *per_correct * report.correct_count(*correct_iou) as i64;
            (earned - *base).max(Cents::ZERO)
        }
        _ => ledger_bonus.max(Cents::ZERO),
    };
    Ok(Payout {
        hit_id: hit_id.to_string(),
        advertised,
        base_paid: advertised,
        bonus_paid: bonus,
        total: advertised + bonus,
    })
}
