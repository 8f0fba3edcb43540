//! Running gold accuracy, quality tiers and consequences.
//!
//! Only visible golds enter the ledger. The running average is the mean of
//! all gold scores; the tier is a pure function of that average.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Cents;
use crate::scheduler::GoldVerdict;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("worker {0:?} is blocked")]
    Blocked(String),
    #[error("invalid tier policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    A,
    B,
    Standard,
    AtRisk,
}

impl Tier {
    pub fn label(self) -> &'static str {
        match self {
            Tier::A => "Tier A",
            Tier::B => "Tier B",
            Tier::Standard => "Standard",
            Tier::AtRisk => "At risk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierPolicy {
    pub t_min: f64,
    pub t_bonus_b: f64,
    pub t_bonus_a: f64,
    pub bonus_small: Cents,
    pub bonus_large: Cents,
    /// Images with at least this many objects earn `bonus_large`.
    pub large_count_threshold: usize,
}

impl Default for TierPolicy {
    fn default() -> Self {
        Self {
            t_min: 50.0,
            t_bonus_b: 75.0,
            t_bonus_a: 85.0,
            bonus_small: Cents(8),
            bonus_large: Cents(22),
            large_count_threshold: 8,
        }
    }
}

impl TierPolicy {
    pub fn validate(&self) -> Result<(), LedgerError> {
        let ordered = 0.0 <= self.t_min
            && self.t_min < self.t_bonus_b
            && self.t_bonus_b < self.t_bonus_a
            && self.t_bonus_a <= 100.0;
        if !ordered {
            return Err(LedgerError::InvalidPolicy(
                "thresholds must satisfy 0 <= t_min < t_bonus_b < t_bonus_a <= 100".into(),
            ));
        }
        if self.bonus_small < Cents::ZERO || self.bonus_large < Cents::ZERO {
            return Err(LedgerError::InvalidPolicy("bonus amounts must be non-negative".into()));
        }
        if self.large_count_threshold == 0 {
            return Err(LedgerError::InvalidPolicy("large_count_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn tier(&self, running_avg: f64) -> Tier {
        if running_avg >= self.t_bonus_a {
            Tier::A
        } else if running_avg >= self.t_bonus_b {
            Tier::B
        } else if running_avg >= self.t_min {
            Tier::Standard
        } else {
            Tier::AtRisk
        }
    }

    pub fn image_amount(&self, image_count: usize) -> Cents {
        if image_count >= self.large_count_threshold {
            self.bonus_large
        } else {
            self.bonus_small
        }
    }
}

/// How gold results turn into consequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsequenceMode {
    /// No consequences (baseline and non-gold workflows).
    #[default]
    None,
    /// Failed golds trigger a warning about losing access.
    Warning,
    /// Images earn a flat bonus while accuracy stays above `t_bonus_b`.
    Bonus,
    /// Tier banner, tiered bonuses, warnings and blocking.
    Tiered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCadence {
    #[default]
    EveryFailure,
    Once,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsequencePolicy {
    pub mode: ConsequenceMode,
    pub tiers: TierPolicy,
    pub warnings: WarningCadence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "amount", rename_all = "snake_case")]
pub enum LedgerAction {
    None,
    Warn,
    Bonus(Cents),
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwardedBonus {
    pub hit_id: String,
    pub amount: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerLedger {
    pub worker_id: String,
    pub gold_scores: Vec<f64>,
    pub blocked: bool,
    pub warnings_issued: u32,
    pub bonuses_awarded: Vec<AwardedBonus>,
}

/// Flat bonus: full amount when `score >= threshold`, nothing otherwise.
pub fn regular_bonus(tiers: &TierPolicy, image_count: usize, score: f64, threshold: f64) -> Cents {
    if score >= threshold {
        tiers.image_amount(image_count)
    } else {
        Cents::ZERO
    }
}

impl WorkerLedger {
    pub fn new(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            gold_scores: Vec::new(),
            blocked: false,
            warnings_issued: 0,
            bonuses_awarded: Vec::new(),
        }
    }

    pub fn running_avg(&self) -> Option<f64> {
        if self.gold_scores.is_empty() {
            None
        } else {
            Some(self.gold_scores.iter().sum::<f64>() / self.gold_scores.len() as f64)
        }
    }

    pub fn tier(&self, tiers: &TierPolicy) -> Option<Tier> {
        self.running_avg().map(|avg| tiers.tier(avg))
    }

    pub fn bonus_total(&self) -> Cents {
        self.bonuses_awarded.iter().map(|b| b.amount).sum()
    }

    /// Bonus owed for one completed image at the worker's current standing.
    pub fn image_bonus(&self, policy: &ConsequencePolicy, image_count: usize) -> Cents {
        let Some(avg) = self.running_avg() else {
            return Cents::ZERO;
        };
        let tiers = &policy.tiers;
        match policy.mode {
            ConsequenceMode::Bonus => regular_bonus(tiers, image_count, avg, tiers.t_bonus_b),
            ConsequenceMode::Tiered => match tiers.tier(avg) {
                Tier::A => tiers.image_amount(image_count),
                Tier::B => tiers.image_amount(image_count).half(),
                Tier::Standard | Tier::AtRisk => Cents::ZERO,
            },
            ConsequenceMode::None | ConsequenceMode::Warning => Cents::ZERO,
        }
    }

    /// Appends a gold score without deciding any consequence.
    pub fn push_gold_score(&mut self, score: f64) -> Result<(), LedgerError> {
        if self.blocked {
            return Err(LedgerError::Blocked(self.worker_id.clone()));
        }
        self.gold_scores.push(score);
        Ok(())
    }

    /// Consequence of the gold most recently pushed. A blocking verdict from
    /// the scheduler always wins.
    pub fn decide_action(
        &self,
        policy: &ConsequencePolicy,
        gold_score: f64,
        image_count: usize,
        verdict: GoldVerdict,
    ) -> LedgerAction {
        if verdict == GoldVerdict::Block {
            return LedgerAction::Block;
        }
        let failed = gold_score < policy.tiers.t_min;
        let warns = matches!(policy.mode, ConsequenceMode::Warning | ConsequenceMode::Tiered);
        if failed && warns {
            let allowed = match policy.warnings {
                WarningCadence::EveryFailure => true,
                WarningCadence::Once => self.warnings_issued == 0,
            };
            return if allowed { LedgerAction::Warn } else { LedgerAction::None };
        }
        match self.image_bonus(policy, image_count) {
            Cents::ZERO => LedgerAction::None,
            amount => LedgerAction::Bonus(amount),
        }
    }

    pub fn apply_action(&mut self, hit_id: &str, action: &LedgerAction) {
        match action {
            LedgerAction::None => {}
            LedgerAction::Warn => self.warnings_issued += 1,
            LedgerAction::Bonus(amount) => self.bonuses_awarded.push(AwardedBonus {
                hit_id: hit_id.to_string(),
                amount: *amount,
            }),
            LedgerAction::Block => self.blocked = true,
        }
    }

    /// Records a completed gold and applies its consequence. `verdict` comes
    /// from the gold scheduler and signals the three-strike condition.
    pub fn update(
        &mut self,
        policy: &ConsequencePolicy,
        hit_id: &str,
        gold_score: f64,
        image_count: usize,
        verdict: GoldVerdict,
    ) -> Result<LedgerAction, LedgerError> {
        self.push_gold_score(gold_score)?;
        let action = self.decide_action(policy, gold_score, image_count, verdict);
        self.apply_action(hit_id, &action);
        Ok(action)
    }
}

/// Performance banner shown above the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BannerState {
    pub running_avg: Option<f64>,
    pub tier: Option<Tier>,
    pub label: String,
    pub hint: String,
    pub blocked: bool,
}

pub const NO_RATING: &str = "no rating yet";
pub const BLOCK_REASON: &str = "quality below threshold";

pub fn banner(ledger: &WorkerLedger, policy: &ConsequencePolicy) -> BannerState {
    let tiers = &policy.tiers;
    let Some(avg) = ledger.running_avg() else {
        return BannerState {
            running_avg: None,
            tier: None,
            label: NO_RATING.into(),
            hint: "complete a quality check to receive a rating".into(),
            blocked: ledger.blocked,
        };
    };
    let tier = tiers.tier(avg);
    let hint = if ledger.blocked {
        format!("access ended: {BLOCK_REASON}")
    } else {
        match tier {
            Tier::A => "full bonus on every image".to_string(),
            Tier::B => format!("half bonus; reach {:.0}% for the full bonus", tiers.t_bonus_a),
            Tier::Standard => format!("reach {:.0}% to earn a bonus", tiers.t_bonus_b),
            Tier::AtRisk => format!(
                "warning: accuracy below {:.0}% can end your access to these tasks",
                tiers.t_min
            ),
        }
    };
    BannerState {
        running_avg: Some(avg),
        tier: Some(tier),
        label: format!("{} · {:.0}%", tier.label(), avg),
        hint,
        blocked: ledger.blocked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiered() -> ConsequencePolicy {
        ConsequencePolicy {
            mode: ConsequenceMode::Tiered,
            ..Default::default()
        }
    }

    fn warning() -> ConsequencePolicy {
        ConsequencePolicy {
            mode: ConsequenceMode::Warning,
            ..Default::default()
        }
    }

    #[test]
    fn running_average_and_tier() {
        let mut l = WorkerLedger::new("w");
        let mut p = tiered();
        p.tiers.t_bonus_a = 85.0;
        l.update(&p, "h1", 80.0, 3, GoldVerdict::Continue).unwrap();
        l.update(&p, "h2", 90.0, 3, GoldVerdict::Continue).unwrap();
        assert_eq!(l.running_avg(), Some(85.0));
        assert_eq!(l.tier(&p.tiers), Some(Tier::A));
    }

    #[test]
    fn tier_boundaries() {
        let t = TierPolicy::default();
        assert_eq!(t.tier(85.0), Tier::A);
        assert_eq!(t.tier(84.99), Tier::B);
        assert_eq!(t.tier(75.0), Tier::B);
        assert_eq!(t.tier(50.0), Tier::Standard);
        assert_eq!(t.tier(49.9), Tier::AtRisk);
    }

    #[test]
    fn failed_gold_warns() {
        let mut l = WorkerLedger::new("w");
        assert_eq!(l.update(&warning(), "h", 30.0, 4, GoldVerdict::Continue), Ok(LedgerAction::Warn));
        assert_eq!(l.warnings_issued, 1);
    }

    #[test]
    fn warning_once_cadence() {
        let mut l = WorkerLedger::new("w");
        let p = ConsequencePolicy { warnings: WarningCadence::Once, ..warning() };
        assert_eq!(l.update(&p, "h1", 30.0, 4, GoldVerdict::Continue), Ok(LedgerAction::Warn));
        assert_eq!(l.update(&p, "h2", 30.0, 4, GoldVerdict::Continue), Ok(LedgerAction::None));
        assert_eq!(l.warnings_issued, 1);
    }

    #[test]
    fn strike_three_blocks_and_is_absorbing() {
        let mut l = WorkerLedger::new("w");
        let p = tiered();
        l.update(&p, "h1", 30.0, 2, GoldVerdict::Continue).unwrap();
        l.update(&p, "h2", 35.0, 2, GoldVerdict::Continue).unwrap();
        assert_eq!(l.update(&p, "h3", 20.0, 2, GoldVerdict::Block), Ok(LedgerAction::Block));
        assert!(l.blocked);
        assert!(matches!(l.update(&p, "h4", 90.0, 2, GoldVerdict::Continue), Err(LedgerError::Blocked(_))));
        assert_eq!(l.gold_scores.len(), 3);
    }

    #[test]
    fn regular_bonus_table() {
        let t = TierPolicy::default();
        assert_eq!(regular_bonus(&t, 5, 90.0, 75.0), Cents(8));
        assert_eq!(regular_bonus(&t, 7, 90.0, 75.0), Cents(8));
        assert_eq!(regular_bonus(&t, 8, 90.0, 75.0), Cents(22));
        assert_eq!(regular_bonus(&t, 12, 90.0, 75.0), Cents(22));
        assert_eq!(regular_bonus(&t, 12, 60.0, 75.0), Cents::ZERO);
    }

    #[test]
    fn tiered_bonus_amounts() {
        let p = tiered();
        let mut l = WorkerLedger::new("w");
        assert_eq!(l.image_bonus(&p, 10), Cents::ZERO);
        l.gold_scores = vec![90.0];
        assert_eq!(l.image_bonus(&p, 10), Cents(22));
        l.gold_scores = vec![80.0];
        assert_eq!(l.image_bonus(&p, 3), Cents(4));
        assert_eq!(l.image_bonus(&p, 10), Cents(11));
        l.gold_scores = vec![60.0];
        assert_eq!(l.image_bonus(&p, 10), Cents::ZERO);
    }

    #[test]
    fn banner_states() {
        let p = tiered();
        let mut l = WorkerLedger::new("w");
        let b = banner(&l, &p);
        assert_eq!(b.label, NO_RATING);
        assert_eq!(b.tier, None);
        l.gold_scores = vec![79.0];
        let b = banner(&l, &p);
        assert_eq!(b.tier, Some(Tier::B));
        assert_eq!(b.running_avg, Some(79.0));
    }

    #[test]
    fn invalid_policies() {
        let mut t = TierPolicy::default();
        t.t_bonus_b = 40.0;
        assert!(t.validate().is_err());
        let mut t = TierPolicy::default();
        t.bonus_large = Cents(-1);
        assert!(t.validate().is_err());
    }
}
