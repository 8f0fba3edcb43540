use proptest::prelude::*;
use vgold_core::dataset::{default_histogram, generate_corpus, BoundingBox, SizeModel};
use vgold_core::ledger::{
    banner, regular_bonus, ConsequenceMode, ConsequencePolicy, LedgerAction, Tier, TierPolicy, WorkerLedger, NO_RATING,
};
use vgold_core::money::Cents;
use vgold_core::payment::{price, settle, PaymentPolicy, PriceContext};
use vgold_core::scheduler::GoldVerdict;
use vgold_core::scoring::score_boxes;

fn quote(p: &PaymentPolicy, n: usize) -> Cents {
    price(p, n, &PriceContext::default()).unwrap().amount
}

#[test]
fn price_tables() {
    let binned = PaymentPolicy::baseline_binned();
    let variable = PaymentPolicy::variable_pay();
    for n in 1..=14usize {
        assert_eq!(quote(&binned, n), if n <= 7 { Cents(16) } else { Cents(44) });
        assert_eq!(quote(&variable, n), Cents(4 * n as i64));
        assert_eq!(quote(&PaymentPolicy::flat_subtask(), n), Cents(8));
        assert_eq!(quote(&PaymentPolicy::post_task_bonus(), n), Cents(4));
    }
    assert_eq!(quote(&variable, 14), Cents(56));
    let tiers = TierPolicy::default();
    for n in 1..=14usize {
        let expected = if n <= 7 { Cents(8) } else { Cents(22) };
        assert_eq!(regular_bonus(&tiers, n, 90.0, 75.0), expected);
        assert_eq!(regular_bonus(&tiers, n, 74.9, 75.0), Cents::ZERO);
    }
}

#[test]
fn binned_amortization_over_default_corpus() {
    let c = generate_corpus(7, &default_histogram(), &SizeModel::default()).unwrap();
    let p = PaymentPolicy::baseline_binned();
    let total: Cents = c.scenes().iter().map(|s| quote(&p, s.count())).sum();
    assert_eq!(total, Cents(16) * 70 + Cents(44) * 70);
    assert_eq!(total.to_string(), "$42.00");
    // Per-object rate: 4200 cents over 1050 objects.
    assert_eq!(c.total_boxes(), 1050);
    assert_eq!(total.0 as f64 / c.total_boxes() as f64, 4.0);
}

#[test]
fn post_task_bonus_examples() {
    let gt: Vec<BoundingBox> = (0..12)
        .map(|i| BoundingBox::new(i as f64 * 30.0, 0.0, 20.0, 20.0).unwrap())
        .collect();
    let p = PaymentPolicy::post_task_bonus();
    let ctx = PriceContext::default();
    let all = settle(&p, "h", 12, &score_boxes(&gt, &gt), Cents::ZERO, &ctx).unwrap();
    assert_eq!(all.total, Cents(48));
    let none = settle(&p, "h", 12, &score_boxes(&gt, &[]), Cents::ZERO, &ctx).unwrap();
    assert_eq!((none.total, none.bonus_paid), (Cents(4), Cents::ZERO));
    // The $0.08 base variant pays the same total for a perfect 12-object image.
    let alt = PaymentPolicy::PostTaskBonus { base: Cents(8), per_correct: Cents(4), correct_iou: 0.5 };
    let alt_pay = settle(&alt, "h", 12, &score_boxes(&gt, &gt), Cents::ZERO, &ctx).unwrap();
    assert_eq!((alt_pay.total, alt_pay.bonus_paid), (Cents(48), Cents(40)));
}

/// Scripted ledger replay: every banner equals one built from the ledger at
/// the same step, and tier transitions coincide.
#[test]
fn banner_sequence_tracks_ledger() {
    let policy = ConsequencePolicy { mode: ConsequenceMode::Tiered, ..Default::default() };
    let script = [90.0, 70.0, 60.0, 88.0, 95.0, 20.0, 30.0];
    let mut ledger = WorkerLedger::new("w");
    assert_eq!(banner(&ledger, &policy).label, NO_RATING);
    let mut tiers = Vec::new();
    for (i, s) in script.iter().enumerate() {
        ledger.update(&policy, &format!("h{i}"), *s, 5, GoldVerdict::Continue).unwrap();
        let b = banner(&ledger, &policy);
        let mean = script[..=i].iter().sum::<f64>() / (i + 1) as f64;
        assert_eq!(b.running_avg, Some(mean));
        assert_eq!(b.tier, Some(policy.tiers.tier(mean)));
        tiers.push(b.tier.unwrap());
    }
    // Means: 90, 80, 73.3, 77, 80.6, 72.2, 66.1.
    assert_eq!(
        tiers,
        vec![Tier::A, Tier::B, Tier::Standard, Tier::B, Tier::B, Tier::Standard, Tier::Standard]
    );
}

#[test]
fn warning_then_block() {
    let policy = ConsequencePolicy { mode: ConsequenceMode::Warning, ..Default::default() };
    let mut l = WorkerLedger::new("w");
    assert_eq!(l.update(&policy, "h1", 30.0, 3, GoldVerdict::Continue), Ok(LedgerAction::Warn));
    assert_eq!(l.update(&policy, "h2", 35.0, 3, GoldVerdict::Continue), Ok(LedgerAction::Warn));
    assert_eq!(l.update(&policy, "h3", 20.0, 3, GoldVerdict::Block), Ok(LedgerAction::Block));
    assert!(l.blocked);
    assert_eq!(l.running_avg(), Some(85.0 / 3.0));
    assert!(l.update(&policy, "h4", 99.0, 3, GoldVerdict::Continue).is_err());
}

proptest! {
    #[test]
    fn variable_pay_is_linear(n in 1usize..200) {
        let p = PaymentPolicy::variable_pay();
        prop_assert_eq!(quote(&p, n + 1) - quote(&p, n), Cents(4));
    }

    #[test]
    fn settle_never_pays_negative_bonus(correct in 0usize..15, total in 1usize..15, ledger in -50i64..50) {
        let total = total.max(correct).max(1);
        let gt: Vec<BoundingBox> = (0..total).map(|i| BoundingBox::new(i as f64 * 30.0, 0.0, 20.0, 20.0).unwrap()).collect();
        let r = score_boxes(&gt, &gt[..correct]);
        for p in [PaymentPolicy::baseline_binned(), PaymentPolicy::post_task_bonus(), PaymentPolicy::regular_bonus()] {
            let pay = settle(&p, "h", total, &r, Cents(ledger), &PriceContext::default()).unwrap();
            prop_assert!(pay.bonus_paid >= Cents::ZERO);
            prop_assert_eq!(pay.total, pay.base_paid + pay.bonus_paid);
        }
    }

    #[test]
    fn ledger_invariants(scores in prop::collection::vec(0.0..100.0f64, 1..40)) {
        let policy = ConsequencePolicy { mode: ConsequenceMode::Tiered, ..Default::default() };
        let mut l = WorkerLedger::new("w");
        let mut warnings = 0;
        for (i, s) in scores.iter().enumerate() {
            l.update(&policy, &format!("h{i}"), *s, 9, GoldVerdict::Continue).unwrap();
            prop_assert!(l.warnings_issued >= warnings);
            warnings = l.warnings_issued;
            let avg = l.running_avg().unwrap();
            prop_assert_eq!(l.tier(&policy.tiers), Some(policy.tiers.tier(avg)));
        }
        let audited: Cents = l.bonuses_awarded.iter().map(|b| b.amount).sum();
        prop_assert_eq!(audited, l.bonus_total());
    }
}
