use proptest::prelude::*;

use vaxledger_core::certificates::{decode_payload, encode_payload, verify_certificate, Certificate, TrustMap, VerificationResult};
use vaxledger_core::coldchain::{builtin_profiles, evaluate_excursion, transition_phase, PhaseEvent, VialState};
use vaxledger_core::identity::{ActorIdentity, Role};
use vaxledger_core::ledger::{verify_records, LedgerState, Payload, TxKind};
use vaxledger_core::telemetry::TelemetryReading;
use vaxledger_core::testkit::{at, Bench, CAST, D0};

fn trace(steps: Vec<(i64, i32, bool)>) -> Vec<TelemetryReading> {
    let mut t = 0;
    steps
        .into_iter()
        .map(|(gap, temp, light)| {
            t += gap;
            TelemetryReading::storage("U-1", t, temp, light)
        })
        .collect()
}

fn vial(product: usize, thaw: bool, puncture: bool) -> (usize, VialState) {
    let p = &builtin_profiles()[product];
    let mut v = VialState::new(p, "VID-P", 0, 0);
    for (wanted, event) in [(thaw, PhaseEvent::Thaw), (puncture, PhaseEvent::Puncture)] {
        if wanted {
            if let Ok(next) = transition_phase(p, &v, event, 0) {
                v = next;
            }
        }
    }
    (product, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_evaluation_matches_single_pass(
        product in 0usize..4,
        thaw in any::<bool>(),
        puncture in any::<bool>(),
        steps in prop::collection::vec((1i64..20_000, -900i32..400, prop::bool::weighted(0.1)), 1..60),
        cut in any::<prop::sample::Index>(),
    ) {
        let (i, v) = vial(product, thaw, puncture);
        let p = &builtin_profiles()[i];
        let readings = trace(steps);
        let whole = evaluate_excursion(p, &v, &readings).unwrap();
        let cut = cut.index(readings.len() + 1);
        let first = evaluate_excursion(p, &v, &readings[..cut]).unwrap();
        let mut alerts = first.alerts.clone();
        let mut state = first.updated_state;
        if state.status.is_usable() {
            let second = evaluate_excursion(p, &state, &readings[cut..]).unwrap();
            alerts.extend(second.alerts);
            state = second.updated_state;
        }
        prop_assert_eq!(alerts, whole.alerts);
        prop_assert_eq!(state, whole.updated_state);
    }

    #[test]
    fn budgets_only_shrink(
        product in 0usize..4,
        thaw in any::<bool>(),
        steps in prop::collection::vec((1i64..20_000, -900i32..400, any::<bool>()), 1..40),
    ) {
        let (i, v) = vial(product, thaw, false);
        let p = &builtin_profiles()[i];
        let r = evaluate_excursion(p, &v, &trace(steps)).unwrap();
        let after = &r.updated_state;
        prop_assert!(after.grace_remaining_seconds <= v.grace_remaining_seconds);
        for b in &v.budgets {
            prop_assert!(after.budget_for(b.window).unwrap() <= b.remaining_seconds);
        }
        prop_assert!(after.light_exposure_seconds >= v.light_exposure_seconds);
        prop_assert_eq!(r.spoiled.is_some(), !after.status.is_usable());
    }

    #[test]
    fn certificate_payload_round_trips(
        bid in "[A-Z]{1,4}-[0-9]{1,6}",
        dose in 1u8..=2,
        day in 0i64..40_000,
        seed in any::<[u8; 32]>(),
    ) {
        let issuer = ActorIdentity::from_seed(Role::Doctor, "DOC-9", seed);
        let cert = Certificate::sign(&bid, "moderna", dose, day, &issuer).unwrap();
        let text = encode_payload(&cert).unwrap();
        prop_assert_eq!(&decode_payload(&text).unwrap(), &cert);
        let mut trust = TrustMap::new();
        trust.insert("DOC-9", issuer.public_key());
        let expected = if dose == 2 { VerificationResult::ValidFinal } else { VerificationResult::ValidPartial };
        prop_assert_eq!(verify_certificate(&text, &trust), expected);
    }
}

fn small_chain() -> LedgerState {
    use vaxledger_core::consensus::Node;
    use vaxledger_core::identity::PermissionMatrix;
    let b = Bench::with(&CAST, 1);
    let mut node = Node::new(0, b.validators[0].clone(), &b.genesis, PermissionMatrix::standard(), 1, 1000).unwrap();
    for i in 0..6i64 {
        node.submit(b.sign(
            "DOC-1",
            TxKind::RegisterBeneficiary,
            Payload::Registration {
                bid: format!("P-{i}"),
                center_id: "CENTER-A".into(),
                priority_class: 0,
            },
            at(0, i),
        ));
        node.tick(i as u64 + 1);
    }
    node.ledger().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_byte_change_is_located(block in any::<prop::sample::Index>(), byte in any::<prop::sample::Index>(), xor in 1u8..=255) {
        let ledger = small_chain();
        let mut records: Vec<Vec<u8>> = ledger.records().to_vec();
        let h = block.index(records.len());
        let i = byte.index(records[h].len());
        records[h][i] ^= xor;
        let report = verify_records(records.iter().map(|r| r.as_slice()));
        let failing = report.first_failing_height();
        prop_assert!(failing.is_some_and(|f| f <= h as u64), "flip at {h}:{i} gave {failing:?}");
    }
}

#[test]
fn certificate_day_is_the_dose_day() {
    let issuer = ActorIdentity::from_seed(Role::Doctor, "DOC-1", [3; 32]);
    let cert = Certificate::sign("BEN-1", "pfizer-biontech", 1, D0, &issuer).unwrap();
    assert_eq!(cert.date(), "2021-03-01");
}
