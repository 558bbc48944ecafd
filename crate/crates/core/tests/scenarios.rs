use std::path::{Path, PathBuf};

use vaxledger_core::coldchain::builtin_profiles;
use vaxledger_core::consensus::NetConfig;
use vaxledger_core::contract::{replay, Event};
use vaxledger_core::identity::PermissionMatrix;
use vaxledger_core::ledger::{verify_snapshot, LedgerState, QueryFilter, TxKind};
use vaxledger_core::scenario::{parse_actors, parse_scenario, parse_scenario_file, run_scenario, RunOutcome, ScenarioConfig};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(name: &str, nodes: usize, drop: f64, seed: u64) -> RunOutcome {
    let events = parse_scenario_file(&dir().join(name)).unwrap();
    let actors = parse_actors(&std::fs::read_to_string(dir().join("demo.actors")).unwrap(), seed).unwrap();
    let config = ScenarioConfig {
        seed,
        nodes,
        net: NetConfig {
            drop_probability: drop,
            seed,
            ..NetConfig::default()
        },
        products: builtin_profiles(),
    };
    run_scenario(&events, &actors, &config).unwrap()
}

#[test]
fn demo_outcome() {
    let out = run("demo.scn", 1, 0.0, 1);
    let r = &out.report;
    assert_eq!(r.exit_code(), 0, "{r}");
    assert_eq!(r.doses_administered, 2);
    assert_eq!(r.alerts.warning, 1);
    assert_eq!(r.alerts.critical, 0);
    assert_eq!(r.certificates.partial, 1);
    assert!(r.rejections.is_empty(), "{r}");
}

#[test]
fn network_does_not_change_business_outcome() {
    let single = run("demo.scn", 1, 0.0, 3);
    for seed in [3, 4, 5] {
        let many = run("demo.scn", 4, 0.1, seed);
        assert_eq!(many.report.exit_code(), 0, "{}", many.report);
        assert_eq!(many.report.business_counts(), single.report.business_counts());
    }
}

#[test]
fn snapshot_round_trip_replays_to_same_world() {
    let out = run("spoiled.scn", 4, 0.1, 9);
    let bytes = out.ledger.to_snapshot();
    assert!(verify_snapshot(&bytes).is_valid());
    let restored = LedgerState::from_snapshot(&bytes).unwrap();
    assert_eq!(restored.to_snapshot(), bytes);
    let again = replay(&restored, &PermissionMatrix::standard()).unwrap();
    assert_eq!(again.world.canonical_bytes(), out.world.canonical_bytes());
    assert_eq!(again.events, out.events);
}

#[test]
fn truncated_snapshot_fails_verification() {
    let bytes = run("demo.scn", 1, 0.0, 1).ledger.to_snapshot();
    let report = verify_snapshot(&bytes[..bytes.len() - 10]);
    assert!(!report.is_valid());
}

#[test]
fn rejected_transactions_stay_on_chain() {
    let out = run("spoiled.scn", 1, 0.0, 1);
    let rejected: Vec<_> = out
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::Rejected { .. }))
        .collect();
    assert_eq!(rejected.len(), 1);
    let at = &rejected[0];
    let block = out.ledger.block(at.height).unwrap();
    assert_eq!(block.transactions[at.tx_index].kind, TxKind::AdministerDose);
}

#[test]
fn alerts_follow_their_origin() {
    let out = run("spoiled.scn", 1, 0.0, 1);
    let mut seen = 0;
    for block in out.ledger.blocks() {
        for (i, tx) in block.transactions.iter().enumerate() {
            if tx.kind == TxKind::Alert {
                assert!(i > 0);
                assert_ne!(block.transactions[i - 1].kind, TxKind::Alert);
                seen += 1;
            }
        }
    }
    assert!(seen >= 1);
}

#[test]
fn query_by_subject_and_kind() {
    let out = run("demo.scn", 1, 0.0, 1);
    let doses = out.ledger.query(&QueryFilter {
        kinds: vec![TxKind::AdministerDose],
        ..QueryFilter::default()
    });
    assert_eq!(doses.len(), 2);
    let ben = out.ledger.query(&QueryFilter {
        subject: Some("BEN-1".into()),
        ..QueryFilter::default()
    });
    assert!(ben.iter().any(|t| t.kind == TxKind::AdministerDose));
    assert!(ben.iter().all(|t| t.kind != TxKind::RegisterLot));
}

#[test]
fn unknown_actor_is_reported() {
    let events = parse_scenario("tick=1 actor=NOBODY action=register-self center=CENTER-A priority=0 at=2021-03-01T00:00:00Z\n", Path::new(".")).unwrap();
    let actors = parse_actors(&std::fs::read_to_string(dir().join("demo.actors")).unwrap(), 1).unwrap();
    let config = ScenarioConfig {
        seed: 1,
        nodes: 1,
        net: NetConfig::default(),
        products: builtin_profiles(),
    };
    assert!(run_scenario(&events, &actors, &config).is_err());
}
