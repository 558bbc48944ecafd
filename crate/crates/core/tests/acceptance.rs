//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaxledger_core::certificates::{
    certificate_transaction, encode_payload, issue_certificate, verify_certificate, Certificate,
    TrustMap, VerificationResult,
};
use vaxledger_core::coldchain::{
    builtin_profiles, evaluate_excursion, transition_phase, Phase, PhaseEvent, Severity,
    SpoilReason, TempWindow, VaccineProduct, VialState,
};
use vaxledger_core::consensus::{run_simulation, NetConfig, Node, Partition, TimedTx};
use vaxledger_core::contract::{
    apply_transaction, schedule_doses, AppointmentStatus, BeneficiaryRecord, DoseRecord, Event,
    RejectReason,
};
use vaxledger_core::identity::{ActorIdentity, PermissionMatrix, Role};
use vaxledger_core::ledger::{verify_records, AlertRecord, Digest, Payload, Transaction, TxKind};
use vaxledger_core::scenario::{parse_actors, parse_scenario_file, run_scenario, ScenarioConfig};
use vaxledger_core::telemetry::{TelemetryBatch, TelemetryReading};
use vaxledger_core::testkit::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn profile(id: &str) -> VaccineProduct {
    builtin_profiles()
        .into_iter()
        .find(|p| p.product_id == id)
        .expect("builtin profile")
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

// 1 ---------------------------------------------------------------------

fn windows(p: &VaccineProduct, phase: Phase) -> Vec<(i32, i32, Option<u64>)> {
    p.phase(phase)
        .map(|r| {
            r.rules
                .iter()
                .map(|c| (c.window.low_decic, c.window.high_decic, c.budget_seconds))
                .collect()
        })
        .unwrap_or_default()
}

fn table_fidelity() -> Outcome {
    const H: u64 = 3_600;
    const D: u64 = 86_400;
    let mut checked = 0;
    let mut check = |what: &str, ok: bool| -> Result<(), String> {
        checked += 1;
        ensure(ok, || format!("{what} does not match the storage table"))
    };

    let pf = profile("pfizer-biontech");
    check("pfizer frozen", windows(&pf, Phase::FrozenPreUse) == vec![(-800, -600, None)])?;
    check(
        "pfizer thawed",
        windows(&pf, Phase::ThawedUnpunctured) == vec![(20, 80, Some(120 * H)), (81, 250, Some(2 * H))],
    )?;
    check("pfizer punctured", windows(&pf, Phase::Punctured) == vec![(20, 250, Some(6 * H))])?;
    check("pfizer light", pf.light_protected)?;

    let m = profile("moderna");
    check("moderna frozen", windows(&m, Phase::FrozenPreUse) == vec![(-250, -150, None)])?;
    check(
        "moderna floor",
        m.phase(Phase::FrozenPreUse).and_then(|r| r.hard_floor_decic) == Some(-400),
    )?;
    check(
        "moderna thawed",
        windows(&m, Phase::ThawedUnpunctured) == vec![(20, 80, Some(30 * D)), (81, 250, Some(12 * H))],
    )?;
    check("moderna punctured", windows(&m, Phase::Punctured) == vec![(20, 249, None)])?;
    check("moderna light", m.light_protected)?;

    let cx = profile("covaxin");
    check("covaxin no frozen phase", !cx.has_frozen_phase())?;
    check("covaxin stored", windows(&cx, Phase::ThawedUnpunctured) == vec![(20, 80, None)])?;
    check("covaxin opened", windows(&cx, Phase::Punctured) == vec![(20, 80, None)])?;

    let cs = profile("covishield");
    check("covishield no frozen phase", !cs.has_frozen_phase())?;
    check("covishield stored", windows(&cs, Phase::ThawedUnpunctured) == vec![(20, 80, None)])?;
    check("covishield opened", windows(&cs, Phase::Punctured) == vec![(20, 250, Some(6 * H))])?;
    check("covishield do-not-freeze", cs.freeze_forbidden_below_decic == Some(0))?;

    for p in builtin_profiles() {
        check("profile validates", p.validate().is_ok())?;
    }
    Ok(format!("{checked} bounds across 4 profiles"))
}

// 2 ---------------------------------------------------------------------

#[derive(Debug, PartialEq)]
struct OracleResult {
    alerts: Vec<(i64, Severity)>,
    spoiled: Option<(i64, SpoilReason)>,
    budgets: Vec<(TempWindow, u64)>,
    grace: u64,
    light: u64,
}

/// Second-by-second integration of a forward-held trace.
fn oracle(p: &VaccineProduct, phase: Phase, trace: &[TelemetryReading]) -> OracleResult {
    let rules = p.phase(phase).expect("phase rules");
    let mut budgets: Vec<(TempWindow, u64)> = rules
        .rules
        .iter()
        .filter_map(|r| r.budget_seconds.map(|b| (r.window, b)))
        .collect();
    let mut grace = rules.grace_seconds;
    let mut light = 0u64;
    let mut light_alerted = false;
    let mut in_excursion = false;
    let mut alerts = Vec::new();
    let window = |t: i32| rules.rules.iter().find(|r| r.window.low_decic <= t && t <= r.window.high_decic);

    for (i, r) in trace.iter().enumerate() {
        if i > 0 {
            let prev = &trace[i - 1];
            for s in prev.timestamp..r.timestamp {
                if p.light_protected && prev.light_exposed {
                    light += 1;
                    if !light_alerted && light == rules.light_budget_seconds {
                        light_alerted = true;
                        alerts.push((s + 1, Severity::Warning));
                    }
                }
                let exhausted = match window(prev.temperature_decic) {
                    Some(rule) => match budgets.iter_mut().find(|(w, _)| *w == rule.window) {
                        Some((w, left)) => {
                            *left -= 1;
                            (*left == 0).then_some(SpoilReason::BudgetExhausted { window: *w })
                        }
                        None => None,
                    },
                    None => {
                        grace -= 1;
                        (grace == 0).then_some(SpoilReason::GraceExhausted)
                    }
                };
                if let Some(reason) = exhausted {
                    alerts.push((s + 1, Severity::Critical));
                    return OracleResult {
                        alerts,
                        spoiled: Some((s + 1, reason)),
                        budgets,
                        grace,
                        light,
                    };
                }
            }
        }
        let t = r.temperature_decic;
        let instant = if p.freeze_forbidden_below_decic.is_some_and(|l| t < l) {
            Some(SpoilReason::Frozen { reading_decic: t })
        } else if rules.hard_floor_decic.is_some_and(|f| t < f) {
            Some(SpoilReason::BelowHardFloor { reading_decic: t })
        } else if rules.hard_ceiling_decic.is_some_and(|c| t > c) {
            Some(SpoilReason::AboveHardCeiling { reading_decic: t })
        } else {
            None
        };
        if let Some(reason) = instant {
            alerts.push((r.timestamp, Severity::Critical));
            return OracleResult {
                alerts,
                spoiled: Some((r.timestamp, reason)),
                budgets,
                grace,
                light,
            };
        }
        if window(t).is_some() {
            in_excursion = false;
        } else if !in_excursion {
            in_excursion = true;
            alerts.push((r.timestamp, Severity::Warning));
        }
        if p.light_protected && r.light_exposed && !light_alerted && light >= rules.light_budget_seconds {
            light_alerted = true;
            alerts.push((r.timestamp, Severity::Warning));
        }
    }
    OracleResult {
        alerts,
        spoiled: None,
        budgets,
        grace,
        light,
    }
}

fn vial_in(p: &VaccineProduct, phase: Phase) -> VialState {
    let mut v = VialState::new(p, "VID-X", 0, 0);
    if v.phase == Phase::FrozenPreUse && phase != Phase::FrozenPreUse {
        v = transition_phase(p, &v, PhaseEvent::Thaw, 0).unwrap();
    }
    if phase == Phase::Punctured {
        v = transition_phase(p, &v, PhaseEvent::Puncture, 0).unwrap();
    }
    v
}

/// Temperatures that sit on or next to every boundary of the phase.
fn interesting_temps(p: &VaccineProduct, phase: Phase) -> Vec<i32> {
    let rules = p.phase(phase).unwrap();
    let mut t = Vec::new();
    for r in &rules.rules {
        let w = r.window;
        t.extend([w.low_decic - 1, w.low_decic, (w.low_decic + w.high_decic) / 2, w.high_decic, w.high_decic + 1]);
    }
    for b in [rules.hard_floor_decic, rules.hard_ceiling_decic, p.freeze_forbidden_below_decic]
        .into_iter()
        .flatten()
    {
        t.extend([b - 1, b, b + 1]);
    }
    t
}

fn random_trace(rng: &mut ChaCha8Rng, p: &VaccineProduct, phase: Phase) -> Vec<TelemetryReading> {
    let temps = interesting_temps(p, phase);
    let windows = &p.phase(phase).unwrap().rules;
    let horizon = rng.gen_range(3_600..=7 * 86_400);
    let mut t = 0i64;
    let mut out = Vec::new();
    // Mostly in-window readings so that budgets, not instant limits, decide.
    let mut current = temps[0];
    while t <= horizon {
        if out.is_empty() || rng.gen_bool(0.15) {
            current = if rng.gen_bool(0.7) {
                let w = windows.choose(rng).unwrap().window;
                rng.gen_range(w.low_decic..=w.high_decic)
            } else {
                *temps.choose(rng).unwrap()
            };
        }
        out.push(TelemetryReading::storage("U-1", t, current, rng.gen_bool(0.05)));
        t += rng.gen_range(60..=3 * 3_600);
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let products = builtin_profiles();
    let mut spoiled = 0;
    let mut alerts = 0;
    for case in 0..200 {
        let p = products.choose(&mut rng).unwrap();
        let phases: Vec<Phase> = [Phase::FrozenPreUse, Phase::ThawedUnpunctured, Phase::Punctured]
            .into_iter()
            .filter(|ph| p.phase(*ph).is_some())
            .collect();
        let phase = *phases.choose(&mut rng).unwrap();
        let trace = random_trace(&mut rng, p, phase);
        let vial = vial_in(p, phase);
        let engine = evaluate_excursion(p, &vial, &trace).map_err(|e| e.to_string())?;
        let truth = oracle(p, phase, &trace);

        let ctx = || format!("case {case} ({} {phase:?}, {} readings)", p.product_id, trace.len());
        let got_alerts: Vec<_> = engine.alerts.iter().map(|a| (a.timestamp, a.severity)).collect();
        ensure(got_alerts == truth.alerts, || format!("{}: alerts {got_alerts:?} vs {:?}", ctx(), truth.alerts))?;
        let got_spoil = engine.spoiled.clone().map(|r| (engine.updated_state.last_evaluated_at, r));
        ensure(got_spoil == truth.spoiled, || format!("{}: spoil {got_spoil:?} vs {:?}", ctx(), truth.spoiled))?;
        for (w, left) in &truth.budgets {
            let got = engine.updated_state.budget_for(*w).unwrap_or(0);
            ensure(got.abs_diff(*left) <= 1, || format!("{}: budget {w} {got} vs {left}", ctx()))?;
        }
        ensure(engine.updated_state.grace_remaining_seconds.abs_diff(truth.grace) <= 1, || {
            format!("{}: grace {} vs {}", ctx(), engine.updated_state.grace_remaining_seconds, truth.grace)
        })?;
        ensure(engine.updated_state.phase_light_seconds == truth.light, || format!("{}: light", ctx()))?;

        // Splitting the trace across calls must not change anything.
        let mut state = vial.clone();
        let mut split_alerts = Vec::new();
        let cut = rng.gen_range(0..=trace.len());
        for chunk in [&trace[..cut], &trace[cut..]] {
            if !state.status.is_usable() {
                break;
            }
            let r = evaluate_excursion(p, &state, chunk).map_err(|e| e.to_string())?;
            split_alerts.extend(r.alerts.iter().map(|a| (a.timestamp, a.severity)));
            state = r.updated_state;
        }
        ensure(split_alerts == truth.alerts && state == engine.updated_state, || {
            format!("{}: split at {cut} differs", ctx())
        })?;

        spoiled += usize::from(truth.spoiled.is_some());
        alerts += truth.alerts.len();
    }
    Ok(format!("200 traces, {spoiled} spoiled, {alerts} alerts, all equal"))
}

// 3 ---------------------------------------------------------------------

fn boundary_spoilage() -> Outcome {
    let p = profile("pfizer-biontech");
    let v = vial_in(&p, Phase::ThawedUnpunctured);
    let trace = |end: i64| -> Vec<TelemetryReading> {
        (0..)
            .map(|i| i * 60)
            .take_while(|t| *t <= end)
            .map(|t| TelemetryReading::storage("U-1", t, 50, false))
            .collect()
    };
    let before = evaluate_excursion(&p, &v, &trace(120 * 3_600 - 60)).map_err(|e| e.to_string())?;
    ensure(before.spoiled.is_none(), || "spoiled before 120 h".into())?;
    ensure(before.updated_state.budget_for(TempWindow::new(20, 80)) == Some(60), || {
        "one minute should remain at 119 h 59 min".into()
    })?;
    let at = evaluate_excursion(&p, &v, &trace(120 * 3_600)).map_err(|e| e.to_string())?;
    ensure(
        at.spoiled == Some(SpoilReason::BudgetExhausted { window: TempWindow::new(20, 80) }),
        || format!("not spoiled at 120 h: {:?}", at.spoiled),
    )?;
    let when = at.alerts.last().map(|a| a.timestamp);
    ensure(when == Some(120 * 3_600), || format!("spoil time {when:?}"))?;
    Ok("usable at 119h59m, spoiled at exactly 432000 s".into())
}

// 4 ---------------------------------------------------------------------

fn tamper_evidence() -> Outcome {
    let b = Bench::with(&CAST, 1);
    let mut node = Node::new(0, b.validators[0].clone(), &b.genesis, PermissionMatrix::standard(), 1, 1000)
        .map_err(|e| e.to_string())?;
    for i in 0..49i64 {
        let tx = b.sign(
            "DOC-1",
            TxKind::RegisterBeneficiary,
            Payload::Registration {
                bid: format!("P-{i:03}"),
                center_id: "CENTER-A".into(),
                priority_class: (i % 3) as u8,
            },
            1_000 + i,
        );
        node.submit(tx);
        node.tick(i as u64 + 1);
    }
    let ledger = node.ledger();
    ensure(ledger.len() == 50, || format!("chain has {} blocks", ledger.len()))?;
    ensure(ledger.verify_chain().is_valid(), || "pristine chain fails".into())?;

    let records: Vec<Vec<u8>> = ledger.records().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut detected = 0;
    for trial in 0..500 {
        let height = rng.gen_range(0..records.len());
        let byte = rng.gen_range(0..records[height].len());
        let bit = rng.gen_range(0..8);
        let mut mutated = records.clone();
        mutated[height][byte] ^= 1 << bit;
        let report = verify_records(mutated.iter().map(|r| r.as_slice()));
        match report.first_failing_height() {
            Some(h) if h <= height as u64 => detected += 1,
            other => {
                return Err(format!(
                    "trial {trial}: flip at block {height} byte {byte} bit {bit} reported {other:?}"
                ))
            }
        }
    }
    Ok(format!("{detected}/500 single-bit flips detected at or before the mutated block"))
}

// 5 ---------------------------------------------------------------------

const ROLES: [Role; 6] = [
    Role::Manufacturer,
    Role::Distributor,
    Role::MedicalCenter,
    Role::Doctor,
    Role::Beneficiary,
    Role::Validator,
];

/// The documented matrix, written out independently of the library.
fn documented(role: Role, kind: TxKind) -> bool {
    use TxKind::*;
    let allowed: &[TxKind] = match role {
        Role::Manufacturer => &[DefineProductRules, RegisterLot, RecordDispatchTime],
        Role::Distributor => &[StartTransport, RecordTransportTelemetry],
        Role::MedicalCenter => &[ReceiveLot, StoreLot, RecordStorageTelemetry, ThawVials, ScheduleDoses],
        Role::Doctor => &[RegisterBeneficiary, AdministerDose, IssueCertificateRequest, PunctureVial],
        Role::Beneficiary => &[RegisterSelf, ReportSideEffect, ReportAdverseEvent],
        Role::Validator => &[],
    };
    allowed.contains(&kind)
}

fn actor_for(role: Role) -> &'static str {
    match role {
        Role::Manufacturer => "MAN-1",
        Role::Distributor => "DIST-1",
        Role::MedicalCenter => "CENTER-A",
        Role::Doctor => "DOC-1",
        Role::Beneficiary => "BEN-1",
        Role::Validator => "VAL-0",
    }
}

/// A world where every kind has something valid to act on.
fn sweep_world() -> Bench {
    let mut b = Bench::new();
    b.define("MAN-1", "pfizer-biontech");
    b.register_lot("MAN-1", "VID-NEW", "pfizer-biontech", 2, at(0, 0));
    b.register_lot("MAN-1", "VID-MOV", "pfizer-biontech", 2, at(0, 0));
    b.start_transport("DIST-1", "VID-MOV", "TID-MOV", at(0, 1));
    b.deliver("VID-1", "pfizer-biontech", 3, "CENTER-A", at(0, 0));
    b.deliver("VID-F", "pfizer-biontech", 1, "CENTER-A", at(0, 0));
    b.ok(
        "CENTER-A",
        TxKind::StoreLot,
        Payload::StoreLot {
            vid: "VID-1".into(),
            unit_id: "U-1".into(),
        },
        at(0, 2),
    );
    b.register("BEN-1", "CENTER-A", 0, at(1, 0));
    b.register("BEN-2", "CENTER-A", 0, at(1, 0));
    b.schedule("CENTER-A", D0 + 2, 10, at(1, 1));
    b.thaw("CENTER-A", "VID-1", at(2, 0));
    b.puncture("DOC-1", "VID-1", 0, at(2, 1));
    b.administer("DOC-1", "BEN-1", "VID-1", 0, at(2, 2));
    b
}

fn sweep_payload(b: &Bench, kind: TxKind, author: &str) -> Payload {
    match kind {
        TxKind::Genesis => b.genesis.transactions[0].payload.clone(),
        TxKind::DefineProductRules => Payload::DefineProductRules(profile("moderna")),
        TxKind::RegisterLot => Payload::RegisterLot {
            vid: "VID-Z".into(),
            product_id: "pfizer-biontech".into(),
            vial_count: 1,
            manufactured_at: at(2, 0),
        },
        TxKind::RecordDispatchTime => Payload::RecordDispatchTime { vid: "VID-MOV".into() },
        TxKind::StartTransport => Payload::StartTransport {
            vid: "VID-NEW".into(),
            tid: "TID-NEW".into(),
        },
        TxKind::RecordTransportTelemetry => Payload::TelemetryBatch(
            TelemetryBatch::new(vec![TelemetryReading::transport("TID-MOV", at(2, 3), -700, false, None)]).unwrap(),
        ),
        TxKind::ReceiveLot => Payload::ReceiveLot {
            vid: "VID-MOV".into(),
            tid_scanned: "TID-MOV".into(),
            center_id: author.into(),
        },
        TxKind::StoreLot => Payload::StoreLot {
            vid: "VID-1".into(),
            unit_id: "U-2".into(),
        },
        TxKind::RecordStorageTelemetry => Payload::TelemetryBatch(
            TelemetryBatch::new(vec![TelemetryReading::storage("U-1", at(2, 3), 50, false)]).unwrap(),
        ),
        TxKind::ThawVials => Payload::ThawVials {
            vid: "VID-F".into(),
            vials: None,
        },
        TxKind::PunctureVial => Payload::PunctureVial {
            vid: "VID-1".into(),
            vial_index: 1,
        },
        TxKind::RegisterBeneficiary => Payload::Registration {
            bid: "BEN-5".into(),
            center_id: "CENTER-A".into(),
            priority_class: 0,
        },
        TxKind::RegisterSelf => Payload::Registration {
            bid: author.into(),
            center_id: "CENTER-A".into(),
            priority_class: 0,
        },
        TxKind::ScheduleDoses => Payload::ScheduleDoses {
            center_id: author.into(),
            as_of_day: D0 + 3,
            daily_capacity: 5,
        },
        TxKind::AdministerDose => Payload::AdministerDose {
            bid: "BEN-2".into(),
            vid: "VID-1".into(),
            vial_index: 0,
        },
        TxKind::ReportSideEffect => Payload::ReportSideEffect {
            bid: author.into(),
            vid: "VID-1".into(),
            description: "sore arm".into(),
        },
        TxKind::ReportAdverseEvent => Payload::ReportAdverseEvent {
            bid: author.into(),
            vid: "VID-1".into(),
            grade: 2,
            description: "fever".into(),
        },
        TxKind::IssueCertificateRequest => {
            let signer = b.dir.get(author).cloned().unwrap_or_else(|| b.validators[0].clone());
            let cert = Certificate::sign("BEN-1", "pfizer-biontech", 1, D0 + 2, &signer).unwrap();
            Payload::IssueCertificate(cert)
        }
        TxKind::Alert => Payload::Alert(AlertRecord {
            origin: Digest::ZERO,
            alerts: Vec::new(),
        }),
    }
}

fn permission_sweep() -> Outcome {
    let base = sweep_world();
    let matrix = PermissionMatrix::standard();
    let mut denials = 0;
    let mut grants = 0;
    for role in ROLES {
        for kind in TxKind::ALL {
            // BEN-1 already holds a dose; self-registration needs a newcomer.
            let author_id = match (role, kind) {
                (Role::Beneficiary, TxKind::RegisterSelf) => "BEN-3",
                _ => actor_for(role),
            };
            let author = base
                .dir
                .get(author_id)
                .cloned()
                .or_else(|| base.validators.iter().find(|v| v.actor_id() == author_id).cloned())
                .expect("sweep actor");
            let expected = documented(role, kind);
            ensure(matrix.authorize(role, kind) == expected, || {
                format!("matrix says {} for {role} x {kind}", !expected)
            })?;
            let tx = Transaction::sign(kind, sweep_payload(&base, kind, author_id), &author, at(2, 4))
                .map_err(|e| e.to_string())?;
            let mut world = base.world.clone();
            let before = world.canonical_bytes();
            let events = apply_transaction(&mut world, &tx, &matrix);
            let rejected = rejection(&events);
            if expected {
                grants += 1;
                ensure(rejected.is_none(), || format!("{role} x {kind} rejected: {events:?}"))?;
                ensure(world.canonical_bytes() != before, || format!("{role} x {kind} changed nothing"))?;
            } else {
                denials += 1;
                ensure(rejected.is_some(), || format!("{role} x {kind} was accepted"))?;
                ensure(world.canonical_bytes() == before, || format!("{role} x {kind} denial changed state"))?;
                if !kind.is_system() {
                    ensure(rejected == Some(RejectReason::Auth), || {
                        format!("{role} x {kind} denied as {rejected:?}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{} cells: {grants} grants applied, {denials} denials with unchanged state",
        ROLES.len() * TxKind::ALL.len()
    ))
}

// 6 ---------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Req {
    bid: String,
    earliest: i64,
    product: Option<String>,
}

/// True if some assignment is lexicographically earlier than `sched` in the
/// serving order. Unassigned counts as later than any day.
fn beaten(
    reqs: &[Req],
    sched: &[Option<i64>],
    capacity: u32,
    supply: &BTreeMap<String, u32>,
    horizon: i64,
) -> Option<Vec<Option<i64>>> {
    fn feasible(reqs: &[Req], pick: &[Option<i64>], capacity: u32, supply: &BTreeMap<String, u32>) -> bool {
        let mut load: BTreeMap<i64, u32> = BTreeMap::new();
        let mut fixed: BTreeMap<&str, u32> = BTreeMap::new();
        let mut free = 0;
        for (r, d) in reqs.iter().zip(pick) {
            let Some(d) = d else { continue };
            if *d < r.earliest {
                return false;
            }
            *load.entry(*d).or_default() += 1;
            match &r.product {
                Some(p) => *fixed.entry(p).or_default() += 1,
                None => free += 1,
            }
        }
        let total: u32 = supply.values().sum();
        load.values().all(|l| *l <= capacity)
            && fixed.iter().all(|(p, n)| supply.get(*p).copied().unwrap_or(0) >= *n)
            && fixed.values().sum::<u32>() + free <= total
    }

    fn go(
        i: usize,
        pick: &mut Vec<Option<i64>>,
        reqs: &[Req],
        sched: &[Option<i64>],
        capacity: u32,
        supply: &BTreeMap<String, u32>,
        horizon: i64,
    ) -> Option<Vec<Option<i64>>> {
        if i == reqs.len() {
            return None;
        }
        let limit = sched[i].unwrap_or(horizon + 1);
        for d in reqs[i].earliest..limit.min(horizon + 1) {
            pick.push(Some(d));
            // Later requests may all stay unassigned, so a feasible prefix
            // that is smaller here already wins.
            if feasible(reqs, pick, capacity, supply) {
                let mut win = pick.clone();
                win.resize(reqs.len(), None);
                return Some(win);
            }
            pick.pop();
        }
        pick.push(sched[i]);
        let found = if feasible(reqs, pick, capacity, supply) {
            go(i + 1, pick, reqs, sched, capacity, supply, horizon)
        } else {
            None
        };
        pick.pop();
        found
    }

    go(0, &mut Vec::new(), reqs, sched, capacity, supply, horizon)
}

fn scheduling_bruteforce() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut scenarios = 0;
    let mut assigned = 0;
    for case in 0..400 {
        let mut b = Bench::new();
        b.define("MAN-1", "pfizer-biontech");
        b.define("MAN-2", "moderna");
        let as_of = D0 + 30;
        // Up to three vials spread over at most two lots.
        let vials = rng.gen_range(0..=3u32);
        let pf_vials = rng.gen_range(0..=vials);
        if pf_vials > 0 {
            b.deliver("VID-P", "pfizer-biontech", pf_vials, "CENTER-A", at(25, 0));
        }
        if vials > pf_vials {
            b.register_lot("MAN-2", "VID-M", "moderna", vials - pf_vials, at(25, 0));
            b.start_transport("DIST-1", "VID-M", "T-M", at(25, 1));
            b.receive("CENTER-A", "VID-M", "T-M", at(25, 2));
        }
        // Some vials are already partly used.
        for lot in b.world.lots.values_mut() {
            for v in lot.vials.iter_mut() {
                v.doses_administered = rng.gen_range(0..=4);
            }
        }
        let n = rng.gen_range(1..=10);
        for i in 0..n {
            let bid = format!("B-{i:02}");
            let requested_day = as_of + rng.gen_range(-2..5);
            let doses = if rng.gen_bool(0.3) {
                let product = if rng.gen_bool(0.5) { "pfizer-biontech" } else { "moderna" };
                let interval = b.world.product(product).unwrap().dose_interval_days as i64;
                vec![DoseRecord {
                    dose_number: 1,
                    vid: "VID-OLD".into(),
                    vial_index: 0,
                    product_id: product.into(),
                    at: 0,
                    day: as_of - interval + rng.gen_range(-2..5),
                    doctor: "DOC-1".into(),
                }]
            } else {
                Vec::new()
            };
            b.world.beneficiaries.insert(
                bid.clone(),
                BeneficiaryRecord {
                    bid,
                    center_id: "CENTER-A".into(),
                    priority_class: rng.gen_range(0..3),
                    requested_at: requested_day * DAY + rng.gen_range(0..DAY),
                    registered_by: "DOC-1".into(),
                    doses,
                },
            );
        }
        let capacity = rng.gen_range(1..=3);

        // Serving order and constraints, derived from the world directly.
        let world = b.world.clone();
        let mut order: Vec<_> = world.beneficiaries.values().collect();
        order.sort_by_key(|r| (r.doses.is_empty(), r.priority_class, r.requested_at, r.bid.clone()));
        let reqs: Vec<Req> = order
            .iter()
            .map(|r| match r.doses.last() {
                Some(d) => Req {
                    bid: r.bid.clone(),
                    earliest: as_of.max(d.day + world.product(&d.product_id).unwrap().dose_interval_days as i64),
                    product: Some(d.product_id.clone()),
                },
                None => Req {
                    bid: r.bid.clone(),
                    earliest: as_of.max(r.requested_at.div_euclid(DAY)),
                    product: None,
                },
            })
            .collect();
        let mut supply: BTreeMap<String, u32> = BTreeMap::new();
        for lot in world.lots.values().filter(|l| l.center() == Some("CENTER-A")) {
            let p = world.product(&lot.product_id).unwrap();
            *supply.entry(lot.product_id.clone()).or_default() +=
                lot.vials.iter().map(|v| v.doses_remaining(p)).sum::<u32>();
        }

        let events = schedule_doses(&mut b.world, "CENTER-A", as_of, capacity);
        let mut got: BTreeMap<String, (i64, String)> = BTreeMap::new();
        for e in &events {
            if let Event::AppointmentScheduled { bid, vid, day, .. } = e {
                got.insert(bid.clone(), (*day, vid.clone()));
            }
        }
        let sched: Vec<Option<i64>> = reqs.iter().map(|r| got.get(&r.bid).map(|g| g.0)).collect();

        // The scheduler's own answer must satisfy every constraint.
        let mut load: BTreeMap<i64, u32> = BTreeMap::new();
        let mut used: BTreeMap<String, u32> = BTreeMap::new();
        for r in &reqs {
            if let Some((day, vid)) = got.get(&r.bid) {
                let lot_product = &world.lots[vid].product_id;
                ensure(*day >= r.earliest, || format!("case {case}: {} before earliest", r.bid))?;
                ensure(r.product.as_ref().is_none_or(|p| p == lot_product), || {
                    format!("case {case}: {} got wrong product", r.bid)
                })?;
                *load.entry(*day).or_default() += 1;
                *used.entry(lot_product.clone()).or_default() += 1;
            }
        }
        ensure(load.values().all(|l| *l <= capacity), || format!("case {case}: capacity exceeded"))?;
        ensure(used.iter().all(|(p, n)| supply.get(p).copied().unwrap_or(0) >= *n), || {
            format!("case {case}: supply exceeded")
        })?;

        let horizon = as_of + 20;
        if let Some(better) = beaten(&reqs, &sched, capacity, &supply, horizon) {
            return Err(format!("case {case}: {better:?} beats scheduler {sched:?}"));
        }
        ensure(b.world.appointments.iter().all(|a| a.status == AppointmentStatus::Planned), || {
            format!("case {case}: unexpected status")
        })?;
        scenarios += 1;
        assigned += got.len();
    }
    Ok(format!("{scenarios} scenarios, {assigned} appointments, none improvable"))
}

// 7 ---------------------------------------------------------------------

fn convergence_run(partition: bool, seed: u64) -> Result<(String, u64), String> {
    let b = Bench::with(&CAST, 4);
    let txs: Vec<TimedTx> = (0..200)
        .map(|i| TimedTx {
            tick: 1 + i as u64 / 2,
            origin: i % 4,
            tx: b.sign(
                if i % 2 == 0 { "DOC-1" } else { "DOC-2" },
                TxKind::RegisterBeneficiary,
                Payload::Registration {
                    bid: format!("P-{i:03}"),
                    center_id: if i % 3 == 0 { "CENTER-B" } else { "CENTER-A" }.into(),
                    priority_class: (i % 4) as u8,
                },
                i as i64,
            ),
            after: None,
        })
        .collect();
    let config = NetConfig {
        drop_probability: 0.1,
        seed,
        partitions: if partition {
            vec![Partition {
                start_tick: 30,
                end_tick: 80,
                groups: vec![vec![0, 1], vec![2, 3]],
            }]
        } else {
            Vec::new()
        },
        ..NetConfig::default()
    };
    let mut sim = vaxledger_core::consensus::Simulation::new(
        &b.genesis,
        b.validators.clone(),
        config.clone(),
        PermissionMatrix::standard(),
    )
    .map_err(|e| e.to_string())?;
    let report = sim.run(txs.clone());
    ensure(report.converged, || format!("not converged: {report}"))?;
    let head = report.nodes[0].head;
    ensure(report.nodes.iter().all(|n| n.head == head && n.committed == 200), || {
        format!("heads or counts differ: {report}")
    })?;
    let bytes = sim.node(0).world().canonical_bytes();
    ensure(sim.nodes().iter().all(|n| n.world().canonical_bytes() == bytes), || {
        "world states differ".into()
    })?;
    ensure(sim.node(0).world().beneficiaries.len() == 200, || "registrations missing".into())?;
    ensure(sim.node(0).ledger().verify_chain().is_valid(), || "chain invalid".into())?;
    let again = run_simulation(&b.genesis, b.validators.clone(), config, txs).map_err(|e| e.to_string())?;
    ensure(again == report, || "rerun with the same seed differs".into())?;
    let dropped: u64 = report.nodes.iter().map(|n| n.dropped).sum();
    Ok((format!("{} ticks, {dropped} drops", report.ticks), report.ticks))
}

fn replication_convergence() -> Outcome {
    let (plain, _) = convergence_run(false, 7)?;
    let (split, ticks) = convergence_run(true, 7)?;
    ensure(ticks > 80, || "partition run ended before the heal".into())?;
    Ok(format!("lossy: {plain}; partitioned 30..80: {split}"))
}

// 8 ---------------------------------------------------------------------

fn safety_gate() -> Outcome {
    let dir = scenarios_dir();
    let events = parse_scenario_file(&dir.join("spoiled.scn")).map_err(|e| e.to_string())?;
    let actors_text = std::fs::read_to_string(dir.join("demo.actors")).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for nodes in [1, 4] {
        let actors = parse_actors(&actors_text, 1).map_err(|e| e.to_string())?;
        let config = ScenarioConfig {
            seed: 1,
            nodes,
            net: NetConfig {
                drop_probability: if nodes > 1 { 0.1 } else { 0.0 },
                seed: 1,
                ..NetConfig::default()
            },
            products: builtin_profiles(),
        };
        let out = run_scenario(&events, &actors, &config).map_err(|e| e.to_string())?;
        ensure(out.report.exit_code() == 0, || format!("{nodes} nodes: run failed\n{}", out.report))?;
        let safety: Vec<_> = out.report.rejections.iter().filter(|r| r.reason == "safety").collect();
        ensure(safety.len() == 1 && out.report.rejections.len() == 1, || {
            format!("{nodes} nodes: rejections {:?}", out.report.rejections)
        })?;
        let lot = &out.world.lots["VID-2"];
        ensure(!lot.vials[0].status.is_usable(), || "vial 0 not spoiled".into())?;
        let from_spoiled = out
            .world
            .beneficiaries
            .values()
            .flat_map(|b| &b.doses)
            .filter(|d| d.vid == "VID-2" && d.vial_index == 0)
            .count();
        ensure(from_spoiled == 0, || format!("{from_spoiled} doses from the spoiled vial"))?;
        ensure(out.report.doses_administered == 2, || "fresh vial doses missing".into())?;
        lines.push(format!("{nodes} node(s): 1 safety rejection, 0 doses from spoiled vial"));
    }
    Ok(lines.join("; "))
}

// 9 ---------------------------------------------------------------------

fn certificate_lifecycle() -> Outcome {
    let mut b = Bench::new();
    b.define("MAN-1", "pfizer-biontech");
    b.deliver("VID-1", "pfizer-biontech", 3, "CENTER-A", at(0, 0));
    b.register("BEN-1", "CENTER-A", 0, at(1, 0));
    b.schedule("CENTER-A", D0 + 2, 5, at(1, 1));
    b.thaw("CENTER-A", "VID-1", at(2, 0));
    b.puncture("DOC-1", "VID-1", 0, at(2, 1));
    b.administer("DOC-1", "BEN-1", "VID-1", 0, at(2, 2));
    let doc = b.actor("DOC-1").clone();
    let trust = TrustMap::from_directory(&b.dir);

    let first = issue_certificate(&b.world, "BEN-1", &doc).map_err(|e| e.to_string())?;
    let tx = certificate_transaction(first.clone(), &doc, at(2, 3)).map_err(|e| e.to_string())?;
    ensure(rejection(&apply_transaction(&mut b.world, &tx, &b.matrix)).is_none(), || "dose 1 cert rejected".into())?;
    let text1 = encode_payload(&first).map_err(|e| e.to_string())?;
    let r1 = verify_certificate(&text1, &trust);
    ensure(r1 == VerificationResult::ValidPartial, || format!("dose 1 gives {r1:?}"))?;

    b.schedule("CENTER-A", D0 + 23, 5, at(22, 0));
    b.puncture("DOC-1", "VID-1", 1, at(23, 1));
    let ev = b.administer("DOC-1", "BEN-1", "VID-1", 1, at(23, 2));
    ensure(rejection(&ev).is_none(), || format!("dose 2 refused: {ev:?}"))?;
    let second = issue_certificate(&b.world, "BEN-1", &doc).map_err(|e| e.to_string())?;
    let text2 = encode_payload(&second).map_err(|e| e.to_string())?;
    let r2 = verify_certificate(&text2, &trust);
    ensure(r2 == VerificationResult::ValidFinal, || format!("dose 2 gives {r2:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let body = text2.strip_prefix("VXC1:").ok_or("payload prefix")?.to_string();
    let alphabet: Vec<char> = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_".chars().collect();
    let mut rejected = 0;
    for i in 0..100 {
        let mutated = if i % 2 == 0 {
            // Replace one character of the encoded body.
            let mut chars: Vec<char> = body.chars().collect();
            let at = rng.gen_range(0..chars.len());
            let old = chars[at];
            let mut new = old;
            while new == old {
                new = *alphabet.choose(&mut rng).unwrap();
            }
            chars[at] = new;
            format!("VXC1:{}", chars.into_iter().collect::<String>())
        } else {
            // Flip one bit of the decoded bytes and re-encode.
            use base64::Engine;
            let engine = base64::engine::general_purpose::URL_SAFE_NO_PAD;
            let mut bytes = engine.decode(&body).map_err(|e| e.to_string())?;
            let at = rng.gen_range(0..bytes.len());
            bytes[at] ^= 1 << rng.gen_range(0..8);
            format!("VXC1:{}", engine.encode(bytes))
        };
        let r = verify_certificate(&mutated, &trust);
        ensure(!r.is_valid(), || format!("mutation {i} accepted as {r:?}: {mutated}"))?;
        rejected += 1;
    }

    let mut forgeries = 0;
    for _ in 0..10 {
        let fake = ActorIdentity::from_seed(Role::Doctor, "DOC-1", rng.gen());
        let cert = Certificate::sign("BEN-1", "pfizer-biontech", 2, D0 + 23, &fake).map_err(|e| e.to_string())?;
        let r = verify_certificate(&encode_payload(&cert).map_err(|e| e.to_string())?, &trust);
        ensure(r == VerificationResult::BadSignature, || format!("forgery gives {r:?}"))?;
        forgeries += 1;
    }
    Ok(format!(
        "partial then final; {rejected}/100 mutations and {forgeries}/10 forgeries rejected"
    ))
}

// 10 --------------------------------------------------------------------

fn replay_determinism() -> Outcome {
    let dir = scenarios_dir();
    let events = parse_scenario_file(&dir.join("demo.scn")).map_err(|e| e.to_string())?;
    let actors_text = std::fs::read_to_string(dir.join("demo.actors")).map_err(|e| e.to_string())?;
    let run = || -> Result<(Vec<u8>, String, String), String> {
        let actors = parse_actors(&actors_text, 42).map_err(|e| e.to_string())?;
        let config = ScenarioConfig {
            seed: 42,
            nodes: 4,
            net: NetConfig {
                drop_probability: 0.1,
                seed: 42,
                ..NetConfig::default()
            },
            products: builtin_profiles(),
        };
        let out = run_scenario(&events, &actors, &config).map_err(|e| e.to_string())?;
        let json = serde_json::to_string(&out.report).map_err(|e| e.to_string())?;
        Ok((out.ledger.to_snapshot(), out.report.to_string(), json))
    };
    let (s1, t1, j1) = run()?;
    let (s2, t2, j2) = run()?;
    ensure(s1 == s2, || "snapshots differ".into())?;
    ensure(t1 == t2 && j1 == j2, || "reports differ".into())?;
    Ok(format!("snapshot {} bytes identical, report identical", s1.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("cold-chain table fidelity", table_fidelity, Some(Duration::from_secs(1))),
        ("excursion oracle equivalence", oracle_equivalence, Some(Duration::from_secs(30))),
        ("boundary spoilage at 120 h", boundary_spoilage, None),
        ("tamper evidence", tamper_evidence, None),
        ("permission matrix sweep", permission_sweep, None),
        ("scheduling brute-force equivalence", scheduling_bruteforce, Some(Duration::from_secs(60))),
        ("replication convergence", replication_convergence, None),
        ("safety gate end-to-end", safety_gate, None),
        ("certificate lifecycle", certificate_lifecycle, None),
        ("replay determinism", replay_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({elapsed:.2?}): {detail}", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
