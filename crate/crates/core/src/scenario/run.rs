use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{check_actors, Action, ScenarioError, ScenarioEvent};
use crate::certificates::{certificate_transaction, issue_certificate, CertificateKind};
use crate::coldchain::{Severity, VaccineProduct};
use crate::consensus::{NetConfig, NodeReport, Simulation, TimedTx};
use crate::contract::{
    apply_transaction, execute_block, replay, LoggedEvent, VialCounts, WorldState,
};
use crate::identity::{ActorIdentity, Directory, PermissionMatrix, Role};
use crate::ledger::{
    genesis_block, Digest, GenesisConfig, HashAlgorithm, LedgerState, Payload, Transaction,
    TxKind, DEFAULT_CHAIN_ID,
};
use crate::telemetry::TelemetryBatch;

/// 32-byte key seed for `label`, derived from the root seed.
pub fn derive_seed(root: u64, label: &str) -> [u8; 32] {
    let mut buf = b"vaxledger/seed/".to_vec();
    buf.extend_from_slice(&root.to_be_bytes());
    buf.extend_from_slice(label.as_bytes());
    Digest::of(&buf).0
}

/// Validators `VAL-0 .. VAL-{n-1}`, keyed from the root seed.
pub fn validator_identities(n: usize, root: u64) -> Vec<ActorIdentity> {
    (0..n)
        .map(|i| {
            let id = format!("VAL-{i}");
            ActorIdentity::from_seed(Role::Validator, id.clone(), derive_seed(root, &id))
        })
        .collect()
}

/// Actors file: `actor_id role [hex-seed]` per line. Actors without a seed
/// get one derived from the root seed.
pub fn parse_actors(text: &str, root: u64) -> Result<Directory, ScenarioError> {
    let mut dir = Directory::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let perr = |column: usize, message: String| ScenarioError::Parse {
            line,
            column,
            message,
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(perr(1, "expected `actor_id role [hex-seed]`".into()));
        }
        let role: Role = fields[1].parse().map_err(|e| perr(1, format!("{e}")))?;
        if role == Role::Validator {
            return Err(perr(1, "validators are generated, not listed".into()));
        }
        let seed = match fields.get(2) {
            Some(hexseed) => {
                let raw = hex::decode(hexseed).map_err(|e| perr(1, format!("seed: {e}")))?;
                raw.try_into()
                    .map_err(|_| perr(1, "seed must be 32 bytes of hex".into()))?
            }
            None => derive_seed(root, fields[0]),
        };
        dir.create_actor(role, fields[0], seed)
            .map_err(|e| perr(1, e.to_string()))?;
    }
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub nodes: usize,
    pub net: NetConfig,
    pub products: Vec<VaccineProduct>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlertCounts {
    pub warning: usize,
    pub critical: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CertificateCounts {
    pub partial: usize,
    #[serde(rename = "final")]
    pub final_: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectionEntry {
    /// Scenario line that produced the transaction.
    pub line: Option<usize>,
    pub height: u64,
    pub tx_index: usize,
    pub kind: String,
    pub author: String,
    pub reason: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub ticks: u64,
    pub converged: bool,
    /// Every node holds a bitwise-equal world state.
    pub states_equal: bool,
    pub chain_valid: bool,
    pub chain_error: Option<String>,
    pub nodes: Vec<NodeReport>,
    pub lots: usize,
    pub vials: VialCounts,
    pub doses_administered: usize,
    pub alerts: AlertCounts,
    pub certificates: CertificateCounts,
    pub rejections: Vec<RejectionEntry>,
    /// Events that never became transactions, e.g. a certificate for a
    /// beneficiary with no dose.
    pub client_errors: Vec<String>,
}

impl RunReport {
    /// 0 iff the run converged on a chain that verifies.
    pub fn exit_code(&self) -> i32 {
        if self.converged && self.states_equal && self.chain_valid {
            0
        } else {
            1
        }
    }

    /// The network-independent part of the report.
    pub fn business_counts(&self) -> (usize, VialCounts, usize, AlertCounts, CertificateCounts, Vec<(String, String)>) {
        (
            self.lots,
            self.vials,
            self.doses_administered,
            self.alerts.clone(),
            self.certificates.clone(),
            self.rejections
                .iter()
                .map(|r| (r.kind.clone(), r.reason.clone()))
                .collect(),
        )
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed={} nodes={} ticks={} converged={} states_equal={} chain={}",
            self.seed,
            self.nodes.len(),
            self.ticks,
            self.converged,
            self.states_equal,
            match &self.chain_error {
                None => "valid".to_string(),
                Some(e) => format!("invalid ({e})"),
            }
        )?;
        for n in &self.nodes {
            writeln!(
                f,
                "node={} id={} head={} height={} committed={} dropped={}",
                n.index, n.id, n.head, n.height, n.committed, n.dropped
            )?;
        }
        writeln!(f, "lots={}", self.lots)?;
        writeln!(
            f,
            "vials usable={} spoiled={} administered={} expired={}",
            self.vials.usable, self.vials.spoiled, self.vials.administered, self.vials.expired
        )?;
        writeln!(f, "doses_administered={}", self.doses_administered)?;
        writeln!(
            f,
            "alerts warning={} critical={}",
            self.alerts.warning, self.alerts.critical
        )?;
        writeln!(
            f,
            "certificates partial={} final={}",
            self.certificates.partial, self.certificates.final_
        )?;
        writeln!(f, "rejections={}", self.rejections.len())?;
        for r in &self.rejections {
            let line = r.line.map_or("-".to_string(), |l| l.to_string());
            writeln!(
                f,
                "  line={line} height={} tx={} kind={} author={} reason={} message=\"{}\"",
                r.height, r.tx_index, r.kind, r.author, r.reason, r.message
            )?;
        }
        for e in &self.client_errors {
            writeln!(f, "client_error: {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Node 0's chain.
    pub ledger: LedgerState,
    /// World state replayed from `ledger`.
    pub world: WorldState,
    pub events: Vec<LoggedEvent>,
}

fn build_tx(
    ev: &ScenarioEvent,
    actor: &ActorIdentity,
    shadow: &WorldState,
    products: &[VaccineProduct],
) -> Result<Result<Transaction, String>, ScenarioError> {
    let setup = |m: String| ScenarioError::Setup(format!("line {}: {m}", ev.line));
    let me = actor.actor_id().to_string();
    let (kind, payload) = match &ev.action {
        Action::DefineProduct { product_id } => {
            let p = products
                .iter()
                .find(|p| &p.product_id == product_id)
                .ok_or_else(|| setup(format!("unknown product profile `{product_id}`")))?;
            (TxKind::DefineProductRules, Payload::DefineProductRules(p.clone()))
        }
        Action::RegisterLot {
            vid,
            product_id,
            vials,
            manufactured_at,
        } => (
            TxKind::RegisterLot,
            Payload::RegisterLot {
                vid: vid.clone(),
                product_id: product_id.clone(),
                vial_count: *vials,
                manufactured_at: manufactured_at.unwrap_or(ev.at),
            },
        ),
        Action::Dispatch { vid } => (
            TxKind::RecordDispatchTime,
            Payload::RecordDispatchTime { vid: vid.clone() },
        ),
        Action::StartTransport { vid, tid } => (
            TxKind::StartTransport,
            Payload::StartTransport {
                vid: vid.clone(),
                tid: tid.clone(),
            },
        ),
        Action::ReceiveLot { vid, tid } => (
            TxKind::ReceiveLot,
            Payload::ReceiveLot {
                vid: vid.clone(),
                tid_scanned: tid.clone(),
                center_id: me,
            },
        ),
        Action::Store { vid, unit } => (
            TxKind::StoreLot,
            Payload::StoreLot {
                vid: vid.clone(),
                unit_id: unit.clone(),
            },
        ),
        Action::Thaw { vid, vials } => (
            TxKind::ThawVials,
            Payload::ThawVials {
                vid: vid.clone(),
                vials: vials.clone(),
            },
        ),
        Action::Puncture { vid, vial } => (
            TxKind::PunctureVial,
            Payload::PunctureVial {
                vid: vid.clone(),
                vial_index: *vial,
            },
        ),
        Action::Telemetry { readings } => {
            let batch = TelemetryBatch::new(readings.clone()).map_err(|e| setup(e.to_string()))?;
            (batch.kind(), Payload::TelemetryBatch(batch))
        }
        Action::RegisterBeneficiary {
            bid,
            center,
            priority,
        } => (
            TxKind::RegisterBeneficiary,
            Payload::Registration {
                bid: bid.clone(),
                center_id: center.clone(),
                priority_class: *priority,
            },
        ),
        Action::RegisterSelf { center, priority } => (
            TxKind::RegisterSelf,
            Payload::Registration {
                bid: me,
                center_id: center.clone(),
                priority_class: *priority,
            },
        ),
        Action::Schedule { day, capacity } => (
            TxKind::ScheduleDoses,
            Payload::ScheduleDoses {
                center_id: me,
                as_of_day: *day,
                daily_capacity: *capacity,
            },
        ),
        Action::Administer { bid, vid, vial } => (
            TxKind::AdministerDose,
            Payload::AdministerDose {
                bid: bid.clone(),
                vid: vid.clone(),
                vial_index: *vial,
            },
        ),
        Action::ReportSideEffect { vid, text } => (
            TxKind::ReportSideEffect,
            Payload::ReportSideEffect {
                bid: me,
                vid: vid.clone(),
                description: text.clone(),
            },
        ),
        Action::ReportAdverseEvent { vid, grade, text } => (
            TxKind::ReportAdverseEvent,
            Payload::ReportAdverseEvent {
                bid: me,
                vid: vid.clone(),
                grade: *grade,
                description: text.clone(),
            },
        ),
        Action::IssueCert { bid } => {
            return Ok(issue_certificate(shadow, bid, actor)
                .map_err(|e| format!("line {}: {e}", ev.line))
                .and_then(|cert| {
                    certificate_transaction(cert, actor, ev.at).map_err(|e| e.to_string())
                }));
        }
    };
    Transaction::sign(kind, payload, actor, ev.at)
        .map(Ok)
        .map_err(|e| setup(e.to_string()))
}

/// Signs every event as its actor, runs the transactions through the
/// replicated network and reports on the converged chain.
///
/// Each transaction is held back until the previous one is committed at
/// its origin node, so the ledger order equals the file order whatever the
/// network does.
pub fn run_scenario(
    events: &[ScenarioEvent],
    actors: &Directory,
    config: &ScenarioConfig,
) -> Result<RunOutcome, ScenarioError> {
    if config.nodes == 0 {
        return Err(ScenarioError::Setup("at least one node is required".into()));
    }
    config.net.validate().map_err(ScenarioError::Setup)?;
    check_actors(events, actors)?;
    let validators = validator_identities(config.nodes, config.seed);
    let contract = ActorIdentity::contract();
    let mut records: Vec<_> = actors.iter().map(|a| a.record()).collect();
    records.extend(validators.iter().map(|v| v.record()));
    records.push(contract.record());
    let genesis = genesis_block(
        GenesisConfig {
            chain_id: DEFAULT_CHAIN_ID.to_string(),
            hash_algorithm: HashAlgorithm::Sha256.id(),
            validators: validators.iter().map(|v| v.actor_id().to_string()).collect(),
            actors: records,
        },
        &validators[0],
    )
    .map_err(|e| ScenarioError::Setup(e.to_string()))?;

    let matrix = PermissionMatrix::standard();
    let mut shadow = WorldState::new();
    execute_block(&mut shadow, &genesis, &matrix)
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let mut timed = Vec::new();
    let mut lines: HashMap<Digest, usize> = HashMap::new();
    let mut client_errors = Vec::new();
    let mut after = None;
    for ev in events {
        let actor = actors.get(&ev.actor).expect("actors checked");
        let tx = match build_tx(ev, actor, &shadow, &config.products)? {
            Ok(tx) => tx,
            Err(e) => {
                client_errors.push(e);
                continue;
            }
        };
        apply_transaction(&mut shadow, &tx, &matrix);
        lines.insert(tx.tx_id(), ev.line);
        let id = tx.tx_id();
        timed.push(TimedTx {
            tick: ev.tick,
            origin: actors.position(&ev.actor).unwrap_or(0) % config.nodes,
            tx,
            after,
        });
        after = Some(id);
    }

    let mut sim = Simulation::new(&genesis, validators, config.net.clone(), matrix.clone())
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let sim_report = sim.run(timed);
    let ledger = sim.node(0).ledger().clone();
    let verification = ledger.verify_chain();
    let replayed = replay(&ledger, &matrix).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let world = replayed.world;
    let bytes = world.canonical_bytes();
    let states_equal = sim
        .nodes()
        .iter()
        .all(|n| n.world().canonical_bytes() == bytes);

    let mut alerts = AlertCounts::default();
    for a in &world.alerts {
        match a.severity {
            Severity::Warning => alerts.warning += 1,
            Severity::Critical => alerts.critical += 1,
        }
    }
    let mut certificates = CertificateCounts::default();
    for c in &world.certificates {
        match c.kind {
            CertificateKind::Partial => certificates.partial += 1,
            CertificateKind::Final => certificates.final_ += 1,
        }
    }
    let rejections = replayed
        .events
        .iter()
        .filter_map(|e| {
            let (reason, message) = e.event.rejection()?;
            Some(RejectionEntry {
                line: lines.get(&e.tx_id).copied(),
                height: e.height,
                tx_index: e.tx_index,
                kind: e.kind.name().to_string(),
                author: e.author.clone(),
                reason: reason.name().to_string(),
                message: message.to_string(),
            })
        })
        .collect();

    let report = RunReport {
        seed: config.seed,
        ticks: sim_report.ticks,
        converged: sim_report.converged,
        states_equal,
        chain_valid: verification.is_valid(),
        chain_error: verification.failure.map(|e| e.to_string()),
        nodes: sim_report.nodes,
        lots: world.lots.len(),
        vials: world.vial_counts(),
        doses_administered: world.doses_administered(),
        alerts,
        certificates,
        rejections,
        client_errors,
    };
    Ok(RunOutcome {
        report,
        ledger,
        world,
        events: replayed.events,
    })
}
