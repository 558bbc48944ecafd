//! Deterministic contract state machine: validates and applies every
//! transaction kind against the shared business state.

mod block;
mod dispatch;
mod handlers;
mod schedule;

pub use block::{
    alert_transaction, build_block_body, execute_block, replay, ExecError, LoggedEvent, Replay,
};
pub use dispatch::{plan_dispatch, DispatchError, DispatchOrder, DispatchRequest};
pub use handlers::{
    administer_dose, ingest_telemetry, link_transport, receive_lot, report_adverse_event,
    report_side_effect,
};
pub use schedule::schedule_doses;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::certificates::CertificateKind;
use crate::coldchain::{Severity, VaccineProduct, VialState, VialStatus};
use crate::identity::{ActorRecord, PermissionMatrix, Role, CONTRACT_ACTOR_ID};
use crate::ledger::{Digest, Payload, Transaction, TxKind};

/// Every product in scope is a two-dose regimen.
pub const DOSES_PER_COURSE: u8 = 2;

/// Adverse events at or above this grade raise a critical alert.
pub const CRITICAL_ADVERSE_GRADE: u8 = 4;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub actors: BTreeMap<String, ActorRecord>,
    pub validators: Vec<String>,
    pub products: BTreeMap<String, ProductRecord>,
    pub lots: BTreeMap<String, LotRecord>,
    pub transports: BTreeMap<String, TransportRecord>,
    pub beneficiaries: BTreeMap<String, BeneficiaryRecord>,
    pub centers: BTreeMap<String, CenterInventory>,
    pub appointments: Vec<Appointment>,
    pub reports: Vec<Report>,
    pub alerts: Vec<Alert>,
    pub certificates: Vec<CertificateRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product: VaccineProduct,
    pub defined_by: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Location {
    AtManufacturer,
    InTransit { tid: String },
    AtCenter { center_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotRecord {
    pub vid: String,
    pub product_id: String,
    pub manufacturer: String,
    pub vial_count: u32,
    pub manufactured_at: i64,
    pub vials: Vec<VialState>,
    pub location: Location,
    pub dispatched_at: Option<i64>,
    pub received_at: Option<i64>,
    pub storage_unit: Option<String>,
    pub stored_at: Option<i64>,
    /// Set by a mismatched reception scan; cleared by relinking.
    pub flagged: Option<String>,
}

impl LotRecord {
    pub fn center(&self) -> Option<&str> {
        match &self.location {
            Location::AtCenter { center_id } => Some(center_id),
            _ => None,
        }
    }

    pub fn usable_doses(&self, product: &VaccineProduct) -> u32 {
        self.vials
            .iter()
            .filter(|v| v.status.is_usable())
            .map(|v| v.doses_remaining(product))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportLeg {
    pub vid: String,
    pub started_at: i64,
    pub dispatched_at: Option<i64>,
    pub closed_at: Option<i64>,
    pub received_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportRecord {
    pub tid: String,
    pub distributor: String,
    pub legs: Vec<TransportLeg>,
    pub readings: u64,
    pub last_humidity_pct: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseRecord {
    pub dose_number: u8,
    pub vid: String,
    pub vial_index: u32,
    pub product_id: String,
    pub at: i64,
    pub day: i64,
    pub doctor: String,
}

/// A registered beneficiary; the registration doubles as the open request
/// (BRR) for the next dose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeneficiaryRecord {
    pub bid: String,
    pub center_id: String,
    pub priority_class: u8,
    pub requested_at: i64,
    pub registered_by: String,
    pub doses: Vec<DoseRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterInventory {
    pub center_id: String,
    pub lots: BTreeSet<String>,
    /// Storage unit id to the lots it holds.
    pub units: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppointmentStatus {
    Planned,
    Completed,
    Missed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appointment {
    pub bid: String,
    pub vid: String,
    pub center_id: String,
    pub dose_number: u8,
    /// Days since the Unix epoch (UTC).
    pub day: i64,
    pub status: AppointmentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportKind {
    SideEffect,
    AdverseEvent { grade: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub bid: String,
    pub vid: String,
    pub reported_at: i64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub timestamp: i64,
    pub severity: Severity,
    /// VID, TID or storage-unit id.
    pub subject: String,
    /// Vial indices the alert applies to, when the subject is a lot.
    pub vials: Vec<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRef {
    pub bid: String,
    pub dose_number: u8,
    pub kind: CertificateKind,
    pub product_id: String,
    pub vaccination_day: i64,
    pub issuer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Auth,
    Schema,
    State,
    SpoiledLot,
    Safety,
    Scheduling,
    Inventory,
    Linkage,
    Conflict,
    Routing,
    Eligibility,
    Input,
    ProductMismatch,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::Auth => "auth",
            RejectReason::Schema => "schema",
            RejectReason::State => "state",
            RejectReason::SpoiledLot => "spoiled-lot",
            RejectReason::Safety => "safety",
            RejectReason::Scheduling => "scheduling",
            RejectReason::Inventory => "inventory",
            RejectReason::Linkage => "linkage",
            RejectReason::Conflict => "conflict",
            RejectReason::Routing => "routing",
            RejectReason::Eligibility => "eligibility",
            RejectReason::Input => "input",
            RejectReason::ProductMismatch => "product-mismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{reason}: {message}")]
pub struct Rejection {
    pub reason: RejectReason,
    pub message: String,
}

impl Rejection {
    pub fn new(reason: RejectReason, message: impl Into<String>) -> Self {
        Self {
            reason,
            message: message.into(),
        }
    }
}

pub(crate) fn reject<T>(reason: RejectReason, message: impl Into<String>) -> Result<T, Rejection> {
    Err(Rejection::new(reason, message))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ChainInitialized {
        validators: usize,
        actors: usize,
    },
    ProductDefined {
        product_id: String,
    },
    LotRegistered {
        vid: String,
        product_id: String,
        vial_count: u32,
    },
    DispatchRecorded {
        vid: String,
    },
    TransportStarted {
        vid: String,
        tid: String,
    },
    TelemetryIngested {
        subject: String,
        readings: usize,
        vials: usize,
    },
    AlertRaised(Alert),
    VialExpired {
        vid: String,
        vial_index: u32,
    },
    LotReceived {
        vid: String,
        tid: String,
        center_id: String,
    },
    MismatchedTransport {
        vid: String,
        linked_tid: String,
        scanned_tid: String,
        center_id: String,
    },
    LotStored {
        vid: String,
        unit_id: String,
    },
    VialsThawed {
        vid: String,
        vials: Vec<u32>,
    },
    VialPunctured {
        vid: String,
        vial_index: u32,
    },
    BeneficiaryRegistered {
        bid: String,
        center_id: String,
    },
    AppointmentMissed {
        bid: String,
        dose_number: u8,
        day: i64,
    },
    AppointmentScheduled {
        bid: String,
        vid: String,
        dose_number: u8,
        day: i64,
    },
    Unassigned {
        bid: String,
        dose_number: u8,
        reason: String,
    },
    DoseAdministered {
        bid: String,
        vid: String,
        vial_index: u32,
        dose_number: u8,
    },
    SideEffectReported {
        bid: String,
        vid: String,
    },
    AdverseEventReported {
        bid: String,
        vid: String,
        grade: u8,
    },
    CertificateIssued {
        bid: String,
        dose_number: u8,
        kind: CertificateKind,
    },
    AlertsRecorded {
        origin: Digest,
        count: usize,
    },
    Rejected {
        kind: TxKind,
        author: String,
        reason: RejectReason,
        message: String,
    },
}

impl Event {
    pub fn alert(&self) -> Option<&Alert> {
        match self {
            Event::AlertRaised(a) => Some(a),
            _ => None,
        }
    }

    pub fn rejection(&self) -> Option<(RejectReason, &str)> {
        match self {
            Event::Rejected {
                reason, message, ..
            } => Some((*reason, message)),
            _ => None,
        }
    }
}

/// Whole days since the Unix epoch (UTC) for a timestamp in seconds.
pub fn day_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(86_400)
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Canonical serialized form; replicas compare these bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("world state serializes")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn product(&self, product_id: &str) -> Option<&VaccineProduct> {
        self.products.get(product_id).map(|p| &p.product)
    }

    pub fn role_of(&self, actor_id: &str) -> Option<Role> {
        self.actors.get(actor_id).map(|a| a.role)
    }

    pub fn vial_counts(&self) -> VialCounts {
        let mut c = VialCounts::default();
        for lot in self.lots.values() {
            for v in &lot.vials {
                match v.status {
                    VialStatus::Usable => c.usable += 1,
                    VialStatus::Spoiled(_) => c.spoiled += 1,
                    VialStatus::Administered => c.administered += 1,
                    VialStatus::Expired => c.expired += 1,
                }
            }
        }
        c
    }

    pub fn doses_administered(&self) -> usize {
        self.beneficiaries.values().map(|b| b.doses.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VialCounts {
    pub usable: usize,
    pub spoiled: usize,
    pub administered: usize,
    pub expired: usize,
}

/// Applies one transaction. A rejected transaction leaves `world` unchanged
/// and yields a single `Rejected` event.
pub fn apply_transaction(
    world: &mut WorldState,
    tx: &Transaction,
    matrix: &PermissionMatrix,
) -> Vec<Event> {
    let mut next = world.clone();
    match dispatch(&mut next, tx, matrix) {
        Ok(events) => {
            *world = next;
            events
        }
        Err(r) => vec![Event::Rejected {
            kind: tx.kind,
            author: tx.author.clone(),
            reason: r.reason,
            message: r.message,
        }],
    }
}

fn dispatch(
    world: &mut WorldState,
    tx: &Transaction,
    matrix: &PermissionMatrix,
) -> Result<Vec<Event>, Rejection> {
    if !tx.payload.matches(tx.kind) {
        return reject(
            RejectReason::Schema,
            format!("payload does not belong to kind {}", tx.kind),
        );
    }
    if let Payload::Genesis(g) = &tx.payload {
        if !world.actors.is_empty() {
            return reject(RejectReason::State, "chain already initialized");
        }
        for a in &g.actors {
            world.actors.insert(a.actor_id.clone(), a.clone());
            if a.role == Role::MedicalCenter {
                world.centers.insert(
                    a.actor_id.clone(),
                    CenterInventory {
                        center_id: a.actor_id.clone(),
                        ..CenterInventory::default()
                    },
                );
            }
        }
        world.validators = g.validators.clone();
        return Ok(vec![Event::ChainInitialized {
            validators: g.validators.len(),
            actors: g.actors.len(),
        }]);
    }
    let role = world
        .role_of(&tx.author)
        .ok_or_else(|| Rejection::new(RejectReason::Auth, format!("unknown author {}", tx.author)))?;
    if let Payload::Alert(rec) = &tx.payload {
        if tx.author != CONTRACT_ACTOR_ID {
            return reject(RejectReason::Auth, "alerts are written by the contract only");
        }
        return Ok(vec![Event::AlertsRecorded {
            origin: rec.origin,
            count: rec.alerts.len(),
        }]);
    }
    if !matrix.authorize(role, tx.kind) {
        return reject(
            RejectReason::Auth,
            format!("role {role} may not submit {}", tx.kind),
        );
    }
    handlers::handle(world, tx)
}
