use std::collections::BTreeMap;

use super::{
    day_of, reject, Alert, AppointmentStatus, BeneficiaryRecord, CertificateRef, DoseRecord,
    Event, Location, LotRecord, ProductRecord, RejectReason, Rejection, Report, ReportKind,
    TransportLeg, TransportRecord, WorldState, CRITICAL_ADVERSE_GRADE, DOSES_PER_COURSE,
};
use crate::certificates::Certificate;
use crate::coldchain::{
    evaluate_excursion, expiry_check, transition_phase, ColdChainError, Phase, PhaseEvent,
    Severity, VaccineProduct, VialState, VialStatus,
};
use crate::identity::Role;
use crate::ledger::{Payload, Transaction, TxKind};
use crate::telemetry::{SubjectKind, TelemetryBatch};

type Outcome = Result<Vec<Event>, Rejection>;

/// Runs `f` against a copy of `world` and keeps the copy only on success.
fn atomic(world: &mut WorldState, f: impl FnOnce(&mut WorldState) -> Outcome) -> Outcome {
    let mut next = world.clone();
    let events = f(&mut next)?;
    *world = next;
    Ok(events)
}

pub(super) fn handle(world: &mut WorldState, tx: &Transaction) -> Outcome {
    let author = tx.author.as_str();
    let at = tx.timestamp;
    match &tx.payload {
        Payload::DefineProductRules(p) => define_product(world, author, p),
        Payload::RegisterLot {
            vid,
            product_id,
            vial_count,
            manufactured_at,
        } => register_lot(world, author, vid, product_id, *vial_count, *manufactured_at, at),
        Payload::RecordDispatchTime { vid } => record_dispatch(world, author, vid, at),
        Payload::StartTransport { vid, tid } => link(world, author, vid, tid, at),
        Payload::TelemetryBatch(b) => ingest(world, author, b, at),
        Payload::ReceiveLot {
            vid,
            tid_scanned,
            center_id,
        } => receive(world, author, vid, tid_scanned, center_id, at),
        Payload::StoreLot { vid, unit_id } => store(world, author, vid, unit_id, at),
        Payload::ThawVials { vid, vials } => thaw(world, author, vid, vials.as_deref(), at),
        Payload::PunctureVial { vid, vial_index } => puncture(world, vid, *vial_index, at),
        Payload::Registration {
            bid,
            center_id,
            priority_class,
        } => register(world, tx.kind, author, bid, center_id, *priority_class, at),
        Payload::ScheduleDoses {
            center_id,
            as_of_day,
            daily_capacity,
        } => {
            if center_id != author {
                return reject(RejectReason::Auth, "centers schedule their own doses only");
            }
            if *daily_capacity == 0 {
                return reject(RejectReason::Input, "daily capacity must be positive");
            }
            if !world.centers.contains_key(center_id) {
                return reject(RejectReason::State, format!("unknown center {center_id}"));
            }
            Ok(super::schedule_doses(world, center_id, *as_of_day, *daily_capacity))
        }
        Payload::AdministerDose {
            bid,
            vid,
            vial_index,
        } => administer(world, author, bid, vid, *vial_index, at),
        Payload::ReportSideEffect {
            bid,
            vid,
            description,
        } => report(world, author, bid, vid, None, description, at),
        Payload::ReportAdverseEvent {
            bid,
            vid,
            grade,
            description,
        } => report(world, author, bid, vid, Some(*grade), description, at),
        Payload::IssueCertificate(c) => certificate(world, author, c),
        Payload::Genesis(_) | Payload::Alert(_) => {
            reject(RejectReason::Schema, "system payload in a business transaction")
        }
    }
}

fn lot_mut<'a>(world: &'a mut WorldState, vid: &str) -> Result<&'a mut LotRecord, Rejection> {
    world
        .lots
        .get_mut(vid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown lot {vid}")))
}

fn product_of(world: &WorldState, lot: &LotRecord) -> Result<VaccineProduct, Rejection> {
    world
        .product(&lot.product_id)
        .cloned()
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown product {}", lot.product_id)))
}

/// Applies shelf-life expiry to every vial of the lot as of `at`.
fn expire(lot: &mut LotRecord, product: &VaccineProduct, at: i64, events: &mut Vec<Event>) {
    for v in &mut lot.vials {
        let checked = expiry_check(product, v, at, lot.manufactured_at);
        if checked.status != v.status {
            events.push(Event::VialExpired {
                vid: lot.vid.clone(),
                vial_index: v.vial_id.index,
            });
            *v = checked;
        }
    }
}

/// The vial's surroundings changed; the last reading no longer applies.
fn reset_environment(lot: &mut LotRecord, at: i64) {
    for v in lot.vials.iter_mut().filter(|v| v.status.is_usable()) {
        v.held = None;
        v.in_excursion = false;
        v.last_evaluated_at = v.last_evaluated_at.max(at);
    }
}

fn define_product(world: &mut WorldState, author: &str, p: &VaccineProduct) -> Outcome {
    p.validate()
        .map_err(|e| Rejection::new(RejectReason::Input, e.to_string()))?;
    if world.products.contains_key(&p.product_id) {
        return reject(
            RejectReason::Conflict,
            format!("product {} already defined", p.product_id),
        );
    }
    world.products.insert(
        p.product_id.clone(),
        ProductRecord {
            product: p.clone(),
            defined_by: author.to_string(),
        },
    );
    Ok(vec![Event::ProductDefined {
        product_id: p.product_id.clone(),
    }])
}

fn register_lot(
    world: &mut WorldState,
    author: &str,
    vid: &str,
    product_id: &str,
    vial_count: u32,
    manufactured_at: i64,
    at: i64,
) -> Outcome {
    if vid.is_empty() || vial_count == 0 {
        return reject(RejectReason::Input, "lot needs an id and at least one vial");
    }
    if manufactured_at > at {
        return reject(RejectReason::Input, "manufacture time lies in the future");
    }
    if world.lots.contains_key(vid) {
        return reject(RejectReason::Conflict, format!("lot {vid} already registered"));
    }
    let entry = world
        .products
        .get(product_id)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown product {product_id}")))?;
    if entry.defined_by != author {
        return reject(
            RejectReason::Auth,
            format!("product {product_id} belongs to {}", entry.defined_by),
        );
    }
    let vials = (0..vial_count)
        .map(|i| VialState::new(&entry.product, vid, i, manufactured_at))
        .collect();
    world.lots.insert(
        vid.to_string(),
        LotRecord {
            vid: vid.to_string(),
            product_id: product_id.to_string(),
            manufacturer: author.to_string(),
            vial_count,
            manufactured_at,
            vials,
            location: Location::AtManufacturer,
            dispatched_at: None,
            received_at: None,
            storage_unit: None,
            stored_at: None,
            flagged: None,
        },
    );
    Ok(vec![Event::LotRegistered {
        vid: vid.to_string(),
        product_id: product_id.to_string(),
        vial_count,
    }])
}

fn record_dispatch(world: &mut WorldState, author: &str, vid: &str, at: i64) -> Outcome {
    let lot = lot_mut(world, vid)?;
    if lot.manufacturer != author {
        return reject(RejectReason::Auth, format!("lot {vid} belongs to {}", lot.manufacturer));
    }
    let Location::InTransit { tid } = lot.location.clone() else {
        return reject(RejectReason::State, format!("lot {vid} is not in transit"));
    };
    lot.dispatched_at = Some(at);
    if let Some(leg) = world
        .transports
        .get_mut(&tid)
        .and_then(|t| t.legs.iter_mut().rev().find(|l| l.vid == vid))
    {
        leg.dispatched_at = Some(at);
    }
    Ok(vec![Event::DispatchRecorded {
        vid: vid.to_string(),
    }])
}

/// Links a lot to a vehicle. A lot flagged by a mismatched reception may be
/// relinked while still in transit.
pub fn link_transport(
    world: &mut WorldState,
    distributor: &str,
    vid: &str,
    tid: &str,
    at: i64,
) -> Outcome {
    atomic(world, |w| link(w, distributor, vid, tid, at))
}

fn link(world: &mut WorldState, distributor: &str, vid: &str, tid: &str, at: i64) -> Outcome {
    if tid.is_empty() {
        return reject(RejectReason::Input, "empty vehicle id");
    }
    let lot = world
        .lots
        .get(vid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown lot {vid}")))?;
    let product = product_of(world, lot)?;
    let previous = match &lot.location {
        Location::AtManufacturer => None,
        Location::InTransit { tid: old } if lot.flagged.is_some() => Some(old.clone()),
        Location::InTransit { tid: old } => {
            return reject(RejectReason::State, format!("lot {vid} already in transit on {old}"))
        }
        Location::AtCenter { center_id } => {
            return reject(RejectReason::State, format!("lot {vid} already received at {center_id}"))
        }
    };
    if let Some(t) = world.transports.get(tid) {
        if t.distributor != distributor {
            return reject(
                RejectReason::Conflict,
                format!("vehicle {tid} is operated by {}", t.distributor),
            );
        }
    }
    let mut events = Vec::new();
    let lot = lot_mut(world, vid)?;
    expire(lot, &product, at, &mut events);
    if !lot.vials.iter().any(|v| v.status.is_usable()) {
        return reject(RejectReason::SpoiledLot, format!("lot {vid} has no usable vials"));
    }
    lot.location = Location::InTransit {
        tid: tid.to_string(),
    };
    lot.flagged = None;
    reset_environment(lot, at);
    if let Some(old) = previous {
        if let Some(leg) = world
            .transports
            .get_mut(&old)
            .and_then(|t| t.legs.iter_mut().rev().find(|l| l.vid == vid))
        {
            leg.closed_at = Some(at);
        }
    }
    let record = world
        .transports
        .entry(tid.to_string())
        .or_insert_with(|| TransportRecord {
            tid: tid.to_string(),
            distributor: distributor.to_string(),
            legs: Vec::new(),
            readings: 0,
            last_humidity_pct: None,
        });
    record.legs.push(TransportLeg {
        vid: vid.to_string(),
        started_at: at,
        dispatched_at: None,
        closed_at: None,
        received_by: None,
    });
    events.push(Event::TransportStarted {
        vid: vid.to_string(),
        tid: tid.to_string(),
    });
    Ok(events)
}

/// Reception scan at a center. A scanned vehicle that differs from the
/// linked one flags the lot and leaves it in transit.
pub fn receive_lot(
    world: &mut WorldState,
    author: &str,
    vid: &str,
    tid_scanned: &str,
    center_id: &str,
    at: i64,
) -> Outcome {
    atomic(world, |w| receive(w, author, vid, tid_scanned, center_id, at))
}

fn receive(
    world: &mut WorldState,
    author: &str,
    vid: &str,
    tid_scanned: &str,
    center_id: &str,
    at: i64,
) -> Outcome {
    if center_id != author {
        return reject(RejectReason::Auth, "a center receives lots for itself only");
    }
    if !world.centers.contains_key(center_id) {
        return reject(RejectReason::State, format!("unknown center {center_id}"));
    }
    let lot = lot_mut(world, vid)?;
    let Location::InTransit { tid } = lot.location.clone() else {
        return reject(RejectReason::State, format!("lot {vid} is not in transit"));
    };
    if tid != tid_scanned {
        lot.flagged = Some(format!("scanned {tid_scanned} at {center_id}, linked to {tid}"));
        return Ok(vec![Event::MismatchedTransport {
            vid: vid.to_string(),
            linked_tid: tid,
            scanned_tid: tid_scanned.to_string(),
            center_id: center_id.to_string(),
        }]);
    }
    lot.location = Location::AtCenter {
        center_id: center_id.to_string(),
    };
    lot.received_at = Some(at);
    reset_environment(lot, at);
    if let Some(leg) = world
        .transports
        .get_mut(&tid)
        .and_then(|t| t.legs.iter_mut().rev().find(|l| l.vid == vid))
    {
        leg.closed_at = Some(at);
        leg.received_by = Some(center_id.to_string());
    }
    world
        .centers
        .get_mut(center_id)
        .expect("center checked above")
        .lots
        .insert(vid.to_string());
    Ok(vec![Event::LotReceived {
        vid: vid.to_string(),
        tid,
        center_id: center_id.to_string(),
    }])
}

fn store(world: &mut WorldState, author: &str, vid: &str, unit_id: &str, at: i64) -> Outcome {
    if unit_id.is_empty() {
        return reject(RejectReason::Input, "empty storage unit id");
    }
    if let Some(owner) = world
        .centers
        .values()
        .find(|c| c.center_id != author && c.units.contains_key(unit_id))
    {
        return reject(
            RejectReason::Conflict,
            format!("unit {unit_id} belongs to {}", owner.center_id),
        );
    }
    let lot = lot_mut(world, vid)?;
    if lot.center() != Some(author) {
        return reject(RejectReason::State, format!("lot {vid} is not at {author}"));
    }
    let previous = lot.storage_unit.replace(unit_id.to_string());
    lot.stored_at = Some(at);
    reset_environment(lot, at);
    let center = world.centers.get_mut(author).expect("lot is at this center");
    if let Some(prev) = previous {
        if let Some(set) = center.units.get_mut(&prev) {
            set.remove(vid);
        }
    }
    center
        .units
        .entry(unit_id.to_string())
        .or_default()
        .insert(vid.to_string());
    Ok(vec![Event::LotStored {
        vid: vid.to_string(),
        unit_id: unit_id.to_string(),
    }])
}

fn cold_chain(e: ColdChainError) -> Rejection {
    Rejection::new(RejectReason::State, e.to_string())
}

fn thaw(
    world: &mut WorldState,
    author: &str,
    vid: &str,
    vials: Option<&[u32]>,
    at: i64,
) -> Outcome {
    let lot = world
        .lots
        .get(vid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown lot {vid}")))?;
    let product = product_of(world, lot)?;
    let lot = lot_mut(world, vid)?;
    if lot.center() != Some(author) {
        return reject(RejectReason::State, format!("lot {vid} is not at {author}"));
    }
    if !product.has_frozen_phase() {
        return Err(cold_chain(ColdChainError::NoFrozenPhase(product.product_id.clone())));
    }
    let mut events = Vec::new();
    expire(lot, &product, at, &mut events);
    let targets: Vec<u32> = match vials {
        Some(list) => list.to_vec(),
        None => lot
            .vials
            .iter()
            .filter(|v| v.status.is_usable() && v.phase == Phase::FrozenPreUse)
            .map(|v| v.vial_id.index)
            .collect(),
    };
    if targets.is_empty() {
        return reject(RejectReason::State, format!("lot {vid} has no frozen usable vials"));
    }
    for &i in &targets {
        let v = lot
            .vials
            .get_mut(i as usize)
            .ok_or_else(|| Rejection::new(RejectReason::Input, format!("lot {vid} has no vial {i}")))?;
        *v = transition_phase(&product, v, PhaseEvent::Thaw, at).map_err(cold_chain)?;
    }
    events.push(Event::VialsThawed {
        vid: vid.to_string(),
        vials: targets,
    });
    Ok(events)
}

fn puncture(world: &mut WorldState, vid: &str, index: u32, at: i64) -> Outcome {
    let lot = world
        .lots
        .get(vid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown lot {vid}")))?;
    let product = product_of(world, lot)?;
    let lot = lot_mut(world, vid)?;
    if lot.center().is_none() {
        return reject(RejectReason::State, format!("lot {vid} is not at a center"));
    }
    let mut events = Vec::new();
    expire(lot, &product, at, &mut events);
    let v = lot
        .vials
        .get_mut(index as usize)
        .ok_or_else(|| Rejection::new(RejectReason::Input, format!("lot {vid} has no vial {index}")))?;
    *v = transition_phase(&product, v, PhaseEvent::Puncture, at).map_err(cold_chain)?;
    events.push(Event::VialPunctured {
        vid: vid.to_string(),
        vial_index: index,
    });
    Ok(events)
}

fn register(
    world: &mut WorldState,
    kind: TxKind,
    author: &str,
    bid: &str,
    center_id: &str,
    priority_class: u8,
    at: i64,
) -> Outcome {
    if bid.is_empty() {
        return reject(RejectReason::Input, "empty beneficiary id");
    }
    if kind == TxKind::RegisterSelf && bid != author {
        return reject(RejectReason::Auth, "beneficiaries register themselves only");
    }
    if let Some(role) = world.role_of(bid) {
        if role != Role::Beneficiary {
            return reject(RejectReason::Input, format!("{bid} is a {role}, not a beneficiary"));
        }
    }
    if !world.centers.contains_key(center_id) {
        return reject(RejectReason::State, format!("unknown center {center_id}"));
    }
    if world.beneficiaries.contains_key(bid) {
        return reject(RejectReason::Conflict, format!("{bid} is already registered"));
    }
    world.beneficiaries.insert(
        bid.to_string(),
        BeneficiaryRecord {
            bid: bid.to_string(),
            center_id: center_id.to_string(),
            priority_class,
            requested_at: at,
            registered_by: author.to_string(),
            doses: Vec::new(),
        },
    );
    Ok(vec![Event::BeneficiaryRegistered {
        bid: bid.to_string(),
        center_id: center_id.to_string(),
    }])
}

/// Records a dose. The vial must be usable and punctured, the beneficiary
/// must hold a planned appointment for this dose on this day at the lot's
/// center, and a second dose must use the first dose's product.
pub fn administer_dose(
    world: &mut WorldState,
    doctor: &str,
    bid: &str,
    vid: &str,
    vial_index: u32,
    at: i64,
) -> Outcome {
    atomic(world, |w| administer(w, doctor, bid, vid, vial_index, at))
}

fn administer(
    world: &mut WorldState,
    doctor: &str,
    bid: &str,
    vid: &str,
    vial_index: u32,
    at: i64,
) -> Outcome {
    let beneficiary = world
        .beneficiaries
        .get(bid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("{bid} is not registered")))?;
    let dose_number = beneficiary.doses.len() as u8 + 1;
    let first_product = beneficiary.doses.first().map(|d| d.product_id.clone());
    let lot = world
        .lots
        .get(vid)
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("unknown lot {vid}")))?;
    let product = product_of(world, lot)?;
    let center = lot
        .center()
        .ok_or_else(|| Rejection::new(RejectReason::State, format!("lot {vid} is not at a center")))?
        .to_string();
    let vial = lot
        .vials
        .get(vial_index as usize)
        .ok_or_else(|| Rejection::new(RejectReason::Input, format!("lot {vid} has no vial {vial_index}")))?;
    if vial.doses_administered >= product.doses_per_vial {
        return reject(
            RejectReason::Inventory,
            format!("vial {} has no doses left", vial.vial_id),
        );
    }
    let vial = expiry_check(&product, vial, at, lot.manufactured_at);
    if !vial.status.is_usable() || vial.phase != Phase::Punctured {
        return reject(
            RejectReason::Safety,
            format!(
                "vial {} is {} in {} phase",
                vial.vial_id,
                vial.status.label(),
                vial.phase
            ),
        );
    }
    if dose_number > DOSES_PER_COURSE {
        return reject(RejectReason::Eligibility, format!("{bid} has completed the course"));
    }
    let day = day_of(at);
    let Some(appt) = world.appointments.iter().position(|a| {
        a.bid == bid
            && a.dose_number == dose_number
            && a.status == AppointmentStatus::Planned
            && a.center_id == center
            && a.vid == vid
            && a.day == day
    }) else {
        return reject(
            RejectReason::Scheduling,
            format!("no planned appointment for {bid} dose {dose_number} with {vid} on day {day}"),
        );
    };
    if let Some(first) = first_product {
        if first != product.product_id {
            return reject(
                RejectReason::ProductMismatch,
                format!("dose 1 was {first}, vial holds {}", product.product_id),
            );
        }
    }

    world.appointments[appt].status = AppointmentStatus::Completed;
    let lot = lot_mut(world, vid)?;
    let v = &mut lot.vials[vial_index as usize];
    v.doses_administered += 1;
    if v.doses_administered == product.doses_per_vial {
        v.status = VialStatus::Administered;
    }
    world
        .beneficiaries
        .get_mut(bid)
        .expect("checked above")
        .doses
        .push(DoseRecord {
            dose_number,
            vid: vid.to_string(),
            vial_index,
            product_id: product.product_id.clone(),
            at,
            day,
            doctor: doctor.to_string(),
        });
    Ok(vec![Event::DoseAdministered {
        bid: bid.to_string(),
        vid: vid.to_string(),
        vial_index,
        dose_number,
    }])
}

/// Routes a batch to every usable vial in the vehicle or storage unit and
/// records the resulting alerts.
pub fn ingest_telemetry(
    world: &mut WorldState,
    author: &str,
    batch: &TelemetryBatch,
    at: i64,
) -> Outcome {
    atomic(world, |w| ingest(w, author, batch, at))
}

fn ingest(world: &mut WorldState, author: &str, batch: &TelemetryBatch, at: i64) -> Outcome {
    let id = batch.subject.id.as_str();
    let vids: Vec<String> = match batch.subject.kind {
        SubjectKind::Transport => {
            let Some(t) = world.transports.get_mut(id) else {
                return reject(RejectReason::Routing, format!("unknown vehicle {id}"));
            };
            t.readings += batch.readings.len() as u64;
            if let Some(h) = batch.readings.iter().rev().find_map(|r| r.humidity_pct) {
                t.last_humidity_pct = Some(h);
            }
            let vids: Vec<String> = world
                .lots
                .values()
                .filter(|l| matches!(&l.location, Location::InTransit { tid } if tid == id))
                .map(|l| l.vid.clone())
                .collect();
            if vids.is_empty() {
                return reject(RejectReason::Routing, format!("no lot is linked to vehicle {id}"));
            }
            vids
        }
        SubjectKind::StorageUnit => {
            let Some(center) = world.centers.values().find(|c| c.units.contains_key(id)) else {
                return reject(RejectReason::Routing, format!("unknown storage unit {id}"));
            };
            if center.center_id != author {
                return reject(
                    RejectReason::Auth,
                    format!("unit {id} belongs to {}", center.center_id),
                );
            }
            center.units[id].iter().cloned().collect()
        }
    };

    let mut events = Vec::new();
    let mut alerts = Vec::new();
    let mut touched = 0usize;
    for vid in vids {
        let lot = world.lots.get(&vid).expect("routed lots exist");
        let product = product_of(world, lot)?;
        let lot = world.lots.get_mut(&vid).expect("routed lots exist");
        expire(lot, &product, at, &mut events);
        let mut grouped: BTreeMap<(i64, Severity, String), Vec<u32>> = BTreeMap::new();
        let mut order = Vec::new();
        for v in lot.vials.iter_mut().filter(|v| v.status.is_usable()) {
            let start = batch
                .readings
                .partition_point(|r| r.timestamp < v.last_evaluated_at);
            let readings = &batch.readings[start..];
            if readings.is_empty() {
                continue;
            }
            touched += 1;
            let res = evaluate_excursion(&product, v, readings)
                .map_err(|e| Rejection::new(RejectReason::Input, e.to_string()))?;
            *v = res.updated_state;
            for a in res.alerts {
                let key = (a.timestamp, a.severity, a.message);
                let list = grouped.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                });
                list.push(v.vial_id.index);
            }
        }
        let mut lot_alerts: Vec<Alert> = order
            .into_iter()
            .map(|key| {
                let vials = grouped.remove(&key).unwrap_or_default();
                Alert {
                    timestamp: key.0,
                    severity: key.1,
                    subject: vid.clone(),
                    vials,
                    message: key.2,
                }
            })
            .collect();
        lot_alerts.sort_by_key(|a| a.timestamp);
        alerts.extend(lot_alerts);
    }
    alerts.sort_by_key(|a| a.timestamp);
    for a in alerts {
        world.alerts.push(a.clone());
        events.push(Event::AlertRaised(a));
    }
    events.push(Event::TelemetryIngested {
        subject: batch.subject.to_string(),
        readings: batch.readings.len(),
        vials: touched,
    });
    Ok(events)
}

pub fn report_side_effect(
    world: &mut WorldState,
    author: &str,
    bid: &str,
    vid: &str,
    description: &str,
    at: i64,
) -> Outcome {
    atomic(world, |w| report(w, author, bid, vid, None, description, at))
}

/// Grades run 1 to 5; grade 4 and above also raises a critical alert on
/// the lot.
pub fn report_adverse_event(
    world: &mut WorldState,
    author: &str,
    bid: &str,
    vid: &str,
    grade: u8,
    description: &str,
    at: i64,
) -> Outcome {
    atomic(world, |w| report(w, author, bid, vid, Some(grade), description, at))
}

fn report(
    world: &mut WorldState,
    author: &str,
    bid: &str,
    vid: &str,
    grade: Option<u8>,
    description: &str,
    at: i64,
) -> Outcome {
    if bid != author {
        return reject(RejectReason::Auth, "beneficiaries report for themselves only");
    }
    if let Some(g) = grade {
        if !(1..=5).contains(&g) {
            return reject(RejectReason::Input, format!("grade {g} is outside 1-5"));
        }
    }
    let linked = world
        .beneficiaries
        .get(bid)
        .is_some_and(|b| b.doses.iter().any(|d| d.vid == vid));
    if !linked {
        return reject(RejectReason::Linkage, format!("{bid} has no dose from {vid}"));
    }
    world.reports.push(Report {
        kind: grade.map_or(ReportKind::SideEffect, |grade| ReportKind::AdverseEvent { grade }),
        bid: bid.to_string(),
        vid: vid.to_string(),
        reported_at: at,
        description: description.to_string(),
    });
    let Some(grade) = grade else {
        return Ok(vec![Event::SideEffectReported {
            bid: bid.to_string(),
            vid: vid.to_string(),
        }]);
    };
    let mut events = vec![Event::AdverseEventReported {
        bid: bid.to_string(),
        vid: vid.to_string(),
        grade,
    }];
    if grade >= CRITICAL_ADVERSE_GRADE {
        let alert = Alert {
            timestamp: at,
            severity: Severity::Critical,
            subject: vid.to_string(),
            vials: Vec::new(),
            message: format!("grade {grade} adverse event reported by {bid}"),
        };
        world.alerts.push(alert.clone());
        events.push(Event::AlertRaised(alert));
    }
    Ok(events)
}

fn certificate(world: &mut WorldState, author: &str, cert: &Certificate) -> Outcome {
    if cert.issuer != author {
        return reject(RejectReason::Auth, "certificate issuer differs from author");
    }
    let key = world
        .actors
        .get(author)
        .map(|a| a.public_key)
        .ok_or_else(|| Rejection::new(RejectReason::Auth, format!("unknown issuer {author}")))?;
    if !cert.verify_signature(&key) {
        return reject(RejectReason::Auth, "certificate signature does not verify");
    }
    let dose = world
        .beneficiaries
        .get(&cert.bid)
        .and_then(|b| b.doses.last())
        .ok_or_else(|| {
            Rejection::new(RejectReason::Eligibility, format!("{} has no completed dose", cert.bid))
        })?;
    if dose.dose_number != cert.dose_number
        || dose.product_id != cert.product_id
        || dose.day != cert.vaccination_day
    {
        return reject(
            RejectReason::Eligibility,
            format!("certificate does not match {}'s latest dose", cert.bid),
        );
    }
    if world
        .certificates
        .iter()
        .any(|c| c.bid == cert.bid && c.dose_number == cert.dose_number)
    {
        return reject(
            RejectReason::Conflict,
            format!("certificate for {} dose {} already issued", cert.bid, cert.dose_number),
        );
    }
    world.certificates.push(CertificateRef {
        bid: cert.bid.clone(),
        dose_number: cert.dose_number,
        kind: cert.kind(),
        product_id: cert.product_id.clone(),
        vaccination_day: cert.vaccination_day,
        issuer: author.to_string(),
    });
    Ok(vec![Event::CertificateIssued {
        bid: cert.bid.clone(),
        dose_number: cert.dose_number,
        kind: cert.kind(),
    }])
}
