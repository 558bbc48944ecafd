//! Kind-specific transaction bodies and their canonical encodings.
//!
//! Every payload starts with its own variant tag, so a payload that does not
//! belong to the transaction's kind is detected at apply time.

use serde::{Deserialize, Serialize};

use super::{Digest, TxKind};
use crate::certificates::Certificate;
use crate::codec::{Canonical, DecodeError, EncodeError, Reader, Writer};
use crate::coldchain::{
    ConditionRule, PhaseRules, PhaseTable, Severity, TempWindow, VaccineProduct,
};
use crate::contract::Alert;
use crate::identity::{ActorRecord, PublicKey, Role};
use crate::telemetry::TelemetryBatch;

/// Chain parameters carried by the single transaction of block 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_id: String,
    pub hash_algorithm: u8,
    /// Proposer rotation order.
    pub validators: Vec<String>,
    pub actors: Vec<ActorRecord>,
}

impl GenesisConfig {
    pub fn actor(&self, actor_id: &str) -> Option<&ActorRecord> {
        self.actors.iter().find(|a| a.actor_id == actor_id)
    }
}

/// Alerts derived by the contract from the transaction `origin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub origin: Digest,
    pub alerts: Vec<Alert>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Genesis(GenesisConfig),
    DefineProductRules(VaccineProduct),
    RegisterLot {
        vid: String,
        product_id: String,
        vial_count: u32,
        manufactured_at: i64,
    },
    RecordDispatchTime {
        vid: String,
    },
    StartTransport {
        vid: String,
        tid: String,
    },
    TelemetryBatch(TelemetryBatch),
    ReceiveLot {
        vid: String,
        tid_scanned: String,
        center_id: String,
    },
    StoreLot {
        vid: String,
        unit_id: String,
    },
    /// `vials = None` thaws every usable vial of the lot.
    ThawVials {
        vid: String,
        vials: Option<Vec<u32>>,
    },
    PunctureVial {
        vid: String,
        vial_index: u32,
    },
    /// Shared by `RegisterBeneficiary` and `RegisterSelf`.
    Registration {
        bid: String,
        center_id: String,
        priority_class: u8,
    },
    ScheduleDoses {
        center_id: String,
        as_of_day: i64,
        daily_capacity: u32,
    },
    AdministerDose {
        bid: String,
        vid: String,
        vial_index: u32,
    },
    ReportSideEffect {
        bid: String,
        vid: String,
        description: String,
    },
    ReportAdverseEvent {
        bid: String,
        vid: String,
        grade: u8,
        description: String,
    },
    IssueCertificate(Certificate),
    Alert(AlertRecord),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::Genesis(_) => 0,
            Payload::DefineProductRules(_) => 1,
            Payload::RegisterLot { .. } => 2,
            Payload::RecordDispatchTime { .. } => 3,
            Payload::StartTransport { .. } => 4,
            Payload::TelemetryBatch(_) => 5,
            Payload::ReceiveLot { .. } => 6,
            Payload::StoreLot { .. } => 7,
            Payload::ThawVials { .. } => 8,
            Payload::PunctureVial { .. } => 9,
            Payload::Registration { .. } => 10,
            Payload::ScheduleDoses { .. } => 11,
            Payload::AdministerDose { .. } => 12,
            Payload::ReportSideEffect { .. } => 13,
            Payload::ReportAdverseEvent { .. } => 14,
            Payload::IssueCertificate(_) => 15,
            Payload::Alert(_) => 16,
        }
    }

    /// Whether this payload schema belongs to `kind`.
    pub fn matches(&self, kind: TxKind) -> bool {
        match (self, kind) {
            (Payload::Genesis(_), TxKind::Genesis)
            | (Payload::DefineProductRules(_), TxKind::DefineProductRules)
            | (Payload::RegisterLot { .. }, TxKind::RegisterLot)
            | (Payload::RecordDispatchTime { .. }, TxKind::RecordDispatchTime)
            | (Payload::StartTransport { .. }, TxKind::StartTransport)
            | (Payload::ReceiveLot { .. }, TxKind::ReceiveLot)
            | (Payload::StoreLot { .. }, TxKind::StoreLot)
            | (Payload::ThawVials { .. }, TxKind::ThawVials)
            | (Payload::PunctureVial { .. }, TxKind::PunctureVial)
            | (Payload::Registration { .. }, TxKind::RegisterBeneficiary)
            | (Payload::Registration { .. }, TxKind::RegisterSelf)
            | (Payload::ScheduleDoses { .. }, TxKind::ScheduleDoses)
            | (Payload::AdministerDose { .. }, TxKind::AdministerDose)
            | (Payload::ReportSideEffect { .. }, TxKind::ReportSideEffect)
            | (Payload::ReportAdverseEvent { .. }, TxKind::ReportAdverseEvent)
            | (Payload::IssueCertificate(_), TxKind::IssueCertificateRequest)
            | (Payload::Alert(_), TxKind::Alert) => true,
            (Payload::TelemetryBatch(b), k) => b.kind() == k,
            _ => false,
        }
    }

    /// Identifiers (VID, TID, BID, unit, center, product) this payload
    /// refers to, for subject queries.
    pub fn subjects(&self) -> Vec<&str> {
        match self {
            Payload::Genesis(_) => vec![],
            Payload::DefineProductRules(p) => vec![&p.product_id],
            Payload::RegisterLot {
                vid, product_id, ..
            } => vec![vid, product_id],
            Payload::RecordDispatchTime { vid } => vec![vid],
            Payload::StartTransport { vid, tid } => vec![vid, tid],
            Payload::TelemetryBatch(b) => vec![&b.subject.id],
            Payload::ReceiveLot {
                vid,
                tid_scanned,
                center_id,
            } => vec![vid, tid_scanned, center_id],
            Payload::StoreLot { vid, unit_id } => vec![vid, unit_id],
            Payload::ThawVials { vid, .. } | Payload::PunctureVial { vid, .. } => vec![vid],
            Payload::Registration { bid, center_id, .. } => vec![bid, center_id],
            Payload::ScheduleDoses { center_id, .. } => vec![center_id],
            Payload::AdministerDose { bid, vid, .. }
            | Payload::ReportSideEffect { bid, vid, .. }
            | Payload::ReportAdverseEvent { bid, vid, .. } => vec![bid, vid],
            Payload::IssueCertificate(c) => vec![&c.bid, &c.product_id],
            Payload::Alert(a) => a.alerts.iter().map(|x| x.subject.as_str()).collect(),
        }
    }
}

fn opt_i32(w: &mut Writer, v: Option<i32>) {
    match v {
        Some(x) => {
            w.u8(1);
            w.i32(x);
        }
        None => w.u8(0),
    }
}

fn read_opt_i32(r: &mut Reader<'_>) -> Result<Option<i32>, DecodeError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(r.i32()?)),
        _ => Err(r.invalid("option flag")),
    }
}

fn opt_u64(w: &mut Writer, v: Option<u64>) {
    match v {
        Some(x) => {
            w.u8(1);
            w.u64(x);
        }
        None => w.u8(0),
    }
}

fn read_opt_u64(r: &mut Reader<'_>) -> Result<Option<u64>, DecodeError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(r.u64()?)),
        _ => Err(r.invalid("option flag")),
    }
}

pub(crate) fn encode_product(w: &mut Writer, p: &VaccineProduct) -> Result<(), EncodeError> {
    w.str("product_id", &p.product_id)?;
    w.str("display_name", &p.display_name)?;
    opt_i32(w, p.freeze_forbidden_below_decic);
    w.bool(p.light_protected);
    w.u32(p.doses_per_vial);
    w.u32(p.dose_interval_days);
    w.u32(p.shelf_life_days);
    for phase in [
        &p.phases.frozen_pre_use,
        &p.phases.thawed_unpunctured,
        &p.phases.punctured,
    ] {
        let Some(rules) = phase else {
            w.u8(0);
            continue;
        };
        w.u8(1);
        w.count("rules", rules.rules.len())?;
        for r in &rules.rules {
            w.i32(r.window.low_decic);
            w.i32(r.window.high_decic);
            opt_u64(w, r.budget_seconds);
        }
        opt_i32(w, rules.hard_floor_decic);
        opt_i32(w, rules.hard_ceiling_decic);
        w.u64(rules.grace_seconds);
        w.u64(rules.light_budget_seconds);
    }
    Ok(())
}

pub(crate) fn decode_product(r: &mut Reader<'_>) -> Result<VaccineProduct, DecodeError> {
    let product_id = r.string()?;
    let display_name = r.string()?;
    let freeze_forbidden_below_decic = read_opt_i32(r)?;
    let light_protected = r.bool()?;
    let doses_per_vial = r.u32()?;
    let dose_interval_days = r.u32()?;
    let shelf_life_days = r.u32()?;
    let mut phases = [None, None, None];
    for slot in &mut phases {
        match r.u8()? {
            0 => continue,
            1 => {}
            _ => return Err(r.invalid("phase flag")),
        }
        let n = r.count(9)?;
        let mut rules = Vec::with_capacity(n);
        for _ in 0..n {
            let low = r.i32()?;
            let high = r.i32()?;
            rules.push(ConditionRule {
                window: TempWindow::new(low, high),
                budget_seconds: read_opt_u64(r)?,
            });
        }
        *slot = Some(PhaseRules {
            rules,
            hard_floor_decic: read_opt_i32(r)?,
            hard_ceiling_decic: read_opt_i32(r)?,
            grace_seconds: r.u64()?,
            light_budget_seconds: r.u64()?,
        });
    }
    let [frozen_pre_use, thawed_unpunctured, punctured] = phases;
    Ok(VaccineProduct {
        product_id,
        display_name,
        freeze_forbidden_below_decic,
        light_protected,
        doses_per_vial,
        dose_interval_days,
        shelf_life_days,
        phases: PhaseTable {
            frozen_pre_use,
            thawed_unpunctured,
            punctured,
        },
    })
}

fn encode_alert(w: &mut Writer, a: &Alert) -> Result<(), EncodeError> {
    w.timestamp("alert.timestamp", a.timestamp)?;
    w.u8(match a.severity {
        Severity::Warning => 0,
        Severity::Critical => 1,
    });
    w.str("alert.subject", &a.subject)?;
    w.count("alert.vials", a.vials.len())?;
    for v in &a.vials {
        w.u32(*v);
    }
    w.str("alert.message", &a.message)
}

fn decode_alert(r: &mut Reader<'_>) -> Result<Alert, DecodeError> {
    let timestamp = r.timestamp()?;
    let severity = match r.u8()? {
        0 => Severity::Warning,
        1 => Severity::Critical,
        _ => return Err(r.invalid("severity")),
    };
    let subject = r.string()?;
    let n = r.count(4)?;
    let mut vials = Vec::with_capacity(n);
    for _ in 0..n {
        vials.push(r.u32()?);
    }
    Ok(Alert {
        timestamp,
        severity,
        subject,
        vials,
        message: r.string()?,
    })
}

impl Canonical for Payload {
    fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u8(self.tag());
        match self {
            Payload::Genesis(g) => {
                w.str("chain_id", &g.chain_id)?;
                w.u8(g.hash_algorithm);
                w.count("validators", g.validators.len())?;
                for v in &g.validators {
                    w.str("validator", v)?;
                }
                w.count("actors", g.actors.len())?;
                for a in &g.actors {
                    w.str("actor_id", &a.actor_id)?;
                    w.u8(a.role.code());
                    w.raw(&a.public_key.0);
                }
            }
            Payload::DefineProductRules(p) => encode_product(w, p)?,
            Payload::RegisterLot {
                vid,
                product_id,
                vial_count,
                manufactured_at,
            } => {
                w.str("vid", vid)?;
                w.str("product_id", product_id)?;
                w.u32(*vial_count);
                w.timestamp("manufactured_at", *manufactured_at)?;
            }
            Payload::RecordDispatchTime { vid } => w.str("vid", vid)?,
            Payload::StartTransport { vid, tid } => {
                w.str("vid", vid)?;
                w.str("tid", tid)?;
            }
            Payload::TelemetryBatch(b) => b.encode(w)?,
            Payload::ReceiveLot {
                vid,
                tid_scanned,
                center_id,
            } => {
                w.str("vid", vid)?;
                w.str("tid_scanned", tid_scanned)?;
                w.str("center_id", center_id)?;
            }
            Payload::StoreLot { vid, unit_id } => {
                w.str("vid", vid)?;
                w.str("unit_id", unit_id)?;
            }
            Payload::ThawVials { vid, vials } => {
                w.str("vid", vid)?;
                match vials {
                    None => w.u8(0),
                    Some(list) => {
                        w.u8(1);
                        w.count("vials", list.len())?;
                        for v in list {
                            w.u32(*v);
                        }
                    }
                }
            }
            Payload::PunctureVial { vid, vial_index } => {
                w.str("vid", vid)?;
                w.u32(*vial_index);
            }
            Payload::Registration {
                bid,
                center_id,
                priority_class,
            } => {
                w.str("bid", bid)?;
                w.str("center_id", center_id)?;
                w.u8(*priority_class);
            }
            Payload::ScheduleDoses {
                center_id,
                as_of_day,
                daily_capacity,
            } => {
                w.str("center_id", center_id)?;
                w.timestamp("as_of_day", *as_of_day)?;
                w.u32(*daily_capacity);
            }
            Payload::AdministerDose {
                bid,
                vid,
                vial_index,
            } => {
                w.str("bid", bid)?;
                w.str("vid", vid)?;
                w.u32(*vial_index);
            }
            Payload::ReportSideEffect {
                bid,
                vid,
                description,
            } => {
                w.str("bid", bid)?;
                w.str("vid", vid)?;
                w.str("description", description)?;
            }
            Payload::ReportAdverseEvent {
                bid,
                vid,
                grade,
                description,
            } => {
                w.str("bid", bid)?;
                w.str("vid", vid)?;
                w.u8(*grade);
                w.str("description", description)?;
            }
            Payload::IssueCertificate(c) => c.encode(w)?,
            Payload::Alert(a) => {
                w.raw(&a.origin.0);
                w.count("alerts", a.alerts.len())?;
                for alert in &a.alerts {
                    encode_alert(w, alert)?;
                }
            }
        }
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            0 => {
                let chain_id = r.string()?;
                let hash_algorithm = r.u8()?;
                let n = r.count(4)?;
                let mut validators = Vec::with_capacity(n);
                for _ in 0..n {
                    validators.push(r.string()?);
                }
                let n = r.count(37)?;
                let mut actors = Vec::with_capacity(n);
                for _ in 0..n {
                    let actor_id = r.string()?;
                    let role = Role::from_code(r.u8()?).ok_or_else(|| r.invalid("role"))?;
                    let public_key = PublicKey(r.array::<32>()?);
                    actors.push(ActorRecord {
                        actor_id,
                        role,
                        public_key,
                    });
                }
                Payload::Genesis(GenesisConfig {
                    chain_id,
                    hash_algorithm,
                    validators,
                    actors,
                })
            }
            1 => Payload::DefineProductRules(decode_product(r)?),
            2 => Payload::RegisterLot {
                vid: r.string()?,
                product_id: r.string()?,
                vial_count: r.u32()?,
                manufactured_at: r.timestamp()?,
            },
            3 => Payload::RecordDispatchTime { vid: r.string()? },
            4 => Payload::StartTransport {
                vid: r.string()?,
                tid: r.string()?,
            },
            5 => Payload::TelemetryBatch(TelemetryBatch::decode(r)?),
            6 => Payload::ReceiveLot {
                vid: r.string()?,
                tid_scanned: r.string()?,
                center_id: r.string()?,
            },
            7 => Payload::StoreLot {
                vid: r.string()?,
                unit_id: r.string()?,
            },
            8 => {
                let vid = r.string()?;
                let vials = match r.u8()? {
                    0 => None,
                    1 => {
                        let n = r.count(4)?;
                        let mut list = Vec::with_capacity(n);
                        for _ in 0..n {
                            list.push(r.u32()?);
                        }
                        Some(list)
                    }
                    _ => return Err(r.invalid("option flag")),
                };
                Payload::ThawVials { vid, vials }
            }
            9 => Payload::PunctureVial {
                vid: r.string()?,
                vial_index: r.u32()?,
            },
            10 => Payload::Registration {
                bid: r.string()?,
                center_id: r.string()?,
                priority_class: r.u8()?,
            },
            11 => Payload::ScheduleDoses {
                center_id: r.string()?,
                as_of_day: r.timestamp()?,
                daily_capacity: r.u32()?,
            },
            12 => Payload::AdministerDose {
                bid: r.string()?,
                vid: r.string()?,
                vial_index: r.u32()?,
            },
            13 => Payload::ReportSideEffect {
                bid: r.string()?,
                vid: r.string()?,
                description: r.string()?,
            },
            14 => Payload::ReportAdverseEvent {
                bid: r.string()?,
                vid: r.string()?,
                grade: r.u8()?,
                description: r.string()?,
            },
            15 => Payload::IssueCertificate(Certificate::decode(r)?),
            16 => {
                let origin = Digest(r.array::<32>()?);
                let n = r.count(22)?;
                let mut alerts = Vec::with_capacity(n);
                for _ in 0..n {
                    alerts.push(decode_alert(r)?);
                }
                Payload::Alert(AlertRecord { origin, alerts })
            }
            _ => return Err(r.invalid("payload tag")),
        })
    }
}
