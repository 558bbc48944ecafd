//! Fixtures shared by the unit, integration and acceptance tests: a cast of
//! actors, a genesis block and shorthand for applying signed transactions
//! directly to a world state.

use crate::coldchain::builtin_profiles;
use crate::contract::{apply_transaction, execute_block, Event, RejectReason, WorldState};
use crate::identity::{ActorIdentity, Directory, PermissionMatrix, Role};
use crate::ledger::{
    genesis_block, Block, GenesisConfig, HashAlgorithm, Payload, Transaction, TxKind,
    DEFAULT_CHAIN_ID,
};
use crate::scenario::{derive_seed, validator_identities};
use crate::telemetry::{TelemetryBatch, TelemetryReading};

pub const HOUR: i64 = 3_600;
pub const DAY: i64 = 86_400;
/// 2021-03-01 as days since the epoch.
pub const D0: i64 = 18_687;

pub const CAST: [(Role, &str); 13] = [
    (Role::Manufacturer, "MAN-1"),
    (Role::Manufacturer, "MAN-2"),
    (Role::Distributor, "DIST-1"),
    (Role::Distributor, "DIST-2"),
    (Role::MedicalCenter, "CENTER-A"),
    (Role::MedicalCenter, "CENTER-B"),
    (Role::Doctor, "DOC-1"),
    (Role::Doctor, "DOC-2"),
    (Role::Beneficiary, "BEN-1"),
    (Role::Beneficiary, "BEN-2"),
    (Role::Beneficiary, "BEN-3"),
    (Role::Beneficiary, "BEN-4"),
    (Role::Beneficiary, "BEN-5"),
];

/// Seconds since the epoch for `hour` o'clock on day `D0 + day`.
pub fn at(day: i64, hour: i64) -> i64 {
    (D0 + day) * DAY + hour * HOUR
}

pub struct Bench {
    pub dir: Directory,
    pub validators: Vec<ActorIdentity>,
    pub genesis: Block,
    pub world: WorldState,
    pub matrix: PermissionMatrix,
}

impl Default for Bench {
    fn default() -> Self {
        Self::new()
    }
}

impl Bench {
    pub fn new() -> Self {
        Self::with(&CAST, 1)
    }

    pub fn with(cast: &[(Role, &str)], validators: usize) -> Self {
        let mut dir = Directory::new();
        for (role, id) in cast {
            dir.create_actor(*role, id, derive_seed(0, id))
                .expect("distinct actor ids");
        }
        let validators = validator_identities(validators, 0);
        let mut records: Vec<_> = dir.iter().map(|a| a.record()).collect();
        records.extend(validators.iter().map(|v| v.record()));
        records.push(ActorIdentity::contract().record());
        let genesis = genesis_block(
            GenesisConfig {
                chain_id: DEFAULT_CHAIN_ID.to_string(),
                hash_algorithm: HashAlgorithm::Sha256.id(),
                validators: validators.iter().map(|v| v.actor_id().to_string()).collect(),
                actors: records,
            },
            &validators[0],
        )
        .expect("genesis encodes");
        let matrix = PermissionMatrix::standard();
        let mut world = WorldState::new();
        execute_block(&mut world, &genesis, &matrix).expect("genesis executes");
        Self {
            dir,
            validators,
            genesis,
            world,
            matrix,
        }
    }

    pub fn actor(&self, id: &str) -> &ActorIdentity {
        self.dir.get(id).unwrap_or_else(|| panic!("no actor {id}"))
    }

    pub fn sign(&self, actor: &str, kind: TxKind, payload: Payload, ts: i64) -> Transaction {
        Transaction::sign(kind, payload, self.actor(actor), ts).expect("payload encodes")
    }

    pub fn apply(&mut self, actor: &str, kind: TxKind, payload: Payload, ts: i64) -> Vec<Event> {
        let tx = self.sign(actor, kind, payload, ts);
        apply_transaction(&mut self.world, &tx, &self.matrix)
    }

    /// Applies and panics on rejection.
    pub fn ok(&mut self, actor: &str, kind: TxKind, payload: Payload, ts: i64) -> Vec<Event> {
        let events = self.apply(actor, kind, payload, ts);
        if let Some((r, m)) = events.iter().find_map(Event::rejection) {
            panic!("{kind} by {actor} rejected: {r}: {m}");
        }
        events
    }

    pub fn define(&mut self, manufacturer: &str, product_id: &str) {
        let p = builtin_profiles()
            .into_iter()
            .find(|p| p.product_id == product_id)
            .unwrap_or_else(|| panic!("no builtin profile {product_id}"));
        self.ok(manufacturer, TxKind::DefineProductRules, Payload::DefineProductRules(p), 0);
    }

    pub fn register_lot(&mut self, manufacturer: &str, vid: &str, product_id: &str, vials: u32, ts: i64) {
        self.ok(
            manufacturer,
            TxKind::RegisterLot,
            Payload::RegisterLot {
                vid: vid.into(),
                product_id: product_id.into(),
                vial_count: vials,
                manufactured_at: ts,
            },
            ts,
        );
    }

    pub fn start_transport(&mut self, distributor: &str, vid: &str, tid: &str, ts: i64) -> Vec<Event> {
        self.apply(
            distributor,
            TxKind::StartTransport,
            Payload::StartTransport {
                vid: vid.into(),
                tid: tid.into(),
            },
            ts,
        )
    }

    pub fn receive(&mut self, center: &str, vid: &str, tid: &str, ts: i64) -> Vec<Event> {
        self.apply(
            center,
            TxKind::ReceiveLot,
            Payload::ReceiveLot {
                vid: vid.into(),
                tid_scanned: tid.into(),
                center_id: center.into(),
            },
            ts,
        )
    }

    /// Defines nothing; registers `vid` at MAN-1, ships it on `tid` with
    /// DIST-1 and receives it at `center` one hour later.
    pub fn deliver(&mut self, vid: &str, product_id: &str, vials: u32, center: &str, ts: i64) {
        self.register_lot("MAN-1", vid, product_id, vials, ts);
        let tid = format!("T-{vid}");
        let e = self.start_transport("DIST-1", vid, &tid, ts);
        assert!(rejection(&e).is_none(), "{e:?}");
        let e = self.receive(center, vid, &tid, ts + HOUR);
        assert!(rejection(&e).is_none(), "{e:?}");
    }

    pub fn register(&mut self, bid: &str, center: &str, priority: u8, ts: i64) -> Vec<Event> {
        self.apply(
            bid,
            TxKind::RegisterSelf,
            Payload::Registration {
                bid: bid.into(),
                center_id: center.into(),
                priority_class: priority,
            },
            ts,
        )
    }

    pub fn schedule(&mut self, center: &str, day: i64, capacity: u32, ts: i64) -> Vec<Event> {
        self.apply(
            center,
            TxKind::ScheduleDoses,
            Payload::ScheduleDoses {
                center_id: center.into(),
                as_of_day: day,
                daily_capacity: capacity,
            },
            ts,
        )
    }

    pub fn thaw(&mut self, center: &str, vid: &str, ts: i64) -> Vec<Event> {
        self.apply(
            center,
            TxKind::ThawVials,
            Payload::ThawVials {
                vid: vid.into(),
                vials: None,
            },
            ts,
        )
    }

    pub fn puncture(&mut self, doctor: &str, vid: &str, vial: u32, ts: i64) -> Vec<Event> {
        self.apply(
            doctor,
            TxKind::PunctureVial,
            Payload::PunctureVial {
                vid: vid.into(),
                vial_index: vial,
            },
            ts,
        )
    }

    pub fn administer(&mut self, doctor: &str, bid: &str, vid: &str, vial: u32, ts: i64) -> Vec<Event> {
        self.apply(
            doctor,
            TxKind::AdministerDose,
            Payload::AdministerDose {
                bid: bid.into(),
                vid: vid.into(),
                vial_index: vial,
            },
            ts,
        )
    }

    pub fn telemetry(&mut self, actor: &str, readings: Vec<TelemetryReading>, ts: i64) -> Vec<Event> {
        let batch = TelemetryBatch::new(readings).expect("non-empty batch");
        self.apply(actor, batch.kind(), Payload::TelemetryBatch(batch), ts)
    }
}

/// The rejection reason, if the transaction was rejected.
pub fn rejection(events: &[Event]) -> Option<RejectReason> {
    events.iter().find_map(Event::rejection).map(|(r, _)| r)
}

/// Readings every `interval` seconds from `start` for `duration` seconds.
pub fn constant_trace(
    make: impl Fn(i64) -> TelemetryReading,
    start: i64,
    duration: i64,
    interval: i64,
) -> Vec<TelemetryReading> {
    (0..duration / interval).map(|i| make(start + i * interval)).collect()
}
