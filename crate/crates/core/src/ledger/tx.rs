use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Digest, Payload, SCHEMA_VERSION};
use crate::codec::{Canonical, DecodeError, EncodeError, Reader, Writer};
use crate::identity::{ActorIdentity, PublicKey, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Genesis,
    DefineProductRules,
    RegisterLot,
    RecordDispatchTime,
    StartTransport,
    RecordTransportTelemetry,
    ReceiveLot,
    StoreLot,
    RecordStorageTelemetry,
    ThawVials,
    RegisterBeneficiary,
    AdministerDose,
    IssueCertificateRequest,
    PunctureVial,
    RegisterSelf,
    ReportSideEffect,
    ReportAdverseEvent,
    ScheduleDoses,
    Alert,
}

impl TxKind {
    pub const ALL: [TxKind; 19] = [
        TxKind::Genesis,
        TxKind::DefineProductRules,
        TxKind::RegisterLot,
        TxKind::RecordDispatchTime,
        TxKind::StartTransport,
        TxKind::RecordTransportTelemetry,
        TxKind::ReceiveLot,
        TxKind::StoreLot,
        TxKind::RecordStorageTelemetry,
        TxKind::ThawVials,
        TxKind::RegisterBeneficiary,
        TxKind::AdministerDose,
        TxKind::IssueCertificateRequest,
        TxKind::PunctureVial,
        TxKind::RegisterSelf,
        TxKind::ReportSideEffect,
        TxKind::ReportAdverseEvent,
        TxKind::ScheduleDoses,
        TxKind::Alert,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<TxKind> {
        TxKind::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::Genesis => "genesis",
            TxKind::DefineProductRules => "define-product-rules",
            TxKind::RegisterLot => "register-lot",
            TxKind::RecordDispatchTime => "record-dispatch-time",
            TxKind::StartTransport => "start-transport",
            TxKind::RecordTransportTelemetry => "record-transport-telemetry",
            TxKind::ReceiveLot => "receive-lot",
            TxKind::StoreLot => "store-lot",
            TxKind::RecordStorageTelemetry => "record-storage-telemetry",
            TxKind::ThawVials => "thaw-vials",
            TxKind::RegisterBeneficiary => "register-beneficiary",
            TxKind::AdministerDose => "administer-dose",
            TxKind::IssueCertificateRequest => "issue-certificate-request",
            TxKind::PunctureVial => "puncture-vial",
            TxKind::RegisterSelf => "register-self",
            TxKind::ReportSideEffect => "report-side-effect",
            TxKind::ReportAdverseEvent => "report-adverse-event",
            TxKind::ScheduleDoses => "schedule-doses",
            TxKind::Alert => "alert",
        }
    }

    /// Kinds written by the system itself rather than by a role.
    pub fn is_system(self) -> bool {
        matches!(self, TxKind::Genesis | TxKind::Alert)
    }

    pub fn is_telemetry(self) -> bool {
        matches!(
            self,
            TxKind::RecordTransportTelemetry | TxKind::RecordStorageTelemetry
        )
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TxKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squash = |v: &str| -> String {
            v.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .map(|c| c.to_ascii_lowercase())
                .collect()
        };
        let norm = squash(s);
        TxKind::ALL
            .into_iter()
            .find(|k| squash(k.name()) == norm)
            .ok_or_else(|| format!("unknown transaction kind `{s}`"))
    }
}

/// A signed ledger record. `tx_id` is a cache of the digest of the signing
/// bytes; verification always recomputes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TxKind,
    pub payload: Payload,
    pub author: String,
    pub timestamp: i64,
    pub signature: Signature,
    tx_id: Digest,
}

impl Transaction {
    pub fn sign(
        kind: TxKind,
        payload: Payload,
        author: &ActorIdentity,
        timestamp: i64,
    ) -> Result<Self, EncodeError> {
        let bytes = signing_bytes(kind, &payload, author.actor_id(), timestamp)?;
        Ok(Self {
            kind,
            payload,
            author: author.actor_id().to_string(),
            timestamp,
            signature: author.sign(&bytes),
            tx_id: Digest::of(&bytes),
        })
    }

    /// Assembles a transaction from parts without signing, e.g. to test
    /// rejection of foreign signatures. The id is computed from the parts.
    pub fn from_parts(
        kind: TxKind,
        payload: Payload,
        author: &str,
        timestamp: i64,
        signature: Signature,
    ) -> Result<Self, EncodeError> {
        let bytes = signing_bytes(kind, &payload, author, timestamp)?;
        Ok(Self {
            kind,
            payload,
            author: author.to_string(),
            timestamp,
            signature,
            tx_id: Digest::of(&bytes),
        })
    }

    pub fn tx_id(&self) -> Digest {
        self.tx_id
    }

    /// Canonical bytes covered by the signature and the id:
    /// `0x01 | kind u8 | payload (u32-length-prefixed) | author | timestamp u64`.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        signing_bytes(self.kind, &self.payload, &self.author, self.timestamp)
    }

    pub fn compute_id(&self) -> Result<Digest, EncodeError> {
        Ok(Digest::of(&self.signing_bytes()?))
    }

    pub fn verify_signature(&self, key: &PublicKey) -> bool {
        match self.signing_bytes() {
            Ok(bytes) => key.verify(&bytes, &self.signature),
            Err(_) => false,
        }
    }
}

fn signing_bytes(
    kind: TxKind,
    payload: &Payload,
    author: &str,
    timestamp: i64,
) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::new();
    w.u8(SCHEMA_VERSION);
    w.u8(kind.code());
    w.bytes("payload", &payload.to_canonical_bytes()?)?;
    w.str("author", author)?;
    w.timestamp("timestamp", timestamp)?;
    Ok(w.into_bytes())
}

/// Stored form: `signing bytes (u32-length-prefixed) | signature 64 | tx_id 32`.
impl Canonical for Transaction {
    fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.bytes("transaction", &self.signing_bytes()?)?;
        w.raw(&self.signature.0);
        w.raw(&self.tx_id.0);
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let body = r.bytes()?;
        let signature = Signature(r.array::<64>()?);
        let tx_id = Digest(r.array::<32>()?);
        let mut b = Reader::new(body);
        if b.u8()? != SCHEMA_VERSION {
            return Err(b.invalid("schema version"));
        }
        let kind = TxKind::from_code(b.u8()?).ok_or_else(|| b.invalid("transaction kind"))?;
        let payload = Payload::from_canonical_bytes(b.bytes()?)?;
        let author = b.string()?;
        let timestamp = b.timestamp()?;
        b.finish()?;
        Ok(Self {
            kind,
            payload,
            author,
            timestamp,
            signature,
            tx_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Role;

    #[test]
    fn kind_codes_round_trip() {
        for (i, k) in TxKind::ALL.into_iter().enumerate() {
            assert_eq!(k.code() as usize, i);
            assert_eq!(TxKind::from_code(k.code()), Some(k));
            assert_eq!(k.name().parse::<TxKind>(), Ok(k));
        }
        assert_eq!(TxKind::from_code(19), None);
    }

    #[test]
    fn negative_timestamp_is_an_encoding_error() {
        let a = ActorIdentity::from_seed(Role::Manufacturer, "MFG-1", [1; 32]);
        let p = Payload::RecordDispatchTime { vid: "VID-1".into() };
        assert!(matches!(
            Transaction::sign(TxKind::RecordDispatchTime, p, &a, -1),
            Err(EncodeError::Negative { .. })
        ));
    }

    #[test]
    fn signature_and_id() {
        let a = ActorIdentity::from_seed(Role::Manufacturer, "MFG-1", [1; 32]);
        let p = Payload::RecordDispatchTime { vid: "VID-1".into() };
        let tx = Transaction::sign(TxKind::RecordDispatchTime, p.clone(), &a, 10).unwrap();
        assert!(tx.verify_signature(&a.public_key()));
        assert_eq!(tx.compute_id().unwrap(), tx.tx_id());
        let other = ActorIdentity::from_seed(Role::Manufacturer, "MFG-2", [2; 32]);
        assert!(!tx.verify_signature(&other.public_key()));

        let again = Transaction::sign(TxKind::RecordDispatchTime, p, &a, 10).unwrap();
        assert_eq!(tx.to_canonical_bytes().unwrap(), again.to_canonical_bytes().unwrap());
        let back = Transaction::from_canonical_bytes(&tx.to_canonical_bytes().unwrap()).unwrap();
        assert_eq!(back, tx);
    }
}
