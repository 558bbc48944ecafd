//! Actor identities, Ed25519 signatures and the role/transaction permission
//! matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ledger::{Digest, TxKind};

/// Actor id of the contract engine itself; it authors derived alert
/// transactions.
pub const CONTRACT_ACTOR_ID: &str = "CONTRACT";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("actor id must not be empty")]
    EmptyId,
    #[error("actor `{0}` already exists")]
    Duplicate(String),
    #[error("malformed {what}: expected {expected} bytes, got {got}")]
    Format {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("actors file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Manufacturer,
    Distributor,
    MedicalCenter,
    Doctor,
    Beneficiary,
    Validator,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Manufacturer,
        Role::Distributor,
        Role::MedicalCenter,
        Role::Doctor,
        Role::Beneficiary,
        Role::Validator,
    ];

    pub fn code(self) -> u8 {
        match self {
            Role::Manufacturer => 1,
            Role::Distributor => 2,
            Role::MedicalCenter => 3,
            Role::Doctor => 4,
            Role::Beneficiary => 5,
            Role::Validator => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Manufacturer => "manufacturer",
            Role::Distributor => "distributor",
            Role::MedicalCenter => "medical-center",
            Role::Doctor => "doctor",
            Role::Beneficiary => "beneficiary",
            Role::Validator => "validator",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "manufacturer" => Ok(Role::Manufacturer),
            "distributor" => Ok(Role::Distributor),
            "medicalcenter" | "center" => Ok(Role::MedicalCenter),
            "doctor" => Ok(Role::Doctor),
            "beneficiary" | "patient" => Ok(Role::Beneficiary),
            "validator" => Ok(Role::Validator),
            _ => Err(IdentityError::UnknownRole(s.to_string())),
        }
    }
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| IdentityError::Format {
            what: "public key",
            expected: 32,
            got: bytes.len(),
        })?;
        Ok(PublicKey(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, IdentityError> {
        let raw = hex::decode(s.trim()).map_err(|e| IdentityError::Parse {
            line: 0,
            message: format!("bad hex public key: {e}"),
        })?;
        Self::from_slice(&raw)
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        match VerifyingKey::from_bytes(&self.0) {
            Ok(vk) => vk
                .verify(message, &ed25519_dalek::Signature::from_bytes(&signature.0))
                .is_ok(),
            Err(_) => false,
        }
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..12])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Ed25519 signature bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub const EMPTY: Signature = Signature([0u8; 64]);

    pub fn from_slice(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr: [u8; 64] = bytes.try_into().map_err(|_| IdentityError::Format {
            what: "signature",
            expected: 64,
            got: bytes.len(),
        })?;
        Ok(Signature(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..12])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        Signature::from_slice(&raw).map_err(serde::de::Error::custom)
    }
}

/// Verifies `signature` over `message` with raw key bytes.
///
/// Malformed key or signature lengths are a format error; a well-formed but
/// wrong signature is `Ok(false)`.
pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, IdentityError> {
    let pk = PublicKey::from_slice(public_key)?;
    let sig = Signature::from_slice(signature)?;
    Ok(pk.verify(message, &sig))
}

/// A role-bearing signer. The signing key never leaves this struct.
#[derive(Clone)]
pub struct ActorIdentity {
    actor_id: String,
    role: Role,
    signing_key: SigningKey,
}

impl ActorIdentity {
    /// Derives the keypair deterministically from `seed`.
    pub fn from_seed(role: Role, actor_id: impl Into<String>, seed: [u8; 32]) -> Self {
        Self {
            actor_id: actor_id.into(),
            role,
            signing_key: SigningKey::from_bytes(&seed),
        }
    }

    /// The contract engine's own identity. Its key is derived from a fixed,
    /// public seed: alert transactions are checked by re-derivation, not by
    /// secrecy of this key.
    pub fn contract() -> Self {
        let seed = Digest::of(b"vaxledger/contract-identity").0;
        Self::from_seed(Role::Validator, CONTRACT_ACTOR_ID, seed)
    }

    pub fn actor_id(&self) -> &str {
        &self.actor_id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing_key.verifying_key().to_bytes())
    }

    pub fn record(&self) -> ActorRecord {
        ActorRecord {
            actor_id: self.actor_id.clone(),
            role: self.role,
            public_key: self.public_key(),
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing_key.sign(message).to_bytes())
    }
}

impl fmt::Debug for ActorIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActorIdentity")
            .field("actor_id", &self.actor_id)
            .field("role", &self.role)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// Public half of an identity, as recorded on the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub actor_id: String,
    pub role: Role,
    pub public_key: PublicKey,
}

/// Local registry of identities, keyed by actor id.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    actors: BTreeMap<String, ActorIdentity>,
    order: Vec<String>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_actor(
        &mut self,
        role: Role,
        actor_id: &str,
        seed: [u8; 32],
    ) -> Result<&ActorIdentity, IdentityError> {
        if actor_id.is_empty() {
            return Err(IdentityError::EmptyId);
        }
        if self.actors.contains_key(actor_id) {
            return Err(IdentityError::Duplicate(actor_id.to_string()));
        }
        self.actors.insert(
            actor_id.to_string(),
            ActorIdentity::from_seed(role, actor_id, seed),
        );
        self.order.push(actor_id.to_string());
        Ok(&self.actors[actor_id])
    }

    pub fn get(&self, actor_id: &str) -> Option<&ActorIdentity> {
        self.actors.get(actor_id)
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    /// Identities in creation order.
    pub fn iter(&self) -> impl Iterator<Item = &ActorIdentity> {
        self.order.iter().map(|id| &self.actors[id])
    }

    /// Position of an actor in creation order.
    pub fn position(&self, actor_id: &str) -> Option<usize> {
        self.order.iter().position(|id| id == actor_id)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ActorIdentity> {
        self.iter().filter(move |a| a.role() == role)
    }

    /// Parses the actors file: one `actor_id role hex-seed` record per line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Directory, IdentityError> {
        let mut dir = Directory::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let parse_err = |message: String| IdentityError::Parse {
                line: line_no,
                message,
            };
            let [id, role, seed] = fields[..] else {
                return Err(parse_err(format!(
                    "expected `actor_id role hex-seed`, got {} fields",
                    fields.len()
                )));
            };
            let role: Role = role.parse().map_err(|e: IdentityError| parse_err(e.to_string()))?;
            let seed = parse_seed(seed).map_err(parse_err)?;
            dir.create_actor(role, id, seed)
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(dir)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in self.iter() {
            out.push_str(&format!(
                "{} {} {}\n",
                a.actor_id(),
                a.role(),
                hex::encode(a.signing_key.to_bytes())
            ));
        }
        out
    }
}

fn parse_seed(s: &str) -> Result<[u8; 32], String> {
    let raw = hex::decode(s).map_err(|e| format!("bad hex seed: {e}"))?;
    raw.try_into()
        .map_err(|v: Vec<u8>| format!("seed must be 32 bytes, got {}", v.len()))
}

/// Total map from (role, transaction kind) to allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermissionMatrix {
    allowed: BTreeMap<(Role, TxKind), bool>,
}

impl PermissionMatrix {
    /// The compiled-in matrix. Anything not granted here is denied.
    pub fn standard() -> Self {
        use TxKind::*;
        let grants: &[(Role, &[TxKind])] = &[
            (
                Role::Manufacturer,
                &[DefineProductRules, RegisterLot, RecordDispatchTime],
            ),
            (
                Role::Distributor,
                &[StartTransport, RecordTransportTelemetry],
            ),
            (
                Role::MedicalCenter,
                &[
                    ReceiveLot,
                    StoreLot,
                    RecordStorageTelemetry,
                    ThawVials,
                    ScheduleDoses,
                ],
            ),
            (
                Role::Doctor,
                &[
                    RegisterBeneficiary,
                    AdministerDose,
                    IssueCertificateRequest,
                    PunctureVial,
                ],
            ),
            (
                Role::Beneficiary,
                &[RegisterSelf, ReportSideEffect, ReportAdverseEvent],
            ),
            (Role::Validator, &[]),
        ];
        let mut allowed = BTreeMap::new();
        for role in Role::ALL {
            for kind in TxKind::ALL {
                allowed.insert((role, kind), false);
            }
        }
        for (role, kinds) in grants {
            for kind in *kinds {
                allowed.insert((*role, *kind), true);
            }
        }
        Self { allowed }
    }

    pub fn authorize(&self, role: Role, kind: TxKind) -> bool {
        self.allowed.get(&(role, kind)).copied().unwrap_or(false)
    }

    pub fn authorize_actor(&self, author: &ActorIdentity, kind: TxKind) -> bool {
        self.authorize(author.role(), kind)
    }

    pub fn granted(&self, role: Role) -> Vec<TxKind> {
        TxKind::ALL
            .into_iter()
            .filter(|k| self.authorize(role, *k))
            .collect()
    }

    /// Audit dump: one line per role listing the granted kinds.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for role in Role::ALL {
            let kinds: Vec<&str> = self.granted(role).iter().map(|k| k.name()).collect();
            let list = if kinds.is_empty() {
                "(none)".to_string()
            } else {
                kinds.join(", ")
            };
            out.push_str(&format!("{:<15} {}\n", role.name(), list));
        }
        out
    }
}

impl Default for PermissionMatrix {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seed(b: u8) -> [u8; 32] {
        [b; 32]
    }

    #[test]
    fn same_seed_same_keys() {
        let a = ActorIdentity::from_seed(Role::Doctor, "DOC-1", seed(7));
        let b = ActorIdentity::from_seed(Role::Doctor, "DOC-1", seed(7));
        assert_eq!(a.public_key(), b.public_key());
    }

    #[test]
    fn same_seed_different_ids() {
        let mut dir = Directory::new();
        let pk1 = dir.create_actor(Role::Doctor, "DOC-1", seed(1)).unwrap().public_key();
        let pk2 = dir.create_actor(Role::Doctor, "DOC-2", seed(1)).unwrap().public_key();
        assert_eq!(pk1, pk2);
        assert_eq!(dir.len(), 2);
    }

    #[test]
    fn duplicate_actor_conflicts() {
        let mut dir = Directory::new();
        dir.create_actor(Role::Doctor, "DOC-1", seed(1)).unwrap();
        assert_eq!(
            dir.create_actor(Role::Doctor, "DOC-1", seed(2)).unwrap_err(),
            IdentityError::Duplicate("DOC-1".into())
        );
        assert_eq!(
            dir.create_actor(Role::Doctor, "", seed(2)).unwrap_err(),
            IdentityError::EmptyId
        );
    }

    #[test]
    fn matrix_examples() {
        let m = PermissionMatrix::standard();
        assert!(m.authorize(Role::Manufacturer, TxKind::RegisterLot));
        assert!(!m.authorize(Role::Beneficiary, TxKind::RegisterLot));
        assert!(m.authorize(Role::Distributor, TxKind::StartTransport));
        assert!(m.granted(Role::Validator).is_empty());
        assert!(!m.authorize(Role::Validator, TxKind::Alert));
    }

    #[test]
    fn every_business_kind_reachable() {
        let m = PermissionMatrix::standard();
        for kind in TxKind::ALL.into_iter().filter(|k| !k.is_system()) {
            assert!(
                Role::ALL.into_iter().any(|r| m.authorize(r, kind)),
                "{kind:?} unreachable"
            );
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let a = ActorIdentity::from_seed(Role::Doctor, "DOC-1", seed(3));
        let b = ActorIdentity::from_seed(Role::Doctor, "DOC-2", seed(4));
        let sig = a.sign(b"");
        assert!(a.public_key().verify(b"", &sig));
        assert!(!b.public_key().verify(b"", &sig));
        assert!(verify(&a.public_key().0, b"", &sig.0).unwrap());
    }

    #[test]
    fn malformed_key_is_format_error() {
        let a = ActorIdentity::from_seed(Role::Doctor, "DOC-1", seed(3));
        let sig = a.sign(b"m");
        assert!(matches!(
            verify(&[0u8; 31], b"m", &sig.0),
            Err(IdentityError::Format { expected: 32, got: 31, .. })
        ));
        assert!(matches!(
            verify(&a.public_key().0, b"m", &sig.0[..63]),
            Err(IdentityError::Format { expected: 64, .. })
        ));
    }

    #[test]
    fn random_bit_flips_never_verify() {
        let a = ActorIdentity::from_seed(Role::Manufacturer, "MFG-1", seed(9));
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..1000 {
            let len = rng.gen_range(0..64usize);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let sig = a.sign(&msg);
            let flip_msg = len > 0 && rng.gen_bool(0.5);
            if flip_msg {
                let mut m = msg.clone();
                let bit = rng.gen_range(0..len * 8);
                m[bit / 8] ^= 1 << (bit % 8);
                assert!(!a.public_key().verify(&m, &sig));
            } else {
                let mut s = sig;
                let bit = rng.gen_range(0..512);
                s.0[bit / 8] ^= 1 << (bit % 8);
                assert!(!a.public_key().verify(&msg, &s));
            }
        }
    }

    #[test]
    fn actors_file_round_trip() {
        let text = "# id role seed\nMFG-1 manufacturer 0101010101010101010101010101010101010101010101010101010101010101\nCENTER-A MedicalCenter 0202020202020202020202020202020202020202020202020202020202020202\n";
        let dir = Directory::parse(text).unwrap();
        assert_eq!(dir.len(), 2);
        assert_eq!(dir.get("CENTER-A").unwrap().role(), Role::MedicalCenter);
        let again = Directory::parse(&dir.to_text()).unwrap();
        assert_eq!(
            again.get("MFG-1").unwrap().public_key(),
            dir.get("MFG-1").unwrap().public_key()
        );
    }

    #[test]
    fn actors_file_errors_carry_line() {
        let err = Directory::parse("\nMFG-1 wizard 00\n").unwrap_err();
        assert!(matches!(err, IdentityError::Parse { line: 2, .. }));
    }
}
