//! Signed vaccination certificates and their QR-ready text payload.
//!
//! Payload text is `VXC1:` followed by URL-safe base64 (no padding) of:
//!
//! ```text
//! u8      version (0x01)
//! u32+N   bid (UTF-8)
//! u32+N   product id (UTF-8)
//! u8      dose number (1 or 2)
//! u64     vaccination date, days since 1970-01-01
//! u32+N   issuer actor id (UTF-8)
//! [64]    Ed25519 signature over all preceding bytes
//! ```
//!
//! Integers are big-endian; `u32+N` is a length-prefixed string.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, EncodeError, Reader, Writer};
use crate::contract::WorldState;
use crate::identity::{ActorIdentity, Directory, IdentityError, PublicKey, Role, Signature};
use crate::ledger::{Payload, Transaction, TxKind, SCHEMA_VERSION};

pub const PAYLOAD_PREFIX: &str = "VXC1:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CertificateKind {
    Partial,
    Final,
}

impl CertificateKind {
    pub fn name(self) -> &'static str {
        match self {
            CertificateKind::Partial => "partial",
            CertificateKind::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub bid: String,
    pub product_id: String,
    pub dose_number: u8,
    /// Days since the Unix epoch (UTC).
    pub vaccination_day: i64,
    pub issuer: String,
    pub signature: Signature,
}

impl Certificate {
    pub fn sign(
        bid: &str,
        product_id: &str,
        dose_number: u8,
        vaccination_day: i64,
        issuer: &ActorIdentity,
    ) -> Result<Self, EncodeError> {
        let mut cert = Self {
            bid: bid.to_string(),
            product_id: product_id.to_string(),
            dose_number,
            vaccination_day,
            issuer: issuer.actor_id().to_string(),
            signature: Signature::EMPTY,
        };
        cert.signature = issuer.sign(&cert.signed_bytes()?);
        Ok(cert)
    }

    pub fn kind(&self) -> CertificateKind {
        if self.dose_number >= 2 {
            CertificateKind::Final
        } else {
            CertificateKind::Partial
        }
    }

    /// Everything but the trailing signature.
    pub fn signed_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        w.u8(SCHEMA_VERSION);
        w.str("bid", &self.bid)?;
        w.str("product_id", &self.product_id)?;
        w.u8(self.dose_number);
        w.timestamp("vaccination_day", self.vaccination_day)?;
        w.str("issuer", &self.issuer)?;
        Ok(w.into_bytes())
    }

    pub fn verify_signature(&self, key: &PublicKey) -> bool {
        self.signed_bytes()
            .map(|b| key.verify(&b, &self.signature))
            .unwrap_or(false)
    }

    pub fn date(&self) -> String {
        crate::days_to_date(self.vaccination_day)
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} certificate: {} dose {} of {} on {} (issuer {})",
            self.kind().name(),
            self.bid,
            self.dose_number,
            self.product_id,
            self.date(),
            self.issuer
        )
    }
}

impl Canonical for Certificate {
    fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.raw(&self.signed_bytes()?);
        w.raw(&self.signature.0);
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        if r.u8()? != SCHEMA_VERSION {
            return Err(r.invalid("certificate version"));
        }
        Ok(Self {
            bid: r.string()?,
            product_id: r.string()?,
            dose_number: r.u8()?,
            vaccination_day: r.timestamp()?,
            issuer: r.string()?,
            signature: Signature(r.array::<64>()?),
        })
    }
}

pub fn encode_payload(cert: &Certificate) -> Result<String, EncodeError> {
    Ok(format!(
        "{PAYLOAD_PREFIX}{}",
        URL_SAFE_NO_PAD.encode(cert.to_canonical_bytes()?)
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("missing `{PAYLOAD_PREFIX}` prefix")]
    Prefix,
    #[error("base64: {0}")]
    Base64(String),
    #[error("payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("dose number {0} is not 1 or 2")]
    DoseNumber(u8),
}

pub fn decode_payload(text: &str) -> Result<Certificate, PayloadError> {
    let body = text
        .trim()
        .strip_prefix(PAYLOAD_PREFIX)
        .ok_or(PayloadError::Prefix)?;
    let bytes = URL_SAFE_NO_PAD
        .decode(body)
        .map_err(|e| PayloadError::Base64(e.to_string()))?;
    let cert = Certificate::from_canonical_bytes(&bytes)?;
    if !(1..=2).contains(&cert.dose_number) {
        return Err(PayloadError::DoseNumber(cert.dose_number));
    }
    // Base64 without padding admits several spellings of the last symbol;
    // only the canonical one is accepted.
    if URL_SAFE_NO_PAD.encode(&bytes) != body {
        return Err(PayloadError::Base64("non-canonical encoding".into()));
    }
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationResult {
    ValidPartial,
    ValidFinal,
    BadFormat,
    UnknownIssuer,
    BadSignature,
}

impl VerificationResult {
    pub fn is_valid(self) -> bool {
        matches!(
            self,
            VerificationResult::ValidPartial | VerificationResult::ValidFinal
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            VerificationResult::ValidPartial => "valid-partial",
            VerificationResult::ValidFinal => "valid-final",
            VerificationResult::BadFormat => "bad-format",
            VerificationResult::UnknownIssuer => "unknown-issuer",
            VerificationResult::BadSignature => "bad-signature",
        }
    }
}

impl fmt::Display for VerificationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Issuer id to public key, as distributed to offline verifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustMap {
    issuers: BTreeMap<String, PublicKey>,
}

impl TrustMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, actor_id: &str, key: PublicKey) {
        self.issuers.insert(actor_id.to_string(), key);
    }

    pub fn get(&self, actor_id: &str) -> Option<&PublicKey> {
        self.issuers.get(actor_id)
    }

    pub fn len(&self) -> usize {
        self.issuers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issuers.is_empty()
    }

    /// Doctors and medical centers of a directory.
    pub fn from_directory(dir: &Directory) -> Self {
        let mut map = Self::new();
        for a in dir.iter() {
            if matches!(a.role(), Role::Doctor | Role::MedicalCenter) {
                map.insert(a.actor_id(), a.public_key());
            }
        }
        map
    }

    /// One `actor_id hex-public-key` pair per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, IdentityError> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| IdentityError::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let [id, key] = fields.as_slice() else {
                return Err(parse_err(format!(
                    "expected `actor_id public_key`, got {} fields",
                    fields.len()
                )));
            };
            let key = PublicKey::from_hex(key).map_err(|e| parse_err(e.to_string()))?;
            if map.issuers.insert(id.to_string(), key).is_some() {
                return Err(parse_err(format!("issuer `{id}` listed twice")));
            }
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        self.issuers
            .iter()
            .map(|(id, key)| format!("{id} {}\n", key.to_hex()))
            .collect()
    }
}

/// Offline check against the trust map only.
pub fn verify_certificate(text: &str, trusted: &TrustMap) -> VerificationResult {
    let Ok(cert) = decode_payload(text) else {
        return VerificationResult::BadFormat;
    };
    let Some(key) = trusted.get(&cert.issuer) else {
        return VerificationResult::UnknownIssuer;
    };
    if !cert.verify_signature(key) {
        return VerificationResult::BadSignature;
    }
    match cert.kind() {
        CertificateKind::Partial => VerificationResult::ValidPartial,
        CertificateKind::Final => VerificationResult::ValidFinal,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertificateError {
    #[error("{actor} ({role}) may not issue certificates")]
    Role { actor: String, role: Role },
    #[error("beneficiary {0} has no completed dose")]
    Eligibility(String),
    #[error("certificate for {bid} dose {dose} already issued")]
    Conflict { bid: String, dose: u8 },
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Builds the certificate for the beneficiary's highest completed dose.
pub fn issue_certificate(
    world: &WorldState,
    bid: &str,
    issuer: &ActorIdentity,
) -> Result<Certificate, CertificateError> {
    if !matches!(issuer.role(), Role::Doctor | Role::MedicalCenter) {
        return Err(CertificateError::Role {
            actor: issuer.actor_id().to_string(),
            role: issuer.role(),
        });
    }
    let dose = world
        .beneficiaries
        .get(bid)
        .and_then(|b| b.doses.last())
        .ok_or_else(|| CertificateError::Eligibility(bid.to_string()))?;
    if world
        .certificates
        .iter()
        .any(|c| c.bid == bid && c.dose_number == dose.dose_number)
    {
        return Err(CertificateError::Conflict {
            bid: bid.to_string(),
            dose: dose.dose_number,
        });
    }
    Ok(Certificate::sign(
        bid,
        &dose.product_id,
        dose.dose_number,
        dose.day,
        issuer,
    )?)
}

/// Records an issued certificate on the ledger.
pub fn certificate_transaction(
    cert: Certificate,
    issuer: &ActorIdentity,
    timestamp: i64,
) -> Result<Transaction, EncodeError> {
    Transaction::sign(
        TxKind::IssueCertificateRequest,
        Payload::IssueCertificate(cert),
        issuer,
        timestamp,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doctor() -> ActorIdentity {
        ActorIdentity::from_seed(Role::Doctor, "DOC-1", [7; 32])
    }

    fn trust() -> TrustMap {
        let mut t = TrustMap::new();
        t.insert("DOC-1", doctor().public_key());
        t
    }

    #[test]
    fn round_trip_and_kinds() {
        let c1 = Certificate::sign("BID-1", "moderna", 1, 18_700, &doctor()).unwrap();
        let text = encode_payload(&c1).unwrap();
        assert!(text.starts_with("VXC1:"));
        assert_eq!(decode_payload(&text).unwrap(), c1);
        assert_eq!(verify_certificate(&text, &trust()), VerificationResult::ValidPartial);

        let c2 = Certificate::sign("BID-1", "moderna", 2, 18_728, &doctor()).unwrap();
        let text2 = encode_payload(&c2).unwrap();
        assert_ne!(text, text2);
        assert_eq!(verify_certificate(&text2, &trust()), VerificationResult::ValidFinal);
    }

    #[test]
    fn unknown_issuer_and_bad_format() {
        let c = Certificate::sign("BID-1", "moderna", 1, 18_700, &doctor()).unwrap();
        let text = encode_payload(&c).unwrap();
        assert_eq!(verify_certificate(&text, &TrustMap::new()), VerificationResult::UnknownIssuer);
        assert_eq!(verify_certificate("hello", &trust()), VerificationResult::BadFormat);
        assert_eq!(verify_certificate("VXC1:!!", &trust()), VerificationResult::BadFormat);
    }

    #[test]
    fn forged_signature_claiming_trusted_id() {
        let forger = ActorIdentity::from_seed(Role::Doctor, "DOC-1", [8; 32]);
        let forged = Certificate::sign("BID-1", "moderna", 2, 18_728, &forger).unwrap();
        let text = encode_payload(&forged).unwrap();
        assert_eq!(verify_certificate(&text, &trust()), VerificationResult::BadSignature);
    }

    #[test]
    fn trust_map_text() {
        let t = trust();
        assert_eq!(TrustMap::parse(&t.to_text()).unwrap(), t);
        assert!(TrustMap::parse("DOC-1").is_err());
    }
}
