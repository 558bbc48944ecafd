//! Snapshot file: a 16-byte header followed by `u32`-length-prefixed block
//! records.
//!
//! ```text
//! 0..4    magic "VXLG"
//! 4..6    schema version (u16, big-endian)
//! 6..8    hash algorithm id (u16, big-endian)
//! 8..16   reserved, zero
//! ```

use thiserror::Error;

use super::{verify_records, Failure, HashAlgorithm, LedgerError, LedgerState, VerificationReport};
use crate::codec::Reader;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"VXLG";
pub const SNAPSHOT_VERSION: u16 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot header: {0}")]
    Header(String),
    #[error("snapshot: {0}")]
    Ledger(#[from] LedgerError),
}

impl LedgerState {
    pub fn to_snapshot(&self) -> Vec<u8> {
        let alg = self
            .genesis()
            .map_or(HashAlgorithm::Sha256.id(), |g| g.hash_algorithm);
        let mut out = Vec::with_capacity(
            SNAPSHOT_HEADER_LEN + self.records().iter().map(|r| r.len() + 4).sum::<usize>(),
        );
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_be_bytes());
        out.extend_from_slice(&u16::from(alg).to_be_bytes());
        out.extend_from_slice(&[0u8; 8]);
        for r in self.records() {
            out.extend_from_slice(&(r.len() as u32).to_be_bytes());
            out.extend_from_slice(r);
        }
        out
    }

    /// Loads and fully verifies a snapshot.
    pub fn from_snapshot(bytes: &[u8]) -> Result<LedgerState, SnapshotError> {
        let (alg, records) = split(bytes).map_err(|e| SnapshotError::Header(e.detail))?;
        let mut ledger = LedgerState::new();
        for rec in records {
            ledger.append_record(rec.map_err(SnapshotError::Ledger)?.to_vec())?;
        }
        check_alg(&ledger, alg).map_err(SnapshotError::Ledger)?;
        Ok(ledger)
    }
}

fn check_alg(ledger: &LedgerState, alg: u16) -> Result<(), LedgerError> {
    match ledger.genesis() {
        Some(g) if u16::from(g.hash_algorithm) != alg => Err(LedgerError {
            height: 0,
            kind: Failure::Encoding,
            detail: format!(
                "header hash algorithm {alg} differs from genesis {}",
                g.hash_algorithm
            ),
        }),
        _ => Ok(()),
    }
}

type Records<'a> = Vec<Result<&'a [u8], LedgerError>>;

fn split(bytes: &[u8]) -> Result<(u16, Records<'_>), LedgerError> {
    let header_err = |detail: String| LedgerError {
        height: 0,
        kind: Failure::Encoding,
        detail,
    };
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(header_err("file shorter than header".into()));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(header_err("bad magic".into()));
    }
    let version = u16::from_be_bytes([bytes[4], bytes[5]]);
    if version != SNAPSHOT_VERSION {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let alg = u16::from_be_bytes([bytes[6], bytes[7]]);
    if u8::try_from(alg).ok().and_then(HashAlgorithm::from_id).is_none() {
        return Err(header_err(format!("unknown hash algorithm {alg}")));
    }
    if bytes[8..16].iter().any(|b| *b != 0) {
        return Err(header_err("reserved bytes are not zero".into()));
    }
    let mut r = Reader::new(&bytes[SNAPSHOT_HEADER_LEN..]);
    let mut out = Vec::new();
    let mut height = 0u64;
    while r.remaining() > 0 {
        match r.bytes() {
            Ok(rec) => out.push(Ok(rec)),
            Err(e) => {
                out.push(Err(LedgerError {
                    height,
                    kind: Failure::Encoding,
                    detail: e.to_string(),
                }));
                break;
            }
        }
        height += 1;
    }
    Ok((alg, out))
}

/// Verifies snapshot bytes without trusting anything stored in them.
pub fn verify_snapshot(bytes: &[u8]) -> VerificationReport {
    let (alg, records) = match split(bytes) {
        Ok(x) => x,
        Err(e) => {
            return VerificationReport {
                blocks_verified: 0,
                failure: Some(e),
            }
        }
    };
    let mut good = Vec::with_capacity(records.len());
    let mut framing = None;
    for rec in records {
        match rec {
            Ok(r) => good.push(r),
            Err(e) => {
                framing = Some(e);
                break;
            }
        }
    }
    let mut report = verify_records(good.iter().copied());
    if report.failure.is_none() {
        report.failure = framing;
    }
    if report.failure.is_none() {
        let mut ledger = LedgerState::new();
        if let Some(first) = good.first() {
            // Only genesis is needed for the algorithm check.
            let _ = ledger.append_record(first.to_vec());
        }
        report.failure = check_alg(&ledger, alg).err();
    }
    report
}
