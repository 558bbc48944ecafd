//! Append-only, hash-chained, signature-verified transaction log.

mod block;
mod digest;
mod payload;
mod snapshot;
mod state;
mod tx;

pub use block::{header_bytes, tx_root, Block};
pub use digest::{Digest, HashAlgorithm};
pub use payload::{AlertRecord, GenesisConfig, Payload};
pub use snapshot::{
    verify_snapshot, SnapshotError, SNAPSHOT_HEADER_LEN, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
pub use state::{verify_records, Failure, LedgerError, LedgerState, QueryFilter, VerificationReport};
pub use tx::{Transaction, TxKind};

/// Version byte leading every canonical record.
pub const SCHEMA_VERSION: u8 = 0x01;

/// Upper bound on transactions per block.
pub const MAX_BLOCK_TXS: usize = 256;

pub const DEFAULT_CHAIN_ID: &str = "vaxledger";

/// Block 0: the genesis transaction signed and proposed by `signer`, which
/// must be the first validator.
pub fn genesis_block(
    config: GenesisConfig,
    signer: &crate::identity::ActorIdentity,
) -> Result<Block, crate::codec::EncodeError> {
    let tx = Transaction::sign(TxKind::Genesis, Payload::Genesis(config), signer, 0)?;
    Block::build(0, Digest::ZERO, 0, vec![tx], signer)
}
