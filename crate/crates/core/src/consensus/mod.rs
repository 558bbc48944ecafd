//! Round-robin proof-of-authority replication over a simulated network.
//!
//! The validator at position `height mod N` of the genesis validator list is
//! the only one allowed to propose the block at `height`. Nodes follow the
//! longest valid chain; equal lengths go to the smaller head digest read as
//! a big-endian integer.

mod net;
mod node;

pub use net::{run_simulation, NetConfig, NodeReport, Partition, SimReport, Simulation, TimedTx};
pub use node::{Node, NodeError, Outgoing, Target};

use crate::ledger::{Block, Digest, Transaction};

/// Blocks returned for one ancestor request.
pub const MAX_BLOCKS_PER_RESPONSE: usize = 64;

/// How far below an orphan's height an ancestor request starts.
pub const ANCESTOR_LOOKBACK: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorSet {
    ids: Vec<String>,
}

impl ValidatorSet {
    pub fn new(ids: Vec<String>) -> Self {
        assert!(!ids.is_empty(), "validator set must not be empty");
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn expected_proposer(&self, height: u64) -> &str {
        &self.ids[(height % self.ids.len() as u64) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Tx(Transaction),
    Block(Block),
    HeadAnnounce { height: u64, hash: Digest },
    RequestBlocks { from_height: u64 },
}

impl Message {
    pub fn name(&self) -> &'static str {
        match self {
            Message::Tx(_) => "tx",
            Message::Block(_) => "block",
            Message::HeadAnnounce { .. } => "head",
            Message::RequestBlocks { .. } => "request",
        }
    }
}

/// True when head `(height_a, hash_a)` beats `(height_b, hash_b)`.
pub fn prefer(height_a: u64, hash_a: &Digest, height_b: u64, hash_b: &Digest) -> bool {
    height_a > height_b || (height_a == height_b && hash_a < hash_b)
}
