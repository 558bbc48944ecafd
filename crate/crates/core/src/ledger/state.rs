use std::collections::{HashMap, HashSet};
use std::fmt;

use super::block::RawBlock;
use super::{Block, Digest, GenesisConfig, HashAlgorithm, Payload, Transaction, TxKind, MAX_BLOCK_TXS};
use crate::codec::{Canonical, Reader};
use crate::identity::{PublicKey, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Failure {
    /// Undecodable bytes or unrepresentable values.
    Encoding,
    /// Height out of sequence.
    Height,
    ChainBreak,
    /// A stored digest differs from the recomputed one.
    HashMismatch,
    Auth,
    Ordering,
    /// Structural rule: genesis layout, block capacity, duplicate ids.
    Structure,
}

impl Failure {
    pub fn name(self) -> &'static str {
        match self {
            Failure::Encoding => "encoding",
            Failure::Height => "height",
            Failure::ChainBreak => "chain-break",
            Failure::HashMismatch => "hash mismatch",
            Failure::Auth => "signature",
            Failure::Ordering => "ordering",
            Failure::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("height {height}: {} error: {detail}", kind.name())]
pub struct LedgerError {
    pub height: u64,
    pub kind: Failure,
    pub detail: String,
}

impl LedgerError {
    fn new(height: u64, kind: Failure, detail: impl Into<String>) -> Self {
        Self {
            height,
            kind,
            detail: detail.into(),
        }
    }
}

/// Outcome of a full re-verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    /// Blocks that verified before the first failure.
    pub blocks_verified: u64,
    pub failure: Option<LedgerError>,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn first_failing_height(&self) -> Option<u64> {
        self.failure.as_ref().map(|f| f.height)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => write!(f, "valid, {} blocks", self.blocks_verified),
            Some(e) => write!(f, "invalid at {e}"),
        }
    }
}

/// Chain parameters fixed by the genesis block.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ChainContext {
    config: GenesisConfig,
    keys: HashMap<String, PublicKey>,
}

impl ChainContext {
    fn from_genesis(config: &GenesisConfig) -> Result<Self, String> {
        if HashAlgorithm::from_id(config.hash_algorithm).is_none() {
            return Err(format!("unknown hash algorithm id {}", config.hash_algorithm));
        }
        let mut keys = HashMap::new();
        for a in &config.actors {
            if a.actor_id.is_empty() || keys.insert(a.actor_id.clone(), a.public_key).is_some() {
                return Err(format!("duplicate or empty actor id `{}`", a.actor_id));
            }
        }
        if config.validators.is_empty() {
            return Err("empty validator set".into());
        }
        let mut seen = HashSet::new();
        for v in &config.validators {
            if !seen.insert(v) {
                return Err(format!("validator `{v}` listed twice"));
            }
            match config.actor(v) {
                Some(a) if a.role == Role::Validator => {}
                _ => return Err(format!("validator `{v}` is not a registered validator actor")),
            }
        }
        Ok(Self {
            config: config.clone(),
            keys,
        })
    }

    fn proposer_for(&self, height: u64) -> &str {
        let v = &self.config.validators;
        &v[(height % v.len() as u64) as usize]
    }
}

/// Append-only chain. Blocks are kept both as the exact stored bytes and in
/// decoded form; verification works from the bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerState {
    records: Vec<Vec<u8>>,
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
    index: HashMap<Digest, (u64, u32)>,
    context: Option<ChainContext>,
}

impl LedgerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    /// Stored block records, in height order.
    pub fn records(&self) -> &[Vec<u8>] {
        &self.records
    }

    pub fn head_hash(&self) -> Option<Digest> {
        self.hashes.last().copied()
    }

    pub fn head_timestamp(&self) -> Option<i64> {
        self.blocks.last().map(|b| b.timestamp)
    }

    pub fn genesis(&self) -> Option<&GenesisConfig> {
        self.context.as_ref().map(|c| &c.config)
    }

    pub fn public_key(&self, actor_id: &str) -> Option<PublicKey> {
        self.context.as_ref()?.keys.get(actor_id).copied()
    }

    pub fn expected_proposer(&self, height: u64) -> Option<&str> {
        self.context.as_ref().map(|c| c.proposer_for(height))
    }

    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        self.index.contains_key(tx_id)
    }

    pub fn locate(&self, tx_id: &Digest) -> Option<(u64, u32)> {
        self.index.get(tx_id).copied()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    /// Drops every block at height `len` and above. Genesis is kept.
    pub fn truncate(&mut self, len: usize) {
        let len = len.max(1).min(self.blocks.len());
        for b in &self.blocks[len..] {
            for tx in &b.transactions {
                self.index.remove(&tx.tx_id());
            }
        }
        self.records.truncate(len);
        self.blocks.truncate(len);
        self.hashes.truncate(len);
    }

    /// Appends `block` after checking it against the head. On error the
    /// ledger is left untouched.
    pub fn append_block(&mut self, block: &Block) -> Result<(), LedgerError> {
        let height = self.blocks.len() as u64;
        if block.height != height {
            return Err(LedgerError::new(
                block.height,
                Failure::Height,
                format!("expected height {height}, got {}", block.height),
            ));
        }
        let record = block
            .to_canonical_bytes()
            .map_err(|e| LedgerError::new(height, Failure::Encoding, e.to_string()))?;
        self.append_record(record)
    }

    /// Appends a stored block record, verifying it from its bytes.
    pub fn append_record(&mut self, record: Vec<u8>) -> Result<(), LedgerError> {
        let height = self.blocks.len() as u64;
        let checked = self.check_record(height, &record)?;
        for (i, tx) in checked.block.transactions.iter().enumerate() {
            self.index.insert(tx.tx_id(), (height, i as u32));
        }
        if let Some(ctx) = checked.context {
            self.context = Some(ctx);
        }
        self.hashes.push(checked.hash);
        self.blocks.push(checked.block);
        self.records.push(record);
        Ok(())
    }

    fn check_record(&self, height: u64, record: &[u8]) -> Result<Checked, LedgerError> {
        let err = |kind, detail: String| LedgerError::new(height, kind, detail);
        let mut r = Reader::new(record);
        let raw = RawBlock::parse(&mut r)
            .and_then(|raw| r.finish().map(|_| raw))
            .map_err(|e| err(Failure::Encoding, e.to_string()))?;
        let header = raw
            .header()
            .map_err(|e| err(Failure::Encoding, format!("header: {e}")))?;
        if header.height != height {
            return Err(err(
                Failure::Height,
                format!("record claims height {}", header.height),
            ));
        }
        let expected_prev = self.hashes.last().copied().unwrap_or(Digest::ZERO);
        if header.prev_hash != expected_prev {
            return Err(err(
                Failure::ChainBreak,
                format!(
                    "prev_hash {} does not match head {}",
                    header.prev_hash.short(),
                    expected_prev.short()
                ),
            ));
        }
        let hash = raw.recomputed_hash();
        if hash != raw.block_hash {
            return Err(err(Failure::HashMismatch, "block hash".into()));
        }
        if raw.recomputed_tx_root() != header.tx_root {
            return Err(err(Failure::HashMismatch, "transaction root".into()));
        }
        if let Some(parent_ts) = self.head_timestamp() {
            if header.timestamp < parent_ts {
                return Err(err(
                    Failure::Ordering,
                    format!("timestamp {} precedes parent {parent_ts}", header.timestamp),
                ));
            }
        }
        if raw.txs.len() > MAX_BLOCK_TXS {
            return Err(err(
                Failure::Structure,
                format!("{} transactions exceed capacity {MAX_BLOCK_TXS}", raw.txs.len()),
            ));
        }
        for (i, tx) in raw.txs.iter().enumerate() {
            if Digest::of(tx.body) != tx.tx_id {
                return Err(err(Failure::HashMismatch, format!("transaction {i} id")));
            }
        }
        let block = raw
            .decode()
            .map_err(|e| err(Failure::Encoding, e.to_string()))?;

        let fresh;
        let ctx = match &self.context {
            Some(c) => {
                if let Some(i) = block.transactions.iter().position(|t| t.kind == TxKind::Genesis) {
                    return Err(err(
                        Failure::Structure,
                        format!("genesis transaction {i} outside block 0"),
                    ));
                }
                c
            }
            None => {
                let config = match block.transactions.as_slice() {
                    [tx] => match (&tx.kind, &tx.payload) {
                        (TxKind::Genesis, Payload::Genesis(g)) => g,
                        _ => {
                            return Err(err(
                                Failure::Structure,
                                "block 0 must hold one genesis transaction".into(),
                            ))
                        }
                    },
                    _ => {
                        return Err(err(
                            Failure::Structure,
                            "block 0 must hold one genesis transaction".into(),
                        ))
                    }
                };
                fresh = ChainContext::from_genesis(config).map_err(|m| err(Failure::Structure, m))?;
                &fresh
            }
        };

        let expected = ctx.proposer_for(height);
        if header.proposer != expected {
            return Err(err(
                Failure::Auth,
                format!("proposer {} is not the expected {expected}", header.proposer),
            ));
        }
        let key = ctx.keys.get(&header.proposer).ok_or_else(|| {
            err(Failure::Auth, format!("unknown proposer {}", header.proposer))
        })?;
        if !key.verify(raw.header, &raw.signature) {
            return Err(err(Failure::Auth, "proposer signature".into()));
        }
        let mut seen = HashSet::new();
        for (i, (tx, rawtx)) in block.transactions.iter().zip(&raw.txs).enumerate() {
            let key = ctx.keys.get(&tx.author).ok_or_else(|| {
                err(Failure::Auth, format!("transaction {i}: unknown author {}", tx.author))
            })?;
            if !key.verify(rawtx.body, &rawtx.signature) {
                return Err(err(Failure::Auth, format!("transaction {i} signature")));
            }
            if !seen.insert(tx.tx_id()) || self.index.contains_key(&tx.tx_id()) {
                return Err(err(
                    Failure::Structure,
                    format!("transaction {i} ({}) already on chain", tx.tx_id().short()),
                ));
            }
        }
        let context = self.context.is_none().then(|| ctx.clone());
        Ok(Checked {
            block,
            hash,
            context,
        })
    }

    /// Re-verifies every stored record from scratch.
    pub fn verify_chain(&self) -> VerificationReport {
        verify_records(self.records.iter().map(|r| r.as_slice()))
    }
}

struct Checked {
    block: Block,
    hash: Digest,
    context: Option<ChainContext>,
}

/// Replays raw block records into a fresh ledger, recomputing every digest
/// and signature.
pub fn verify_records<'a>(records: impl IntoIterator<Item = &'a [u8]>) -> VerificationReport {
    let mut ledger = LedgerState::new();
    for record in records {
        if let Err(e) = ledger.append_record(record.to_vec()) {
            return VerificationReport {
                blocks_verified: ledger.len() as u64,
                failure: Some(e),
            };
        }
    }
    VerificationReport {
        blocks_verified: ledger.len() as u64,
        failure: None,
    }
}

/// Optional criteria; a transaction matches when every present field does.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryFilter {
    /// Empty means any kind.
    pub kinds: Vec<TxKind>,
    pub author: Option<String>,
    pub subject: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
}

impl QueryFilter {
    pub fn kind(kind: TxKind) -> Self {
        Self {
            kinds: vec![kind],
            ..Self::default()
        }
    }

    /// Both telemetry kinds.
    pub fn telemetry_batches() -> Self {
        Self {
            kinds: vec![TxKind::RecordTransportTelemetry, TxKind::RecordStorageTelemetry],
            ..Self::default()
        }
    }

    pub fn subject(subject: &str) -> Self {
        Self {
            subject: Some(subject.to_string()),
            ..Self::default()
        }
    }

    pub fn matches(&self, tx: &Transaction) -> bool {
        (self.kinds.is_empty() || self.kinds.contains(&tx.kind))
            && self.author.as_ref().is_none_or(|a| *a == tx.author)
            && self
                .subject
                .as_ref()
                .is_none_or(|s| tx.payload.subjects().contains(&s.as_str()))
            && self.from.is_none_or(|f| tx.timestamp >= f)
            && self.to.is_none_or(|t| tx.timestamp <= t)
    }
}

impl LedgerState {
    /// Matching transactions in chain order.
    pub fn query(&self, filter: &QueryFilter) -> Vec<&Transaction> {
        self.transactions().filter(|tx| filter.matches(tx)).collect()
    }
}
