use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use super::{prefer, Message, ANCESTOR_LOOKBACK, MAX_BLOCKS_PER_RESPONSE};
use crate::contract::{build_block_body, execute_block, ExecError, WorldState};
use crate::identity::{ActorIdentity, PermissionMatrix};
use crate::ledger::{Block, Digest, LedgerError, LedgerState, Transaction, MAX_BLOCK_TXS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    Peer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Target,
    pub msg: Message,
}

impl Outgoing {
    fn all(msg: Message) -> Self {
        Self {
            to: Target::All,
            msg,
        }
    }

    fn peer(peer: usize, msg: Message) -> Self {
        Self {
            to: Target::Peer(peer),
            msg,
        }
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("genesis rejected: {0}")]
    Ledger(#[from] LedgerError),
    #[error("genesis does not execute: {0}")]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone)]
struct Entry {
    block: Block,
    world: WorldState,
}

/// One replica: a block tree with the canonical chain, its world state and a
/// mempool.
#[derive(Debug, Clone)]
pub struct Node {
    index: usize,
    identity: ActorIdentity,
    matrix: PermissionMatrix,
    ledger: LedgerState,
    world: WorldState,
    tree: HashMap<Digest, Entry>,
    /// Blocks waiting for their parent, keyed by the parent hash.
    orphans: HashMap<Digest, Vec<Block>>,
    invalid: HashSet<Digest>,
    mempool: Vec<Transaction>,
    pooled: HashSet<Digest>,
    proposal_interval: u64,
    retransmit_interval: u64,
}

impl Node {
    pub fn new(
        index: usize,
        identity: ActorIdentity,
        genesis: &Block,
        matrix: PermissionMatrix,
        proposal_interval: u64,
        retransmit_interval: u64,
    ) -> Result<Self, NodeError> {
        let mut ledger = LedgerState::new();
        ledger.append_block(genesis)?;
        let mut world = WorldState::new();
        execute_block(&mut world, genesis, &matrix)?;
        let mut tree = HashMap::new();
        tree.insert(
            genesis.block_hash(),
            Entry {
                block: genesis.clone(),
                world: world.clone(),
            },
        );
        Ok(Self {
            index,
            identity,
            matrix,
            ledger,
            world,
            tree,
            orphans: HashMap::new(),
            invalid: HashSet::new(),
            mempool: Vec::new(),
            pooled: HashSet::new(),
            proposal_interval: proposal_interval.max(1),
            retransmit_interval: retransmit_interval.max(1),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn id(&self) -> &str {
        self.identity.actor_id()
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn height(&self) -> u64 {
        self.ledger.len() as u64 - 1
    }

    pub fn head_hash(&self) -> Digest {
        self.ledger.head_hash().expect("genesis is always present")
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Transactions on the canonical chain after genesis.
    pub fn committed(&self) -> usize {
        self.ledger
            .blocks()
            .iter()
            .skip(1)
            .map(|b| b.transactions.len())
            .sum()
    }

    pub fn has_committed(&self, tx_id: &Digest) -> bool {
        self.ledger.contains_tx(tx_id)
    }

    pub fn known_blocks(&self) -> usize {
        self.tree.len()
    }

    pub fn invalid_blocks(&self) -> usize {
        self.invalid.len()
    }

    /// A transaction from a local client.
    pub fn submit(&mut self, tx: Transaction) -> Vec<Outgoing> {
        if self.pool(tx.clone()) {
            vec![Outgoing::all(Message::Tx(tx))]
        } else {
            Vec::new()
        }
    }

    fn pool(&mut self, tx: Transaction) -> bool {
        let id = tx.tx_id();
        if tx.kind.is_system() || self.pooled.contains(&id) || self.ledger.contains_tx(&id) {
            return false;
        }
        match self.ledger.public_key(&tx.author) {
            Some(key) if tx.verify_signature(&key) => {}
            _ => return false,
        }
        self.pooled.insert(id);
        self.mempool.push(tx);
        true
    }

    pub fn receive(&mut self, from: usize, msg: Message) -> Vec<Outgoing> {
        match msg {
            Message::Tx(tx) => {
                self.pool(tx);
                Vec::new()
            }
            Message::Block(b) => self.process_block(b, from),
            Message::HeadAnnounce { height, hash } => {
                let unknown = !self.tree.contains_key(&hash) && !self.invalid.contains(&hash);
                if unknown && prefer(height, &hash, self.height(), &self.head_hash()) {
                    vec![Outgoing::peer(
                        from,
                        Message::RequestBlocks {
                            from_height: self.height() + 1,
                        },
                    )]
                } else {
                    Vec::new()
                }
            }
            Message::RequestBlocks { from_height } => self
                .ledger
                .blocks()
                .iter()
                .skip(from_height.max(1) as usize)
                .take(MAX_BLOCKS_PER_RESPONSE)
                .map(|b| Outgoing::peer(from, Message::Block(b.clone())))
                .collect(),
        }
    }

    /// Periodic work: propose when it is this node's turn, and re-announce
    /// the head and pending transactions.
    pub fn tick(&mut self, tick: u64) -> Vec<Outgoing> {
        let mut out = Vec::new();
        if tick.is_multiple_of(self.proposal_interval) {
            if let Some(block) = self.propose() {
                out.extend(self.process_block(block, self.index));
            }
        }
        if tick.is_multiple_of(self.retransmit_interval) {
            out.push(Outgoing::all(Message::HeadAnnounce {
                height: self.height(),
                hash: self.head_hash(),
            }));
            out.extend(self.mempool.iter().map(|tx| Outgoing::all(Message::Tx(tx.clone()))));
        }
        out
    }

    fn propose(&self) -> Option<Block> {
        let height = self.height() + 1;
        if self.ledger.expected_proposer(height) != Some(self.id()) || self.mempool.is_empty() {
            return None;
        }
        let body = build_block_body(
            &self.world,
            self.mempool.iter().cloned(),
            &self.matrix,
            MAX_BLOCK_TXS,
        );
        if body.is_empty() {
            return None;
        }
        let parent_ts = self.ledger.head_timestamp().unwrap_or(0);
        let ts = body.iter().map(|t| t.timestamp).fold(parent_ts, i64::max);
        Block::build(height, self.head_hash(), ts, body, &self.identity).ok()
    }

    fn process_block(&mut self, block: Block, from: usize) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([block]);
        while let Some(block) = queue.pop_front() {
            let Ok(hash) = block.compute_hash() else {
                continue;
            };
            if block.height == 0 || self.tree.contains_key(&hash) || self.invalid.contains(&hash) {
                continue;
            }
            if !self.tree.contains_key(&block.prev_hash) {
                let waiting = self.orphans.entry(block.prev_hash).or_default();
                if !waiting.iter().any(|b| b.block_hash() == hash) {
                    let from_height = block.height.saturating_sub(ANCESTOR_LOOKBACK).max(1);
                    waiting.push(block);
                    out.push(Outgoing::peer(from, Message::RequestBlocks { from_height }));
                }
                continue;
            }
            match self.validate(&block) {
                Ok((world, ledger)) => {
                    self.tree.insert(
                        hash,
                        Entry {
                            block: block.clone(),
                            world,
                        },
                    );
                    self.maybe_switch(hash, ledger);
                    out.push(Outgoing::all(Message::Block(block)));
                    if let Some(children) = self.orphans.remove(&hash) {
                        queue.extend(children);
                    }
                }
                Err(_) => {
                    self.invalid.insert(hash);
                    self.orphans.remove(&hash);
                }
            }
        }
        out
    }

    /// Checks `block` against its parent's branch: ledger rules first, then
    /// execution. Returns the post-state and the branch ledger ending at
    /// `block`.
    fn validate(&self, block: &Block) -> Result<(WorldState, LedgerState), String> {
        let mut ledger = self.branch_ledger(&block.prev_hash)?;
        ledger.append_block(block).map_err(|e| e.to_string())?;
        let mut world = self.tree[&block.prev_hash].world.clone();
        execute_block(&mut world, block, &self.matrix).map_err(|e| e.to_string())?;
        Ok((world, ledger))
    }

    /// The canonical ledger rewound to the fork point and extended along the
    /// branch ending at `tip`.
    fn branch_ledger(&self, tip: &Digest) -> Result<LedgerState, String> {
        let mut path = Vec::new();
        let mut cursor = *tip;
        let fork_height = loop {
            let entry = self.tree.get(&cursor).ok_or("branch leaves the block tree")?;
            let h = entry.block.height;
            if self.ledger.block(h).map(|b| b.block_hash()) == Some(cursor) {
                break h;
            }
            path.push(&entry.block);
            cursor = entry.block.prev_hash;
        };
        let mut ledger = self.ledger.clone();
        ledger.truncate(fork_height as usize + 1);
        for b in path.into_iter().rev() {
            ledger.append_block(b).map_err(|e| e.to_string())?;
        }
        Ok(ledger)
    }

    fn maybe_switch(&mut self, hash: Digest, ledger: LedgerState) {
        let height = self.tree[&hash].block.height;
        if !prefer(height, &hash, self.height(), &self.head_hash()) {
            return;
        }
        let now: HashSet<Digest> = ledger.transactions().map(|t| t.tx_id()).collect();
        let dropped: Vec<Transaction> = self
            .ledger
            .transactions()
            .filter(|t| !t.kind.is_system() && !now.contains(&t.tx_id()))
            .cloned()
            .collect();
        self.ledger = ledger;
        self.world = self.tree[&hash].world.clone();
        self.mempool.retain(|t| !now.contains(&t.tx_id()));
        self.pooled.retain(|id| !now.contains(id));
        for tx in dropped {
            self.pool(tx);
        }
    }
}
