use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Message, Node, NodeError, Outgoing, Target};
use crate::identity::{ActorIdentity, PermissionMatrix};
use crate::ledger::{Block, Digest, Transaction};

/// Network model. Delays are whole ticks; a message sent at tick `t` is
/// delivered no earlier than `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub min_delay_ticks: u64,
    pub max_delay_ticks: u64,
    pub drop_probability: f64,
    pub seed: u64,
    pub partitions: Vec<Partition>,
    pub proposal_interval: u64,
    pub retransmit_interval: u64,
    pub max_ticks: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            min_delay_ticks: 1,
            max_delay_ticks: 3,
            drop_probability: 0.0,
            seed: 0,
            partitions: Vec::new(),
            proposal_interval: 10,
            retransmit_interval: 5,
            max_ticks: 50_000,
        }
    }
}

impl NetConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: NetConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_delay_ticks == 0 || self.max_delay_ticks < self.min_delay_ticks {
            return Err("delays must satisfy 1 <= min_delay_ticks <= max_delay_ticks".into());
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err("drop_probability must lie in [0, 1)".into());
        }
        if self.proposal_interval == 0 || self.retransmit_interval == 0 {
            return Err("intervals must be positive".into());
        }
        for p in &self.partitions {
            if p.end_tick < p.start_tick {
                return Err(format!("partition ends before it starts at tick {}", p.start_tick));
            }
        }
        Ok(())
    }
}

/// During `[start_tick, end_tick)` only nodes in the same group can talk.
/// A node listed in no group is isolated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub start_tick: u64,
    pub end_tick: u64,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    fn separates(&self, tick: u64, a: usize, b: usize) -> bool {
        if tick < self.start_tick || tick >= self.end_tick {
            return false;
        }
        !self.groups.iter().any(|g| g.contains(&a) && g.contains(&b))
    }
}

/// A scenario transaction injected at `origin` no earlier than `tick` and,
/// when `after` is set, only once that transaction is committed at `origin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedTx {
    pub tick: u64,
    pub origin: usize,
    pub tx: Transaction,
    pub after: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeReport {
    pub index: usize,
    pub id: String,
    pub head: Digest,
    pub height: u64,
    pub committed: usize,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimReport {
    pub ticks: u64,
    pub injected: usize,
    pub not_injected: usize,
    pub converged: bool,
    pub nodes: Vec<NodeReport>,
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ticks={} injected={} not_injected={} converged={}",
            self.ticks, self.injected, self.not_injected, self.converged
        )?;
        for n in &self.nodes {
            writeln!(
                f,
                "node={} id={} head={} height={} committed={} sent={} delivered={} dropped={}",
                n.index, n.id, n.head, n.height, n.committed, n.sent, n.delivered, n.dropped
            )?;
        }
        Ok(())
    }
}

/// Discrete-tick driver. Each tick injects due transactions, delivers due
/// messages ordered by (sender, sequence, recipient), then steps every node
/// in index order. All randomness comes from one seeded generator.
pub struct Simulation {
    nodes: Vec<Node>,
    config: NetConfig,
    rng: ChaCha8Rng,
    in_flight: BTreeMap<(u64, usize, u64, usize), Message>,
    seq: Vec<u64>,
    sent: Vec<u64>,
    delivered: Vec<u64>,
    dropped: Vec<u64>,
    tick: u64,
}

impl Simulation {
    pub fn new(
        genesis: &Block,
        validators: Vec<ActorIdentity>,
        config: NetConfig,
        matrix: PermissionMatrix,
    ) -> Result<Self, NodeError> {
        let nodes = validators
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                Node::new(
                    i,
                    id,
                    genesis,
                    matrix.clone(),
                    config.proposal_interval,
                    config.retransmit_interval,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = nodes.len();
        Ok(Self {
            nodes,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            in_flight: BTreeMap::new(),
            seq: vec![0; n],
            sent: vec![0; n],
            delivered: vec![0; n],
            dropped: vec![0; n],
            tick: 0,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn send(&mut self, from: usize, out: Outgoing) {
        let seq = self.seq[from];
        self.seq[from] += 1;
        let targets: Vec<usize> = match out.to {
            Target::All => (0..self.nodes.len()).filter(|&i| i != from).collect(),
            Target::Peer(p) if p != from && p < self.nodes.len() => vec![p],
            Target::Peer(_) => Vec::new(),
        };
        for to in targets {
            self.sent[from] += 1;
            let cut = self
                .config
                .partitions
                .iter()
                .any(|p| p.separates(self.tick, from, to));
            let lost = self.rng.gen_bool(self.config.drop_probability);
            if cut || lost {
                self.dropped[to] += 1;
                continue;
            }
            let delay = self
                .rng
                .gen_range(self.config.min_delay_ticks..=self.config.max_delay_ticks);
            self.in_flight
                .insert((self.tick + delay, from, seq, to), out.msg.clone());
        }
    }

    fn send_all(&mut self, from: usize, out: Vec<Outgoing>) {
        for o in out {
            self.send(from, o);
        }
    }

    fn converged(&self) -> bool {
        let head = self.nodes[0].head_hash();
        self.nodes.iter().all(|n| n.head_hash() == head)
    }

    fn quiescent(&self) -> bool {
        self.converged() && self.nodes.iter().all(|n| n.mempool_len() == 0)
    }

    /// Runs until every transaction is injected and all nodes agree with
    /// empty mempools, or until `max_ticks`.
    pub fn run(&mut self, txs: Vec<TimedTx>) -> SimReport {
        let total = txs.len();
        let mut pending = txs;
        let mut injected = 0;
        while self.tick < self.config.max_ticks {
            self.tick += 1;
            let now = self.tick;

            let mut i = 0;
            while i < pending.len() {
                let t = &pending[i];
                let origin = t.origin % self.nodes.len();
                let ready = t.tick <= now
                    && t.after.is_none_or(|d| self.nodes[origin].has_committed(&d));
                if ready {
                    let t = pending.remove(i);
                    let out = self.nodes[origin].submit(t.tx);
                    self.send_all(origin, out);
                    injected += 1;
                } else {
                    i += 1;
                }
            }

            while let Some(entry) = self.in_flight.first_entry() {
                if entry.key().0 > now {
                    break;
                }
                let ((_, from, _, to), msg) = entry.remove_entry();
                self.delivered[to] += 1;
                let out = self.nodes[to].receive(from, msg);
                self.send_all(to, out);
            }

            for i in 0..self.nodes.len() {
                let out = self.nodes[i].tick(now);
                self.send_all(i, out);
            }

            if pending.is_empty() && self.quiescent() {
                break;
            }
        }
        SimReport {
            ticks: self.tick,
            injected,
            not_injected: total - injected,
            converged: pending.is_empty() && self.converged(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeReport {
                    index: n.index(),
                    id: n.id().to_string(),
                    head: n.head_hash(),
                    height: n.height(),
                    committed: n.committed(),
                    sent: self.sent[n.index()],
                    delivered: self.delivered[n.index()],
                    dropped: self.dropped[n.index()],
                })
                .collect(),
        }
    }
}

/// Builds one node per validator identity and runs `txs` to quiescence.
pub fn run_simulation(
    genesis: &Block,
    validators: Vec<ActorIdentity>,
    config: NetConfig,
    txs: Vec<TimedTx>,
) -> Result<SimReport, NodeError> {
    let mut sim = Simulation::new(genesis, validators, config, PermissionMatrix::standard())?;
    Ok(sim.run(txs))
}
