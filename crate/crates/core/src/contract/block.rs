use serde::Serialize;
use thiserror::Error;

use super::{apply_transaction, Alert, Event, WorldState};
use crate::identity::{ActorIdentity, PermissionMatrix};
use crate::ledger::{AlertRecord, Block, Digest, LedgerState, Payload, Transaction, TxKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("block {height}, transaction {tx_index}: {detail}")]
pub struct ExecError {
    pub height: u64,
    pub tx_index: usize,
    pub detail: String,
}

/// One event with the position of the transaction that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoggedEvent {
    pub height: u64,
    pub tx_index: usize,
    pub tx_id: Digest,
    pub kind: TxKind,
    pub author: String,
    #[serde(rename = "tx_timestamp")]
    pub timestamp: i64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub world: WorldState,
    pub events: Vec<LoggedEvent>,
}

/// The contract-authored transaction recording alerts raised by `origin`.
/// Signing is deterministic, so every replica derives identical bytes.
pub fn alert_transaction(origin: &Transaction, alerts: Vec<Alert>) -> Transaction {
    Transaction::sign(
        TxKind::Alert,
        Payload::Alert(AlertRecord {
            origin: origin.tx_id(),
            alerts,
        }),
        &ActorIdentity::contract(),
        origin.timestamp,
    )
    .expect("alert payload encodes")
}

fn raised(events: &[Event]) -> Vec<Alert> {
    events.iter().filter_map(Event::alert).cloned().collect()
}

/// Applies every transaction of `block` in order. A transaction that raises
/// alerts must be followed directly by its alert transaction and alert
/// transactions may appear nowhere else. On error `world` is unchanged.
pub fn execute_block(
    world: &mut WorldState,
    block: &Block,
    matrix: &PermissionMatrix,
) -> Result<Vec<LoggedEvent>, ExecError> {
    let mut next = world.clone();
    let mut log = Vec::new();
    let mut pending: Option<Transaction> = None;
    for (i, tx) in block.transactions.iter().enumerate() {
        let err = |detail: String| ExecError {
            height: block.height,
            tx_index: i,
            detail,
        };
        let events = if let Some(expected) = pending.take() {
            if *tx != expected {
                return Err(err(format!(
                    "expected alert transaction {} after its origin",
                    expected.tx_id().short()
                )));
            }
            apply_transaction(&mut next, tx, matrix)
        } else if tx.kind == TxKind::Alert {
            return Err(err("alert transaction without an origin".into()));
        } else {
            let events = apply_transaction(&mut next, tx, matrix);
            let alerts = raised(&events);
            if !alerts.is_empty() {
                pending = Some(alert_transaction(tx, alerts));
            }
            events
        };
        log.extend(events.into_iter().map(|event| LoggedEvent {
            height: block.height,
            tx_index: i,
            tx_id: tx.tx_id(),
            kind: tx.kind,
            author: tx.author.clone(),
            timestamp: tx.timestamp,
            event,
        }));
    }
    if pending.is_some() {
        return Err(ExecError {
            height: block.height,
            tx_index: block.transactions.len(),
            detail: "block ends before the alert transaction of its last entry".into(),
        });
    }
    *world = next;
    Ok(log)
}

/// Selects candidates in order for a new block on top of `world`, inserting
/// the alert transaction after every candidate that raises alerts. Stops
/// before a candidate that might not fit together with its alert.
pub fn build_block_body(
    world: &WorldState,
    candidates: impl IntoIterator<Item = Transaction>,
    matrix: &PermissionMatrix,
    max_txs: usize,
) -> Vec<Transaction> {
    let mut scratch = world.clone();
    let mut body = Vec::new();
    for tx in candidates {
        if body.len() + 2 > max_txs {
            break;
        }
        if tx.kind == TxKind::Alert {
            continue;
        }
        let alerts = raised(&apply_transaction(&mut scratch, &tx, matrix));
        let alert = (!alerts.is_empty()).then(|| alert_transaction(&tx, alerts));
        body.push(tx);
        if let Some(a) = alert {
            apply_transaction(&mut scratch, &a, matrix);
            body.push(a);
        }
    }
    body
}

/// Rebuilds the world state from genesis.
pub fn replay(ledger: &LedgerState, matrix: &PermissionMatrix) -> Result<Replay, ExecError> {
    let mut world = WorldState::new();
    let mut events = Vec::new();
    for block in ledger.blocks() {
        events.extend(execute_block(&mut world, block, matrix)?);
    }
    Ok(Replay { world, events })
}
