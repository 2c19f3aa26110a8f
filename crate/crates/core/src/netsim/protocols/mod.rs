//! Per-platform message flows.

mod eov;
mod poh;
mod pow;
mod tangle;
mod voting;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

pub(crate) use eov::EovProtocol;
pub(crate) use poh::PohProtocol;
pub(crate) use pow::PowProtocol;
pub(crate) use tangle::TangleProtocol;
pub(crate) use voting::VotingProtocol;

use super::sim::{Ctx, Msg};
use crate::consensus::WorkOp;
use crate::ledger::{Hash, Transaction};
use crate::types::NodeId;

/// Arrival-ordered mempool.
#[derive(Default)]
pub(crate) struct TxPool {
    by_seq: BTreeMap<u64, Arc<Transaction>>,
    index: HashMap<Hash, u64>,
    next: u64,
}

impl TxPool {
    pub fn insert(&mut self, tx: Arc<Transaction>) -> bool {
        if self.index.contains_key(&tx.tx_id) {
            return false;
        }
        self.index.insert(tx.tx_id, self.next);
        self.by_seq.insert(self.next, tx);
        self.next += 1;
        true
    }

    pub fn remove(&mut self, id: &Hash) -> Option<Arc<Transaction>> {
        let seq = self.index.remove(id)?;
        self.by_seq.remove(&seq)
    }

    /// Oldest `max` transactions not rejected by `skip`, left in place.
    pub fn peek(&self, max: usize, skip: impl Fn(&Hash) -> bool) -> Vec<Arc<Transaction>> {
        self.by_seq
            .values()
            .filter(|t| !skip(&t.tx_id))
            .take(max)
            .cloned()
            .collect()
    }

    /// Removes and returns the oldest `max` transactions.
    pub fn drain(&mut self, max: usize) -> Vec<Arc<Transaction>> {
        let txs = self.peek(max, |_| false);
        for t in &txs {
            self.remove(&t.tx_id);
        }
        txs
    }
}

/// Remembers which client handed a transaction to this manager so the
/// receipt can go back to it.
#[derive(Default)]
pub(crate) struct Gateway {
    origin: HashMap<Hash, NodeId>,
}

impl Gateway {
    pub fn note(&mut self, tx: Hash, client: NodeId) {
        self.origin.insert(tx, client);
    }

    pub fn receipt(&mut self, ctx: &mut Ctx<'_>, tx: Hash) {
        if let Some(client) = self.origin.remove(&tx) {
            ctx.charge(WorkOp::Sign(1));
            ctx.send(client, Msg::Receipt);
        }
    }
}

/// Flood relay shared by the gossip-based chains: admit a transaction once,
/// verify its signature, and pass it to every other manager except the one
/// it came from.
pub(crate) fn admit_and_relay(
    ctx: &mut Ctx<'_>,
    pool: &mut TxPool,
    seen: &mut HashSet<Hash>,
    from: NodeId,
    tx: Arc<Transaction>,
) -> bool {
    if !seen.insert(tx.tx_id) {
        return false;
    }
    ctx.charge(WorkOp::Verify(1));
    if !tx.verify() {
        return false;
    }
    let me = ctx.node;
    let targets: Vec<NodeId> = ctx.topo.others(me).filter(|&n| n != from).collect();
    ctx.send_all(targets, &Msg::Gossip(tx.clone()));
    pool.insert(tx);
    true
}
