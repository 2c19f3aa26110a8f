//! Proof of history: a sequential SHA-256 chain, verified by recomputation.

use super::work::{WorkLedger, WorkOp};
use crate::ledger::{Hash, Transaction};
use crate::types::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PohProof {
    pub start: Hash,
    pub end: Hash,
    pub ticks: u64,
}

fn step(h: &Hash) -> Hash {
    Hash::digest(h.as_bytes())
}

/// Applies SHA-256 `ticks` times in sequence.
pub fn poh_extend(state: Hash, ticks: u64) -> PohProof {
    assert!(ticks >= 1, "poh_extend needs at least one tick");
    let mut h = state;
    for _ in 0..ticks {
        h = step(&h);
    }
    PohProof {
        start: state,
        end: h,
        ticks,
    }
}

/// [`poh_extend`] that charges each hash to `node`.
pub fn poh_extend_charged(state: Hash, ticks: u64, node: NodeId, work: &mut WorkLedger) -> PohProof {
    let proof = poh_extend(state, ticks);
    work.charge(node, WorkOp::Hash(ticks));
    proof
}

/// Independent recomputation of a claimed proof.
pub fn poh_verify(proof: &PohProof) -> bool {
    proof.ticks >= 1 && poh_extend(proof.start, proof.ticks).end == proof.end
}

/// Mixes `data` into the chain with a single hash.
pub fn poh_mixin(state: &Hash, data: &Hash) -> Hash {
    Hash::digest_parts(&[state.as_bytes(), data.as_bytes()])
}

fn txs_digest(txs: &[Transaction]) -> Hash {
    let mut buf = Vec::with_capacity(txs.len() * 32);
    for tx in txs {
        buf.extend_from_slice(tx.tx_id.as_bytes());
    }
    Hash::digest(&buf)
}

/// A PoH entry: `num_hashes` sequential hashes ending at `hash`. With
/// transactions, the final hash is the mixin of their ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PohEntry {
    pub num_hashes: u64,
    pub hash: Hash,
    pub txs: Vec<Transaction>,
}

/// Leader-side generator.
#[derive(Clone, Debug)]
pub struct PohRecorder {
    state: Hash,
    total_hashes: u64,
}

impl PohRecorder {
    pub fn new(seed: Hash) -> Self {
        PohRecorder {
            state: seed,
            total_hashes: 0,
        }
    }

    pub fn state(&self) -> Hash {
        self.state
    }

    pub fn total_hashes(&self) -> u64 {
        self.total_hashes
    }

    /// A tick entry of `hashes` plain hashes.
    pub fn tick(&mut self, hashes: u64, node: NodeId, work: &mut WorkLedger) -> PohEntry {
        let proof = poh_extend_charged(self.state, hashes, node, work);
        self.state = proof.end;
        self.total_hashes += hashes;
        PohEntry {
            num_hashes: hashes,
            hash: self.state,
            txs: Vec::new(),
        }
    }

    /// Records `txs` with one mixin hash.
    pub fn record(&mut self, txs: Vec<Transaction>, node: NodeId, work: &mut WorkLedger) -> PohEntry {
        work.charge(node, WorkOp::Hash(1));
        self.state = poh_mixin(&self.state, &txs_digest(&txs));
        self.total_hashes += 1;
        PohEntry {
            num_hashes: 1,
            hash: self.state,
            txs,
        }
    }
}

/// Replays `entries` from `start`, charging every hash to `node`.
pub fn verify_entries(start: Hash, entries: &[PohEntry], node: NodeId, work: &mut WorkLedger) -> bool {
    let mut h = start;
    for e in entries {
        if e.txs.is_empty() {
            if e.num_hashes == 0 {
                return false;
            }
            h = poh_extend_charged(h, e.num_hashes, node, work).end;
        } else {
            if e.num_hashes != 1 {
                return false;
            }
            work.charge(node, WorkOp::Hash(1));
            h = poh_mixin(&h, &txs_digest(&e.txs));
        }
        if h != e.hash {
            return false;
        }
    }
    true
}
