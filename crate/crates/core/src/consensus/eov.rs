//! Endorse-order-validate flow with serial MVCC validation. A single
//! crash-fault-tolerant orderer batches endorsed envelopes into blocks.

use std::collections::{BTreeMap, BTreeSet};

use super::work::{WorkLedger, WorkOp};
use super::ConsensusError;
use crate::ledger::{sig, Block, Chain, Hash, Signature, Transaction};
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndorsementPolicy {
    /// Every peer of the channel must endorse.
    AllOf,
    /// At least `k` distinct peers must endorse.
    KOfN(usize),
}

impl EndorsementPolicy {
    pub fn required(&self, peers: usize) -> usize {
        match *self {
            EndorsementPolicy::AllOf => peers,
            EndorsementPolicy::KOfN(k) => k,
        }
    }
}

/// Keys read (with the version seen) and keys written by a simulated
/// contract call. Versions are `None` for absent keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RwSet {
    pub reads: Vec<(String, Option<u64>)>,
    pub writes: Vec<String>,
}

impl RwSet {
    fn digest(&self, tx_id: &Hash) -> Hash {
        let mut buf = tx_id.0.to_vec();
        for (k, v) in &self.reads {
            buf.extend_from_slice(k.as_bytes());
            buf.push(0);
            buf.extend_from_slice(&v.map_or(u64::MAX, |v| v).to_le_bytes());
        }
        buf.push(0xff);
        for k in &self.writes {
            buf.extend_from_slice(k.as_bytes());
            buf.push(0);
        }
        Hash::digest(&buf)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endorsement {
    pub endorser: NodeId,
    pub signature: Signature,
}

/// A transaction envelope ready for ordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndorsedTx {
    pub tx: Transaction,
    pub rwset: RwSet,
    pub endorsements: Vec<Endorsement>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validity {
    Valid,
    MvccConflict,
    BadEndorsement,
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Valid
    }
}

/// Committed key versions.
#[derive(Clone, Debug, Default)]
pub struct WorldState {
    versions: BTreeMap<String, u64>,
}

impl WorldState {
    pub fn version(&self, key: &str) -> Option<u64> {
        self.versions.get(key).copied()
    }
}

/// Read-modify-write of every key in `keys` against `state`.
pub fn simulate(state: &WorldState, keys: &[String]) -> RwSet {
    RwSet {
        reads: keys.iter().map(|k| (k.clone(), state.version(k))).collect(),
        writes: keys.to_vec(),
    }
}

/// Chaincode keys touched by `tx`. Without contention every transaction
/// writes its own key; with `Some(k)` keys are drawn from a pool of `k`.
pub fn tx_keys(tx: &Transaction, contention: Option<u64>) -> Vec<String> {
    match contention {
        Some(k) if k > 0 => {
            let mut b = [0u8; 8];
            b.copy_from_slice(&tx.tx_id.as_bytes()[..8]);
            vec![format!("asset/{}", u64::from_le_bytes(b) % k)]
        }
        _ => vec![format!("anchor/{}", tx.tx_id.short())],
    }
}

/// Phase 1: collect endorsements from the peers that responded. Each
/// responding peer simulates the call and signs the result.
pub fn endorse(
    tx: Transaction,
    keys: &[String],
    state: &WorldState,
    responders: &BTreeSet<NodeId>,
    peers: usize,
    policy: EndorsementPolicy,
    work: &mut WorkLedger,
) -> Result<EndorsedTx, ConsensusError> {
    let required = policy.required(peers);
    if responders.is_empty() || responders.len() < required {
        return Err(ConsensusError::PolicyUnsatisfied {
            required,
            got: responders.len(),
        });
    }
    let rwset = simulate(state, keys);
    let digest = rwset.digest(&tx.tx_id);
    let endorsements = responders
        .iter()
        .map(|&p| {
            work.charge(p, WorkOp::Verify(1));
            work.charge(p, WorkOp::Endorse(1));
            work.charge(p, WorkOp::Sign(1));
            Endorsement {
                endorser: p,
                signature: sig::sign(p, digest.as_bytes()),
            }
        })
        .collect();
    Ok(EndorsedTx {
        tx,
        rwset,
        endorsements,
    })
}

/// Ordering service: assigns a total order and cuts blocks.
#[derive(Clone, Debug, Default)]
pub struct Orderer {
    batch: Vec<EndorsedTx>,
    next_position: u64,
    batch_opened_at: Option<SimTime>,
}

/// An ordered block and the envelopes it carries.
#[derive(Clone, Debug)]
pub struct OrderedBlock {
    pub block: Block,
    pub envelopes: Vec<EndorsedTx>,
    /// Global order position of the first envelope.
    pub first_position: u64,
}

impl Orderer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Phase 2: enqueue and return the envelope's global position.
    pub fn submit(&mut self, etx: EndorsedTx, now: SimTime) -> u64 {
        if self.batch.is_empty() {
            self.batch_opened_at = Some(now);
        }
        self.batch.push(etx);
        self.next_position += 1;
        self.next_position - 1
    }

    pub fn pending(&self) -> usize {
        self.batch.len()
    }

    pub fn batch_opened_at(&self) -> Option<SimTime> {
        self.batch_opened_at
    }

    /// Cuts up to `max` envelopes into a block on `parent`.
    pub fn cut(
        &mut self,
        parent: &Block,
        orderer: NodeId,
        now: SimTime,
        max: usize,
    ) -> Option<OrderedBlock> {
        if self.batch.is_empty() {
            return None;
        }
        let take = self.batch.len().min(max.max(1));
        let envelopes: Vec<EndorsedTx> = self.batch.drain(..take).collect();
        let first_position = self.next_position - (take + self.batch.len()) as u64;
        self.batch_opened_at = if self.batch.is_empty() { None } else { Some(now) };
        let txs = envelopes.iter().map(|e| e.tx.clone()).collect();
        Some(OrderedBlock {
            block: Block::child_of(parent, txs, orderer, now),
            envelopes,
            first_position,
        })
    }
}

/// A committing peer: ledger plus world state.
#[derive(Clone, Debug)]
pub struct Peer {
    id: NodeId,
    chain: Chain,
    state: WorldState,
    min_endorsements: usize,
}

impl Peer {
    pub fn new(id: NodeId, min_endorsements: usize) -> Self {
        Peer {
            id,
            chain: Chain::new(),
            state: WorldState::default(),
            min_endorsements,
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    /// Phase 3: validate endorsements and replay read sets serially. Invalid
    /// transactions stay in the block but do not touch world state.
    pub fn validate_and_commit(
        &mut self,
        ordered: &OrderedBlock,
        work: &mut WorkLedger,
    ) -> Result<Vec<Validity>, ConsensusError> {
        let height = ordered.block.height;
        let mut labels = Vec::with_capacity(ordered.envelopes.len());
        for (i, etx) in ordered.envelopes.iter().enumerate() {
            labels.push(self.check(etx, height, i as u64, work));
        }
        self.chain
            .push(ordered.block.clone())
            .map_err(|b| ConsensusError::UnknownParent(b.parent))?;
        Ok(labels)
    }

    fn check(&mut self, etx: &EndorsedTx, height: u64, index: u64, work: &mut WorkLedger) -> Validity {
        let digest = etx.rwset.digest(&etx.tx.tx_id);
        work.charge(self.id, WorkOp::Verify(etx.endorsements.len() as u64));
        let distinct: BTreeSet<NodeId> = etx
            .endorsements
            .iter()
            .filter(|e| sig::verify(e.endorser, digest.as_bytes(), &e.signature))
            .map(|e| e.endorser)
            .collect();
        if distinct.len() < self.min_endorsements || distinct.len() != etx.endorsements.len() {
            return Validity::BadEndorsement;
        }
        work.charge(self.id, WorkOp::Execute(1));
        let fresh = etx
            .rwset
            .reads
            .iter()
            .all(|(k, v)| self.state.version(k) == *v);
        if !fresh {
            return Validity::MvccConflict;
        }
        let version = (height << 24) | index;
        for k in &etx.rwset.writes {
            self.state.versions.insert(k.clone(), version);
        }
        Validity::Valid
    }
}

/// Runs all three phases for one transaction: endorse, order (a one-envelope
/// block) and validate on `peer`. Returns the label and the order position.
#[allow(clippy::too_many_arguments)]
pub fn endorse_order_validate(
    peer: &mut Peer,
    orderer: &mut Orderer,
    tx: Transaction,
    keys: &[String],
    responders: &BTreeSet<NodeId>,
    peers: usize,
    policy: EndorsementPolicy,
    work: &mut WorkLedger,
) -> Result<(Validity, u64), ConsensusError> {
    let now = tx.created_at;
    let etx = endorse(tx, keys, peer.state(), responders, peers, policy, work)?;
    let position = orderer.submit(etx, now);
    let parent = peer.chain().tip().clone();
    let ordered = orderer
        .cut(&parent, NodeId(u32::MAX), now, usize::MAX)
        .expect("batch holds the submitted envelope");
    let labels = peer.validate_and_commit(&ordered, work)?;
    Ok((*labels.last().unwrap(), position))
}
