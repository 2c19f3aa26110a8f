use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eov::{endorse, tx_keys, EndorsementPolicy, OrderedBlock, Orderer, Peer, Validity};
use super::poh::{verify_entries, PohEntry, PohRecorder};
use super::pow::PowEngine;
use super::tangle::TangleEngine;
use super::voting::{QuorumConfig, VoteError, VotingEngine};
use super::work::{WorkLedger, WorkOp};
use super::{ConsensusError, ConsensusKind};
use crate::ledger::{hash_block, Block, Chain, DagVertex, Hash, Transaction};
use crate::profile::PlatformProfile;
use crate::types::{NodeId, SimTime, UnknownPlatform};

/// A leader's slot: the PoH entries it recorded and the block they seal.
#[derive(Clone, Debug)]
pub struct SlotBlock {
    pub slot: u64,
    pub start: Hash,
    pub entries: Vec<PohEntry>,
    pub block: Block,
}

impl SlotBlock {
    pub fn end_hash(&self) -> Hash {
        self.entries.last().map_or(self.start, |e| e.hash)
    }
}

#[derive(Clone, Debug)]
pub enum Proposal {
    Block(Block),
    Ordered(OrderedBlock),
    Vertices(Vec<DagVertex>),
    Slot(SlotBlock),
}

/// The common contract. `finalize` returns the ids of transactions that
/// became final (and valid) as a result; the finalized set only grows.
pub trait ConsensusEngine: Send {
    fn kind(&self) -> ConsensusKind;

    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError>;

    fn validate(
        &self,
        proposal: &Proposal,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError>;

    fn finalize(
        &mut self,
        proposal: Proposal,
        votes: &[NodeId],
        work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError>;

    /// Number of transactions finalized so far.
    fn finalized_count(&self) -> usize;
}

fn tx_ids(blocks: &[Block]) -> Vec<Hash> {
    blocks
        .iter()
        .flat_map(|b| b.txs.iter().map(|t| t.tx_id))
        .collect()
}

impl ConsensusEngine for PowEngine {
    fn kind(&self) -> ConsensusKind {
        ConsensusKind::Pow
    }

    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError> {
        Ok(Proposal::Block(PowEngine::propose(self, txs, proposer, now, work)))
    }

    fn validate(
        &self,
        proposal: &Proposal,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        match proposal {
            Proposal::Block(b) => PowEngine::validate(self, b, validator, work),
            _ => Err(ConsensusError::WrongProposal),
        }
    }

    fn finalize(
        &mut self,
        proposal: Proposal,
        _votes: &[NodeId],
        _work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        match proposal {
            Proposal::Block(b) => Ok(tx_ids(&self.accept(b)?)),
            _ => Err(ConsensusError::WrongProposal),
        }
    }

    fn finalized_count(&self) -> usize {
        self.finalized_blocks().map(|b| b.txs.len()).sum()
    }
}

impl ConsensusEngine for VotingEngine {
    fn kind(&self) -> ConsensusKind {
        ConsensusKind::Voting
    }

    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        _work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError> {
        Ok(Proposal::Block(VotingEngine::propose(self, txs, proposer, now)))
    }

    fn validate(
        &self,
        proposal: &Proposal,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        match proposal {
            Proposal::Block(b) => VotingEngine::validate(self, b, validator, work),
            _ => Err(ConsensusError::WrongProposal),
        }
    }

    /// Registers the proposal and casts `votes`; repeated voters count once.
    fn finalize(
        &mut self,
        proposal: Proposal,
        votes: &[NodeId],
        work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        let Proposal::Block(b) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        let (height, hash, proposer) = (b.height, b.block_hash, b.proposer);
        let mut done = self.register(b);
        for &v in votes {
            work.charge(proposer, WorkOp::Verify(1));
            match self.vote(height, hash, v) {
                Ok(blocks) => done.extend(blocks),
                Err(ConsensusError::Vote(VoteError::DuplicateVote(_))) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(tx_ids(&done))
    }

    fn finalized_count(&self) -> usize {
        self.chain().blocks().iter().map(|b| b.txs.len()).sum()
    }
}

impl ConsensusEngine for TangleEngine {
    fn kind(&self) -> ConsensusKind {
        ConsensusKind::Tangle
    }

    /// One vertex per transaction. The first approves two random tips (the
    /// draw is seeded by DAG size); each later one approves its predecessor
    /// and a random tip.
    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        _now: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dag().len() as u64);
        let mut out: Vec<DagVertex> = Vec::with_capacity(txs.len());
        for (i, tx) in txs.into_iter().enumerate() {
            let (a, b) = self.select_tips(&mut rng)?;
            let approves = match out.last() {
                Some(prev) => [prev.vertex_hash, a],
                None => [a, b],
            };
            let (v, attempts) = DagVertex::mine(approves, tx, self.difficulty_bits(), i as u64);
            work.charge(proposer, WorkOp::Hash(attempts));
            out.push(v);
        }
        Ok(Proposal::Vertices(out))
    }

    fn validate(
        &self,
        proposal: &Proposal,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        let Proposal::Vertices(vs) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        for v in vs {
            work.charge(validator, WorkOp::Hash(1));
            work.charge(validator, WorkOp::Verify(1));
            if !v.hash_recomputes() {
                return Err(ConsensusError::BadHash);
            }
            if v.vertex_hash.leading_zero_bits() < self.difficulty_bits() {
                return Err(ConsensusError::InsufficientPow);
            }
            if !v.tx.verify() {
                return Err(ConsensusError::BadSignature);
            }
        }
        Ok(())
    }

    fn finalize(
        &mut self,
        proposal: Proposal,
        votes: &[NodeId],
        work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        let Proposal::Vertices(vs) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        let node = votes.first().copied().unwrap_or(NodeId(0));
        let mut confirmed = Vec::new();
        for v in vs {
            confirmed.extend(self.receive(v, node, work)?);
        }
        Ok(confirmed
            .iter()
            .filter_map(|h| self.dag().get(h).map(|v| v.tx.tx_id))
            .collect())
    }

    fn finalized_count(&self) -> usize {
        self.confirmed().len()
    }
}

/// Single-peer view of endorse-order-validate: the engine holds one
/// committing peer and the ordering service; endorsements are simulated for
/// every peer in the policy.
#[derive(Clone, Debug)]
pub struct EndorseOrderValidateEngine {
    peer: Peer,
    orderer: Orderer,
    peers: usize,
    policy: EndorsementPolicy,
    max_block_txs: usize,
    contention: Option<u64>,
    valid: usize,
}

impl EndorseOrderValidateEngine {
    pub fn new(peer: NodeId, peers: usize, policy: EndorsementPolicy, max_block_txs: usize) -> Self {
        EndorseOrderValidateEngine {
            peer: Peer::new(peer, policy.required(peers)),
            orderer: Orderer::new(),
            peers,
            policy,
            max_block_txs: max_block_txs.max(1),
            contention: None,
            valid: 0,
        }
    }

    pub fn with_contention(mut self, keys: Option<u64>) -> Self {
        self.contention = keys;
        self
    }

    pub fn peer(&self) -> &Peer {
        &self.peer
    }
}

impl ConsensusEngine for EndorseOrderValidateEngine {
    fn kind(&self) -> ConsensusKind {
        ConsensusKind::EndorseOrderValidate
    }

    /// Endorses every transaction against the peer's current state, queues
    /// them at the orderer and cuts one block of up to `max_block_txs`.
    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError> {
        let responders: BTreeSet<NodeId> = (0..self.peers as u32).map(NodeId).collect();
        for tx in txs {
            let keys = tx_keys(&tx, self.contention);
            let etx = endorse(tx, &keys, self.peer.state(), &responders, self.peers, self.policy, work)?;
            self.orderer.submit(etx, now);
        }
        let parent = self.peer.chain().tip().clone();
        let ordered = match self.orderer.cut(&parent, proposer, now, self.max_block_txs) {
            Some(o) => o,
            None => OrderedBlock {
                block: Block::child_of(&parent, Vec::new(), proposer, now),
                envelopes: Vec::new(),
                first_position: 0,
            },
        };
        Ok(Proposal::Ordered(ordered))
    }

    fn validate(
        &self,
        proposal: &Proposal,
        _validator: NodeId,
        _work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        let Proposal::Ordered(o) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        let tip = self.peer.chain().tip();
        if o.block.parent != tip.block_hash {
            return Err(ConsensusError::UnknownParent(o.block.parent));
        }
        if hash_block(&o.block) != o.block.block_hash {
            return Err(ConsensusError::BadHash);
        }
        Ok(())
    }

    fn finalize(
        &mut self,
        proposal: Proposal,
        _votes: &[NodeId],
        work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        let Proposal::Ordered(o) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        let labels = self.peer.validate_and_commit(&o, work)?;
        let ids: Vec<Hash> = o
            .envelopes
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == Validity::Valid)
            .map(|(e, _)| e.tx.tx_id)
            .collect();
        self.valid += ids.len();
        Ok(ids)
    }

    fn finalized_count(&self) -> usize {
        self.valid
    }
}

/// Slot-based PoH ledger. A slot block is appended once a supermajority of
/// validators has voted for it.
#[derive(Clone, Debug)]
pub struct PohEngine {
    chain: Chain,
    poh_tip: Hash,
    ticks_per_slot: u64,
    hashes_per_tick: u64,
    supermajority: usize,
    next_slot: u64,
    votes: BTreeMap<Hash, BTreeSet<NodeId>>,
}

impl PohEngine {
    pub fn new(validators: usize, ticks_per_slot: u64, hashes_per_tick: u64) -> Self {
        let chain = Chain::new();
        let poh_tip = chain.tip().block_hash;
        PohEngine {
            chain,
            poh_tip,
            ticks_per_slot: ticks_per_slot.max(1),
            hashes_per_tick: hashes_per_tick.max(1),
            supermajority: supermajority(validators),
            next_slot: 0,
            votes: BTreeMap::new(),
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn poh_tip(&self) -> Hash {
        self.poh_tip
    }

    /// Records one slot on top of the current PoH tip: `ticks_per_slot`
    /// ticks with `txs` mixed in after the first.
    pub fn record_slot(
        &self,
        slot: u64,
        txs: Vec<Transaction>,
        leader: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> SlotBlock {
        let mut rec = PohRecorder::new(self.poh_tip);
        let mut entries = Vec::with_capacity(self.ticks_per_slot as usize + 1);
        for i in 0..self.ticks_per_slot {
            entries.push(rec.tick(self.hashes_per_tick, leader, work));
            if i == 0 && !txs.is_empty() {
                entries.push(rec.record(txs.clone(), leader, work));
            }
        }
        let mut block = Block::child_of(self.chain.tip(), txs, leader, now);
        block.nonce = slot;
        block.rehash();
        SlotBlock {
            slot,
            start: self.poh_tip,
            entries,
            block,
        }
    }
}

/// Votes needed to confirm a slot: more than two thirds.
pub fn supermajority(validators: usize) -> usize {
    2 * validators / 3 + 1
}

impl ConsensusEngine for PohEngine {
    fn kind(&self) -> ConsensusKind {
        ConsensusKind::Poh
    }

    fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Proposal, ConsensusError> {
        let slot = self.next_slot;
        self.next_slot += 1;
        Ok(Proposal::Slot(self.record_slot(slot, txs, proposer, now, work)))
    }

    fn validate(
        &self,
        proposal: &Proposal,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        let Proposal::Slot(s) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        if s.start != self.poh_tip || s.block.parent != self.chain.tip().block_hash {
            return Err(ConsensusError::UnknownParent(s.block.parent));
        }
        if hash_block(&s.block) != s.block.block_hash {
            return Err(ConsensusError::BadHash);
        }
        let recorded: Vec<Hash> = s
            .entries
            .iter()
            .flat_map(|e| e.txs.iter().map(|t| t.tx_id))
            .collect();
        let in_block: Vec<Hash> = s.block.txs.iter().map(|t| t.tx_id).collect();
        if recorded != in_block || !verify_entries(s.start, &s.entries, validator, work) {
            return Err(ConsensusError::BadPoh);
        }
        Ok(())
    }

    fn finalize(
        &mut self,
        proposal: Proposal,
        votes: &[NodeId],
        _work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        let Proposal::Slot(s) = proposal else {
            return Err(ConsensusError::WrongProposal);
        };
        let tally = self.votes.entry(s.block.block_hash).or_default();
        tally.extend(votes.iter().copied());
        if tally.len() < self.supermajority {
            return Ok(Vec::new());
        }
        if s.block.parent != self.chain.tip().block_hash {
            return Err(ConsensusError::UnknownParent(s.block.parent));
        }
        self.votes.remove(&s.block.block_hash);
        self.poh_tip = s.end_hash();
        self.next_slot = self.next_slot.max(s.slot + 1);
        let ids = s.block.txs.iter().map(|t| t.tx_id).collect();
        self.chain
            .push(s.block)
            .map_err(|b| ConsensusError::UnknownParent(b.parent))?;
        Ok(ids)
    }

    fn finalized_count(&self) -> usize {
        self.chain.blocks().iter().map(|b| b.txs.len()).sum()
    }
}

/// An engine together with the profile that configured it.
pub struct EngineHandle {
    pub profile: PlatformProfile,
    pub engine: Box<dyn ConsensusEngine>,
}

/// Builds the engine for a profile name ("ethereum", "quorum", "fabric",
/// "iota", "solana") for a network of `validators` managers.
pub fn engine_for(name: &str, validators: usize, seed: u64) -> Result<EngineHandle, UnknownPlatform> {
    let profile = PlatformProfile::by_name(name)?;
    let c = &profile.chain;
    let n = validators.max(1);
    let engine: Box<dyn ConsensusEngine> = match profile.consensus {
        ConsensusKind::Pow => Box::new(PowEngine::new(c.difficulty_bits, c.finality_depth, seed)),
        ConsensusKind::Voting => Box::new(VotingEngine::new(
            QuorumConfig::for_validators(n).expect("for_validators accepts any n >= 1"),
        )),
        ConsensusKind::EndorseOrderValidate => Box::new(EndorseOrderValidateEngine::new(
            NodeId(0),
            n,
            policy_for(c.endorsements_required),
            c.max_block_txs,
        )),
        ConsensusKind::Tangle => {
            Box::new(TangleEngine::new(c.difficulty_bits, c.confirmation_weight))
        }
        ConsensusKind::Poh => Box::new(PohEngine::new(n, c.ticks_per_slot, c.hashes_per_tick)),
    };
    Ok(EngineHandle { profile, engine })
}

/// Profile encoding: 0 means every peer must endorse.
pub fn policy_for(required: usize) -> EndorsementPolicy {
    match required {
        0 => EndorsementPolicy::AllOf,
        k => EndorsementPolicy::KOfN(k),
    }
}
