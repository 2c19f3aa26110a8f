//! Single-round quorum voting.

use std::collections::{BTreeMap, BTreeSet};

use super::work::{WorkLedger, WorkOp};
use super::ConsensusError;
use crate::ledger::{Block, Chain, Hash, Transaction};
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuorumConfig {
    pub n: usize,
    pub f: usize,
    pub quorum: usize,
}

impl QuorumConfig {
    /// Requires `n >= 3f + 1`; quorum is `2f + 1`.
    pub fn new(n: usize, f: usize) -> Result<Self, ConsensusError> {
        if n == 0 || n < 3 * f + 1 {
            return Err(ConsensusError::InvalidQuorum { n, f });
        }
        Ok(QuorumConfig {
            n,
            f,
            quorum: 2 * f + 1,
        })
    }

    /// Largest tolerable `f` for `n` validators.
    pub fn for_validators(n: usize) -> Result<Self, ConsensusError> {
        Self::new(n, n.saturating_sub(1) / 3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundOutcome {
    Finalized,
    Pending,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundResult {
    pub outcome: RoundOutcome,
    pub distinct_votes: usize,
    /// Voters that appeared more than once; each was counted once.
    pub duplicates: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VoteError {
    #[error("{0} already voted in this round")]
    DuplicateVote(NodeId),
    #[error("{0} is not a validator")]
    UnknownValidator(NodeId),
}

/// Votes for one proposal.
#[derive(Clone, Debug, Default)]
pub struct VoteTally {
    voters: BTreeSet<NodeId>,
}

impl VoteTally {
    pub fn cast(&mut self, voter: NodeId) -> Result<usize, VoteError> {
        if !self.voters.insert(voter) {
            return Err(VoteError::DuplicateVote(voter));
        }
        Ok(self.voters.len())
    }

    pub fn count(&self) -> usize {
        self.voters.len()
    }
}

/// Counts `votes` for `proposal` against the quorum threshold and charges the
/// round's `n(n-1)` vote messages to the proposer.
pub fn voting_round(
    config: &QuorumConfig,
    proposal: &Block,
    votes: &[NodeId],
    validators: &BTreeSet<NodeId>,
    work: &mut WorkLedger,
) -> Result<RoundResult, VoteError> {
    let mut tally = VoteTally::default();
    let mut duplicates = Vec::new();
    for &v in votes {
        if !validators.contains(&v) {
            return Err(VoteError::UnknownValidator(v));
        }
        if let Err(VoteError::DuplicateVote(d)) = tally.cast(v) {
            duplicates.push(d);
        }
    }
    for _ in 0..config.n * config.n.saturating_sub(1) {
        work.charge(proposal.proposer, WorkOp::Send { bytes: 0 });
    }
    let outcome = if tally.count() >= config.quorum {
        RoundOutcome::Finalized
    } else {
        RoundOutcome::Pending
    };
    Ok(RoundResult {
        outcome,
        distinct_votes: tally.count(),
        duplicates,
    })
}

/// Per-node voting state: the finalized chain plus tallies for proposals at
/// each pending height.
#[derive(Clone, Debug)]
pub struct VotingEngine {
    config: QuorumConfig,
    chain: Chain,
    proposals: BTreeMap<u64, BTreeMap<Hash, Block>>,
    tallies: BTreeMap<(u64, Hash), VoteTally>,
    /// Votes that arrived before their proposal.
    early: BTreeMap<(u64, Hash), Vec<NodeId>>,
}

impl VotingEngine {
    pub fn new(config: QuorumConfig) -> Self {
        VotingEngine {
            config,
            chain: Chain::new(),
            proposals: BTreeMap::new(),
            tallies: BTreeMap::new(),
            early: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &QuorumConfig {
        &self.config
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn height(&self) -> u64 {
        self.chain.height()
    }

    pub fn propose(&self, txs: Vec<Transaction>, proposer: NodeId, now: SimTime) -> Block {
        Block::child_of(self.chain.tip(), txs, proposer, now)
    }

    /// A proposal is valid iff it extends the finalized tip and every
    /// transaction verifies.
    pub fn validate(
        &self,
        block: &Block,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        work.charge(validator, WorkOp::Execute(block.txs.len() as u64));
        if block.parent != self.chain.tip().block_hash {
            return Err(ConsensusError::UnknownParent(block.parent));
        }
        if block.height != self.chain.height() + 1 {
            return Err(ConsensusError::BadHeight);
        }
        if crate::ledger::hash_block(block) != block.block_hash {
            return Err(ConsensusError::BadHash);
        }
        Ok(())
    }

    /// Registers a proposal so votes can be tallied against it.
    /// Returns any blocks finalized by votes that were waiting for it.
    pub fn register(&mut self, block: Block) -> Vec<Block> {
        let (height, hash) = (block.height, block.block_hash);
        if height <= self.chain.height() {
            return Vec::new();
        }
        self.proposals.entry(height).or_default().insert(hash, block);
        let early = self.early.remove(&(height, hash)).unwrap_or_default();
        let mut out = Vec::new();
        for voter in early {
            if let Ok(blocks) = self.vote(height, hash, voter) {
                out.extend(blocks);
            }
        }
        out
    }

    /// Records a vote and returns every block that became final, in height
    /// order. Only one block per height can ever be appended.
    pub fn vote(
        &mut self,
        height: u64,
        block_hash: Hash,
        voter: NodeId,
    ) -> Result<Vec<Block>, ConsensusError> {
        if height <= self.chain.height() {
            return Ok(Vec::new());
        }
        let known = self
            .proposals
            .get(&height)
            .is_some_and(|m| m.contains_key(&block_hash));
        if !known {
            self.early.entry((height, block_hash)).or_default().push(voter);
            return Ok(Vec::new());
        }
        self.tallies
            .entry((height, block_hash))
            .or_default()
            .cast(voter)
            .map_err(ConsensusError::Vote)?;
        Ok(self.drain_final())
    }

    fn drain_final(&mut self) -> Vec<Block> {
        let mut out = Vec::new();
        loop {
            let next = self.chain.height() + 1;
            let tip = self.chain.tip().block_hash;
            let ready = self.proposals.get(&next).and_then(|m| {
                m.values()
                    .filter(|b| b.parent == tip)
                    .find(|b| {
                        self.tallies
                            .get(&(next, b.block_hash))
                            .is_some_and(|t| t.count() >= self.config.quorum)
                    })
                    .map(|b| b.block_hash)
            });
            let Some(hash) = ready else { break };
            let block = self.proposals.remove(&next).unwrap().remove(&hash).unwrap();
            self.tallies.retain(|(h, _), _| *h > next);
            self.early.retain(|(h, _), _| *h > next);
            self.chain.push(block.clone()).expect("parent checked above");
            out.push(block);
        }
        out
    }
}
