//! Consensus engines behind one propose/validate/finalize contract, plus the
//! per-node work accounting that feeds the CPU model.

mod engine;
pub mod eov;
pub mod poh;
pub mod pow;
pub mod tangle;
pub mod voting;
pub mod work;

pub use engine::{
    engine_for, policy_for, supermajority, ConsensusEngine, EndorseOrderValidateEngine,
    EngineHandle, PohEngine, Proposal, SlotBlock,
};
pub use eov::{
    endorse, endorse_order_validate, tx_keys, EndorsedTx, Endorsement, EndorsementPolicy,
    OrderedBlock, Orderer, Peer, RwSet, Validity, WorldState,
};
pub use poh::{
    poh_extend, poh_extend_charged, poh_verify, verify_entries, PohEntry, PohProof, PohRecorder,
};
pub use pow::{meets_difficulty, pow_seal, PowEngine, Sealed};
pub use tangle::{tangle_select_tips, TangleEngine};
pub use voting::{voting_round, QuorumConfig, RoundOutcome, RoundResult, VoteError, VotingEngine};
pub use work::{CpuCosts, NodeWork, WorkLedger, WorkOp};

pub use crate::profile::ConsensusKind;

use crate::ledger::{DagError, Hash};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("invalid quorum: n={n} cannot tolerate f={f}")]
    InvalidQuorum { n: usize, f: usize },
    #[error("unknown parent {0:?}")]
    UnknownParent(Hash),
    #[error("block height does not follow its parent")]
    BadHeight,
    #[error("stored hash does not match contents")]
    BadHash,
    #[error("hash does not meet the difficulty target")]
    InsufficientPow,
    #[error("signature does not verify")]
    BadSignature,
    #[error("dag has no tips")]
    EmptyDag,
    #[error("endorsement policy unsatisfied: {got} of {required}")]
    PolicyUnsatisfied { required: usize, got: usize },
    #[error("poh entries do not verify")]
    BadPoh,
    #[error("proposal type does not match engine")]
    WrongProposal,
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Dag(#[from] DagError),
}
