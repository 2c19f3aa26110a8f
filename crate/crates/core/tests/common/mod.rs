//! Helpers shared by the property suites and the acceptance run.

#![allow(dead_code)]

use std::collections::BTreeSet;

use dltsim::consensus::{QuorumConfig, VotingEngine};
use dltsim::ledger::{Block, Hash, Transaction, TxKind};
use dltsim::{NodeId, SimTime};

/// What one voter sends to one observer at height 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ballot {
    None,
    A,
    B,
    Both,
}

pub const BALLOTS: [Ballot; 4] = [Ballot::None, Ballot::A, Ballot::B, Ballot::Both];
const HONEST: [Ballot; 3] = [Ballot::None, Ballot::A, Ballot::B];

/// Odometer over `len` digits in base `base`.
pub fn assignments(base: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..base.pow(len as u32)).map(move |mut i| {
        (0..len)
            .map(|_| {
                let d = i % base;
                i /= base;
                d
            })
            .collect()
    })
}

/// Two conflicting proposals at height 1.
pub fn proposals() -> (Block, Block) {
    let g = Block::genesis();
    let tx = |n: u8| Transaction::new(NodeId(9), TxKind::Transfer, vec![n], SimTime(0));
    let a = Block::child_of(&g, vec![tx(1)], NodeId(0), SimTime(1));
    let b = Block::child_of(&g, vec![tx(2)], NodeId(0), SimTime(1));
    (a, b)
}

/// Enumerates every honest vote assignment and every per-observer
/// equivocation by the Byzantine set, and returns the number of
/// executions in which honest observers finalized conflicting blocks.
pub fn conflicting_executions(n: usize, byzantine: &[u32], order_b_first: bool) -> usize {
    let config = QuorumConfig::for_validators(n).unwrap();
    let (a, b) = proposals();
    let honest: Vec<u32> = (0..n as u32).filter(|v| !byzantine.contains(v)).collect();
    let mut violations = 0;
    for honest_votes in assignments(HONEST.len(), honest.len()) {
        // one ballot per (byzantine voter, honest observer) pair
        for byz_votes in assignments(BALLOTS.len(), byzantine.len() * honest.len()) {
            let mut finals: BTreeSet<Hash> = BTreeSet::new();
            for (o, _) in honest.iter().enumerate() {
                let mut engine = VotingEngine::new(config);
                engine.register(a.clone());
                engine.register(b.clone());
                let mut cast = |voter: u32, ballot: Ballot| {
                    let mut targets = match ballot {
                        Ballot::None => vec![],
                        Ballot::A => vec![a.block_hash],
                        Ballot::B => vec![b.block_hash],
                        Ballot::Both => vec![a.block_hash, b.block_hash],
                    };
                    if order_b_first {
                        targets.reverse();
                    }
                    let mut out = Vec::new();
                    for h in targets {
                        out.extend(engine.vote(1, h, NodeId(voter)).unwrap());
                    }
                    out
                };
                let mut finalized: Vec<Block> = Vec::new();
                for (i, &v) in honest.iter().enumerate() {
                    finalized.extend(cast(v, HONEST[honest_votes[i]]));
                }
                for (j, &v) in byzantine.iter().enumerate() {
                    finalized.extend(cast(v, BALLOTS[byz_votes[j * honest.len() + o]]));
                }
                assert!(finalized.len() <= 1, "one observer finalized twice at height 1");
                assert_eq!(engine.height(), finalized.len() as u64);
                finals.extend(finalized.iter().map(|b| b.block_hash));
            }
            if finals.len() > 1 {
                violations += 1;
            }
        }
    }
    violations
}
