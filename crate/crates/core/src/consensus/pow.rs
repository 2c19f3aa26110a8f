//! Proof-of-work sealing and a longest-chain block tree.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::work::{WorkLedger, WorkOp};
use super::ConsensusError;
use crate::ledger::{hash_block, Block, Hash, HeaderMidstate, Transaction};
use crate::types::{NodeId, SimTime};

/// A sealed block and the number of hash attempts it took.
#[derive(Clone, Debug)]
pub struct Sealed {
    pub block: Block,
    pub attempts: u64,
}

/// Searches nonces, starting from a seed-derived offset, until the block
/// hash has at least `difficulty_bits` leading zero bits.
pub fn pow_seal(mut block: Block, difficulty_bits: u32, seed: u64) -> Sealed {
    assert!(difficulty_bits <= 64, "difficulty must be in [0, 64]");
    let mid = HeaderMidstate::new(&block);
    let mut nonce: u64 = ChaCha8Rng::seed_from_u64(seed).random();
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        let h = mid.with_nonce(nonce);
        if h.leading_zero_bits() >= difficulty_bits {
            block.nonce = nonce;
            block.block_hash = h;
            return Sealed { block, attempts };
        }
        nonce = nonce.wrapping_add(1);
    }
}

pub fn meets_difficulty(block: &Block, difficulty_bits: u32) -> bool {
    block.block_hash.leading_zero_bits() >= difficulty_bits
}

/// Per-node PoW state: a block tree with longest-chain fork choice (ties go
/// to the lexicographically smaller hash) and depth-based finality.
/// Reorganisations never cross the finalized height.
#[derive(Clone, Debug)]
pub struct PowEngine {
    difficulty_bits: u32,
    finality_depth: u64,
    blocks: HashMap<Hash, Block>,
    tip: Hash,
    finalized: Vec<Hash>,
    seal_counter: u64,
    seed: u64,
}

impl PowEngine {
    pub fn new(difficulty_bits: u32, finality_depth: u64, seed: u64) -> Self {
        let genesis = Block::genesis();
        let gh = genesis.block_hash;
        PowEngine {
            difficulty_bits,
            finality_depth,
            blocks: HashMap::from([(gh, genesis)]),
            tip: gh,
            finalized: vec![gh],
            seal_counter: 0,
            seed,
        }
    }

    pub fn difficulty_bits(&self) -> u32 {
        self.difficulty_bits
    }

    pub fn tip(&self) -> &Block {
        &self.blocks[&self.tip]
    }

    pub fn get(&self, h: &Hash) -> Option<&Block> {
        self.blocks.get(h)
    }

    pub fn finalized_height(&self) -> u64 {
        self.finalized.len() as u64 - 1
    }

    /// Finalized chain, genesis first.
    pub fn finalized_blocks(&self) -> impl Iterator<Item = &Block> {
        self.finalized.iter().map(|h| &self.blocks[h])
    }

    /// Builds a block on the current tip and seals it, charging attempts.
    pub fn propose(
        &mut self,
        txs: Vec<Transaction>,
        proposer: NodeId,
        now: SimTime,
        work: &mut WorkLedger,
    ) -> Block {
        let block = Block::child_of(self.tip(), txs, proposer, now);
        self.seal_counter += 1;
        let seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.seal_counter);
        let sealed = pow_seal(block, self.difficulty_bits, seed);
        work.charge(proposer, WorkOp::Hash(sealed.attempts));
        sealed.block
    }

    /// Structural and PoW checks; does not modify state.
    pub fn validate(
        &self,
        block: &Block,
        validator: NodeId,
        work: &mut WorkLedger,
    ) -> Result<(), ConsensusError> {
        work.charge(validator, WorkOp::Hash(1));
        if hash_block(block) != block.block_hash {
            return Err(ConsensusError::BadHash);
        }
        if !meets_difficulty(block, self.difficulty_bits) {
            return Err(ConsensusError::InsufficientPow);
        }
        let parent = self
            .blocks
            .get(&block.parent)
            .ok_or(ConsensusError::UnknownParent(block.parent))?;
        if block.height != parent.height + 1 {
            return Err(ConsensusError::BadHeight);
        }
        Ok(())
    }

    fn better(&self, a: &Block, b: &Block) -> bool {
        (a.height, std::cmp::Reverse(a.block_hash)) > (b.height, std::cmp::Reverse(b.block_hash))
    }

    fn descends_from_finalized(&self, mut h: Hash) -> bool {
        let fin_h = self.finalized_height();
        let fin = *self.finalized.last().unwrap();
        loop {
            let b = &self.blocks[&h];
            if b.height == fin_h {
                return h == fin;
            }
            if b.height < fin_h {
                return false;
            }
            h = b.parent;
        }
    }

    /// Inserts a validated block, applies fork choice and returns blocks that
    /// became final as a result (ascending height).
    pub fn accept(&mut self, block: Block) -> Result<Vec<Block>, ConsensusError> {
        if !self.blocks.contains_key(&block.parent) {
            return Err(ConsensusError::UnknownParent(block.parent));
        }
        let h = block.block_hash;
        if self.blocks.contains_key(&h) {
            return Ok(Vec::new());
        }
        self.blocks.insert(h, block);
        let candidate = &self.blocks[&h];
        if self.better(candidate, self.tip()) && self.descends_from_finalized(h) {
            self.tip = h;
        }
        Ok(self.advance_finality())
    }

    fn advance_finality(&mut self) -> Vec<Block> {
        let tip_height = self.tip().height;
        if tip_height < self.finality_depth {
            return Vec::new();
        }
        let target = tip_height - self.finality_depth;
        if target <= self.finalized_height() {
            return Vec::new();
        }
        let mut path = Vec::new();
        let mut h = self.tip;
        while self.blocks[&h].height > self.finalized_height() {
            if self.blocks[&h].height <= target {
                path.push(h);
            }
            h = self.blocks[&h].parent;
        }
        path.reverse();
        self.finalized.extend(path.iter().copied());
        path.iter().map(|h| self.blocks[h].clone()).collect()
    }

    /// Transactions on the canonical branch above the finalized height.
    pub fn unfinalized_canonical_txs(&self) -> Vec<Hash> {
        let mut out = Vec::new();
        let mut h = self.tip;
        while self.blocks[&h].height > self.finalized_height() {
            out.extend(self.blocks[&h].txs.iter().map(|t| t.tx_id));
            h = self.blocks[&h].parent;
        }
        out
    }
}
