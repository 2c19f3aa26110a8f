use sha2::{Digest, Sha256};

use super::{Hash, Transaction};
use crate::types::{NodeId, SimTime};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub height: u64,
    pub parent: Hash,
    pub txs: Vec<Transaction>,
    pub proposer: NodeId,
    pub timestamp: SimTime,
    pub nonce: u64,
    pub block_hash: Hash,
}

impl Block {
    /// Genesis: height 0, all-zero parent, timestamp 0.
    pub fn genesis() -> Block {
        let mut block = Block {
            height: 0,
            parent: Hash::ZERO,
            txs: Vec::new(),
            proposer: NodeId(0),
            timestamp: SimTime::ZERO,
            nonce: 0,
            block_hash: Hash::ZERO,
        };
        block.block_hash = hash_block(&block);
        block
    }

    /// An unsealed child of `parent`; `block_hash` is filled in.
    pub fn child_of(
        parent: &Block,
        txs: Vec<Transaction>,
        proposer: NodeId,
        timestamp: SimTime,
    ) -> Block {
        let mut block = Block {
            height: parent.height + 1,
            parent: parent.block_hash,
            txs,
            proposer,
            timestamp,
            nonce: 0,
            block_hash: Hash::ZERO,
        };
        block.block_hash = hash_block(&block);
        block
    }

    pub fn rehash(&mut self) {
        self.block_hash = hash_block(self);
    }
}

/// Hasher state after absorbing every field except the nonce, which is
/// always the final input. Lets nonce searches reuse the prefix.
#[derive(Clone)]
pub struct HeaderMidstate(Sha256);

impl HeaderMidstate {
    pub fn new(block: &Block) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"block");
        hasher.update(block.height.to_le_bytes());
        hasher.update(block.parent.as_bytes());
        hasher.update(block.proposer.0.to_le_bytes());
        hasher.update(block.timestamp.0.to_le_bytes());
        hasher.update((block.txs.len() as u64).to_le_bytes());
        let mut buf = Vec::new();
        for tx in &block.txs {
            buf.clear();
            tx.encode_into(&mut buf);
            hasher.update(&buf);
        }
        HeaderMidstate(hasher)
    }

    pub fn with_nonce(&self, nonce: u64) -> Hash {
        let mut hasher = self.0.clone();
        hasher.update(nonce.to_le_bytes());
        Hash(hasher.finalize().into())
    }
}

/// Digest over every field of `block` except `block_hash`.
pub fn hash_block(block: &Block) -> Hash {
    HeaderMidstate::new(block).with_nonce(block.nonce)
}

/// Outcome of a full chain audit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainAudit {
    /// Indices of blocks that fail, either directly or because an ancestor
    /// failed and the link to it no longer holds.
    pub invalid: Vec<usize>,
}

impl ChainAudit {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_empty()
    }

    pub fn first_invalid(&self) -> Option<usize> {
        self.invalid.first().copied()
    }
}

/// Recomputes every hash and checks parent/height linkage. A block whose
/// ancestor fails is itself reported, since its parent pointer no longer
/// matches the recomputed ancestor.
pub fn audit_chain(chain: &[Block]) -> ChainAudit {
    let mut invalid = Vec::new();
    let mut prev_recomputed: Option<Hash> = None;
    let mut tainted = false;
    for (i, block) in chain.iter().enumerate() {
        let recomputed = hash_block(block);
        let link_ok = match (i, prev_recomputed) {
            (0, _) => block.height == 0 && block.parent.is_zero(),
            (_, Some(prev)) => block.parent == prev && block.height == chain[i - 1].height + 1,
            (_, None) => false,
        };
        let ok = !tainted && link_ok && recomputed == block.block_hash;
        if !ok {
            tainted = true;
            invalid.push(i);
        }
        prev_recomputed = Some(recomputed);
    }
    if chain.is_empty() {
        invalid.push(0);
    }
    ChainAudit { invalid }
}

/// True iff linkage and every stored hash are consistent. Never panics.
pub fn verify_chain(chain: &[Block]) -> bool {
    audit_chain(chain).is_valid()
}

/// An append-only linear chain starting at genesis.
#[derive(Clone, Debug)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        Chain {
            blocks: vec![Block::genesis()],
        }
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Builds, hashes and appends a block of `txs` on the current tip.
    pub fn append(&mut self, txs: Vec<Transaction>, proposer: NodeId, timestamp: SimTime) -> &Block {
        let block = Block::child_of(self.tip(), txs, proposer, timestamp);
        self.blocks.push(block);
        self.tip()
    }

    /// Appends an externally built block if it links onto the tip.
    pub fn push(&mut self, block: Block) -> Result<(), Block> {
        if block.parent == self.tip().block_hash
            && block.height == self.height() + 1
            && hash_block(&block) == block.block_hash
        {
            self.blocks.push(block);
            Ok(())
        } else {
            Err(block)
        }
    }
}
