use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::{Hash, Transaction, TxKind};
use crate::types::{NodeId, SimTime};

/// A Tangle vertex approving two earlier vertices.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DagVertex {
    pub vertex_hash: Hash,
    pub approves: [Hash; 2],
    pub tx: Transaction,
    pub pow_nonce: u64,
}

#[derive(Clone)]
struct VertexMidstate(Sha256);

impl VertexMidstate {
    fn new(approves: &[Hash; 2], tx: &Transaction) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"vertex");
        hasher.update(approves[0].as_bytes());
        hasher.update(approves[1].as_bytes());
        let mut buf = Vec::new();
        tx.encode_into(&mut buf);
        hasher.update(&buf);
        VertexMidstate(hasher)
    }

    fn with_nonce(&self, nonce: u64) -> Hash {
        let mut hasher = self.0.clone();
        hasher.update(nonce.to_le_bytes());
        Hash(hasher.finalize().into())
    }
}

pub fn hash_vertex(approves: &[Hash; 2], tx: &Transaction, pow_nonce: u64) -> Hash {
    VertexMidstate::new(approves, tx).with_nonce(pow_nonce)
}

impl DagVertex {
    /// Vertex with an explicit nonce; no work is done.
    pub fn with_nonce(approves: [Hash; 2], tx: Transaction, pow_nonce: u64) -> Self {
        let vertex_hash = hash_vertex(&approves, &tx, pow_nonce);
        DagVertex {
            vertex_hash,
            approves,
            tx,
            pow_nonce,
        }
    }

    /// Searches nonces upward from `start_nonce` until the vertex hash has at
    /// least `difficulty_bits` leading zero bits. Returns the vertex and the
    /// number of hash attempts.
    pub fn mine(
        approves: [Hash; 2],
        tx: Transaction,
        difficulty_bits: u32,
        start_nonce: u64,
    ) -> (DagVertex, u64) {
        let mid = VertexMidstate::new(&approves, &tx);
        let mut nonce = start_nonce;
        let mut attempts = 0u64;
        loop {
            attempts += 1;
            let h = mid.with_nonce(nonce);
            if h.leading_zero_bits() >= difficulty_bits {
                return (
                    DagVertex {
                        vertex_hash: h,
                        approves,
                        tx,
                        pow_nonce: nonce,
                    },
                    attempts,
                );
            }
            nonce = nonce.wrapping_add(1);
        }
    }

    pub fn hash_recomputes(&self) -> bool {
        hash_vertex(&self.approves, &self.tx, self.pow_nonce) == self.vertex_hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("approved parent {0:?} is not in the DAG")]
    UnknownParent(Hash),
    #[error("vertex hash has {found} leading zero bits, {required} required")]
    InsufficientPow { required: u32, found: u32 },
    #[error("vertex hash does not cover its contents")]
    BadHash,
    #[error("vertex {0:?} already attached")]
    Duplicate(Hash),
}

/// Tangle ledger: vertices keyed by hash plus the current tip set.
#[derive(Clone, Debug)]
pub struct Dag {
    genesis: Hash,
    vertices: HashMap<Hash, DagVertex>,
    approvers: HashMap<Hash, Vec<Hash>>,
    tips: BTreeSet<Hash>,
    order: Vec<Hash>,
}

impl Default for Dag {
    fn default() -> Self {
        Self::new()
    }
}

impl Dag {
    pub fn new() -> Self {
        let tx = Transaction::new(NodeId(0), TxKind::DataAnchor, Vec::new(), SimTime::ZERO);
        let genesis = DagVertex::with_nonce([Hash::ZERO, Hash::ZERO], tx, 0);
        let gh = genesis.vertex_hash;
        let mut vertices = HashMap::new();
        vertices.insert(gh, genesis);
        Dag {
            genesis: gh,
            vertices,
            approvers: HashMap::new(),
            tips: BTreeSet::from([gh]),
            order: vec![gh],
        }
    }

    pub fn genesis(&self) -> Hash {
        self.genesis
    }

    /// Unapproved vertices in ascending hash order.
    pub fn tips(&self) -> &BTreeSet<Hash> {
        &self.tips
    }

    pub fn contains(&self, h: &Hash) -> bool {
        self.vertices.contains_key(h)
    }

    pub fn get(&self, h: &Hash) -> Option<&DagVertex> {
        self.vertices.get(h)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Direct approvers of `h`.
    pub fn approvers(&self, h: &Hash) -> &[Hash] {
        self.approvers.get(h).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Vertices in attachment order, genesis first.
    pub fn attachment_order(&self) -> &[Hash] {
        &self.order
    }

    /// Inserts `vertex` after checking parents and little-PoW. Parents leave
    /// the tip set and the vertex joins it.
    pub fn attach(&mut self, vertex: DagVertex, difficulty_bits: u32) -> Result<(), DagError> {
        if self.vertices.contains_key(&vertex.vertex_hash) {
            return Err(DagError::Duplicate(vertex.vertex_hash));
        }
        for parent in &vertex.approves {
            if !self.vertices.contains_key(parent) {
                return Err(DagError::UnknownParent(*parent));
            }
        }
        if !vertex.hash_recomputes() {
            return Err(DagError::BadHash);
        }
        let found = vertex.vertex_hash.leading_zero_bits();
        if found < difficulty_bits {
            return Err(DagError::InsufficientPow {
                required: difficulty_bits,
                found,
            });
        }
        let h = vertex.vertex_hash;
        let [a, b] = vertex.approves;
        self.tips.remove(&a);
        self.tips.remove(&b);
        self.approvers.entry(a).or_default().push(h);
        if b != a {
            self.approvers.entry(b).or_default().push(h);
        }
        self.tips.insert(h);
        self.vertices.insert(h, vertex);
        self.order.push(h);
        Ok(())
    }
}

/// Free-function form of [`Dag::attach`].
pub fn attach_vertex(dag: &mut Dag, vertex: DagVertex, difficulty_bits: u32) -> Result<(), DagError> {
    dag.attach(vertex, difficulty_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(n: u8) -> Transaction {
        Transaction::new(NodeId(1), TxKind::DataAnchor, vec![n], SimTime::from_ms(n as u64))
    }

    #[test]
    fn first_vertex_replaces_genesis_tip() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        let (v1, _) = DagVertex::mine([g, g], tx(1), 4, 0);
        let h1 = v1.vertex_hash;
        dag.attach(v1, 4).unwrap();
        assert_eq!(dag.tips().iter().copied().collect::<Vec<_>>(), vec![h1]);

        let (v2, _) = DagVertex::mine([h1, g], tx(2), 4, 0);
        let h2 = v2.vertex_hash;
        dag.attach(v2, 4).unwrap();
        assert_eq!(dag.tips().iter().copied().collect::<Vec<_>>(), vec![h2]);
        assert_eq!(dag.approvers(&g), &[h1, h2]);
    }

    #[test]
    fn unknown_parent_is_rejected() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        let ghost = Hash::digest(b"ghost");
        let (v, _) = DagVertex::mine([g, ghost], tx(1), 0, 0);
        assert_eq!(dag.attach(v, 0), Err(DagError::UnknownParent(ghost)));
    }

    #[test]
    fn failing_nonce_is_rejected() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        // Brute-force a nonce whose hash misses the 8-bit target.
        let t = tx(9);
        let nonce = (0u64..)
            .find(|&n| hash_vertex(&[g, g], &t, n).leading_zero_bits() < 8)
            .unwrap();
        let v = DagVertex::with_nonce([g, g], t, nonce);
        assert!(matches!(
            dag.attach(v, 8),
            Err(DagError::InsufficientPow { required: 8, .. })
        ));
        assert_eq!(dag.len(), 1);
    }

    #[test]
    fn tampered_vertex_is_rejected() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        let (mut v, _) = DagVertex::mine([g, g], tx(1), 0, 0);
        v.tx.payload.push(7);
        assert_eq!(dag.attach(v, 0), Err(DagError::BadHash));
    }
}
