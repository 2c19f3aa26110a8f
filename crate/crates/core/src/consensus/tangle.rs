//! Tangle engine: uniform tip selection, little-PoW attachment with a
//! solidification buffer, and cumulative-weight confirmation.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

use super::work::{WorkLedger, WorkOp};
use super::ConsensusError;
use crate::ledger::{Dag, DagError, DagVertex, Hash};
use crate::types::NodeId;

/// Two tips drawn uniformly without replacement; a lone tip is returned twice.
pub fn tangle_select_tips<R: Rng + ?Sized>(
    dag: &Dag,
    rng: &mut R,
) -> Result<(Hash, Hash), ConsensusError> {
    let tips: Vec<Hash> = dag.tips().iter().copied().collect();
    match tips.len() {
        0 => Err(ConsensusError::EmptyDag),
        1 => Ok((tips[0], tips[0])),
        n => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            Ok((tips[i], tips[j]))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TangleEngine {
    dag: Dag,
    difficulty_bits: u32,
    confirmation_weight: u64,
    weight: HashMap<Hash, u64>,
    attach_seq: HashMap<Hash, usize>,
    confirmed: HashSet<Hash>,
    confirmed_order: Vec<Hash>,
    /// Vertices waiting for a missing parent, keyed by that parent.
    waiting: BTreeMap<Hash, Vec<DagVertex>>,
}

impl TangleEngine {
    pub fn new(difficulty_bits: u32, confirmation_weight: u64) -> Self {
        let dag = Dag::new();
        let g = dag.genesis();
        TangleEngine {
            dag,
            difficulty_bits,
            confirmation_weight: confirmation_weight.max(1),
            weight: HashMap::new(),
            attach_seq: HashMap::new(),
            confirmed: HashSet::from([g]),
            confirmed_order: Vec::new(),
            waiting: BTreeMap::new(),
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn difficulty_bits(&self) -> u32 {
        self.difficulty_bits
    }

    pub fn select_tips<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Hash, Hash), ConsensusError> {
        tangle_select_tips(&self.dag, rng)
    }

    pub fn is_confirmed(&self, h: &Hash) -> bool {
        self.confirmed.contains(h)
    }

    /// Confirmed vertices in confirmation order (genesis excluded).
    pub fn confirmed(&self) -> &[Hash] {
        &self.confirmed_order
    }

    pub fn waiting_count(&self) -> usize {
        self.waiting.values().map(Vec::len).sum()
    }

    /// Verifies and attaches `vertex`, buffering it if a parent is missing.
    /// Returns the vertices confirmed as a consequence.
    pub fn receive(
        &mut self,
        vertex: DagVertex,
        node: NodeId,
        work: &mut WorkLedger,
    ) -> Result<Vec<Hash>, ConsensusError> {
        work.charge(node, WorkOp::Hash(1));
        work.charge(node, WorkOp::Verify(1));
        if !vertex.tx.verify() {
            return Err(ConsensusError::BadSignature);
        }
        let mut confirmed = Vec::new();
        let mut queue = vec![vertex];
        while let Some(v) = queue.pop() {
            let h = v.vertex_hash;
            match self.dag.attach(v.clone(), self.difficulty_bits) {
                Ok(()) => {
                    work.charge(node, WorkOp::Execute(1));
                    self.attach_seq.insert(h, self.attach_seq.len());
                    confirmed.extend(self.add_weight(h));
                    if let Some(children) = self.waiting.remove(&h) {
                        queue.extend(children);
                    }
                }
                Err(DagError::UnknownParent(p)) => {
                    self.waiting.entry(p).or_default().push(v);
                }
                Err(DagError::Duplicate(_)) => {}
                Err(e) => return Err(ConsensusError::Dag(e)),
            }
        }
        Ok(confirmed)
    }

    /// Adds one unit of approval weight to `h` and every unconfirmed
    /// ancestor. Ancestors of a confirmed vertex are always confirmed, so the
    /// walk stops there.
    fn add_weight(&mut self, h: Hash) -> Vec<Hash> {
        let mut newly = Vec::new();
        let mut seen = HashSet::from([h]);
        let mut stack = vec![h];
        while let Some(x) = stack.pop() {
            if self.confirmed.contains(&x) {
                continue;
            }
            let w = self.weight.entry(x).or_insert(0);
            *w += 1;
            if *w >= self.confirmation_weight {
                self.confirmed.insert(x);
                newly.push(x);
            }
            if let Some(v) = self.dag.get(&x) {
                for p in v.approves {
                    if seen.insert(p) {
                        stack.push(p);
                    }
                }
            }
        }
        // Parents confirm no later than children; emit in attachment order.
        newly.sort_by_key(|x| self.attach_seq.get(x).copied().unwrap_or(usize::MAX));
        self.confirmed_order.extend(newly.iter().copied());
        newly
    }
}
