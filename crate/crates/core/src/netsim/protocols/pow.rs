//! Nakamoto-style chain. Block discovery across the network is a single
//! Poisson process whose winner is drawn uniformly among managers; the
//! hashing itself is billed as background load by the loop.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{admit_and_relay, Gateway, TxPool};
use crate::consensus::{PowEngine, WorkOp};
use crate::ledger::{Block, Hash};
use crate::netsim::sim::{Ctx, Input, Msg, Protocol, Timer, Topology};
use crate::types::{NodeId, SimTime};

struct Node {
    engine: PowEngine,
    pool: TxPool,
    seen: HashSet<Hash>,
    gateway: Gateway,
    /// Blocks whose parent has not arrived, keyed by that parent.
    orphans: BTreeMap<Hash, Vec<Arc<Block>>>,
}

pub(crate) struct PowProtocol {
    nodes: Vec<Node>,
    mean_interval_s: f64,
    max_txs: usize,
}

impl PowProtocol {
    pub fn new(topo: &Topology, seed: u64) -> Self {
        let c = &topo.profile.chain;
        PowProtocol {
            nodes: (0..topo.m())
                .map(|i| Node {
                    engine: PowEngine::new(c.difficulty_bits, c.finality_depth, seed ^ ((i as u64) << 32)),
                    pool: TxPool::default(),
                    seen: HashSet::new(),
                    gateway: Gateway::default(),
                    orphans: BTreeMap::new(),
                })
                .collect(),
            mean_interval_s: c.block_interval_ms / 1e3,
            max_txs: c.max_block_txs,
        }
    }

    fn next_find(&self, now: SimTime, topo: &Topology, rng: &mut ChaCha8Rng) -> (NodeId, SimTime) {
        let gap = Exp::new(1.0 / self.mean_interval_s).expect("positive interval").sample(rng);
        let winner = topo.managers[rng.random_range(0..topo.m())];
        (winner, SimTime(now.0 + (gap * 1e6).round() as u64))
    }

    fn mine(&mut self, ctx: &mut Ctx<'_>) {
        let me = ctx.node;
        let n = &mut self.nodes[me.0 as usize];
        let on_chain: HashSet<Hash> = n.engine.unfinalized_canonical_txs().into_iter().collect();
        let txs = n.pool.peek(self.max_txs, |h| on_chain.contains(h));
        let block = n
            .engine
            .propose(txs.iter().map(|t| (**t).clone()).collect(), me, ctx.now, ctx.work);
        let block = Arc::new(block);
        let others: Vec<NodeId> = ctx.topo.others(me).collect();
        ctx.send_all(others, &Msg::Block(block.clone()));
        self.on_block(ctx, block);

        let (winner, at) = self.next_find(ctx.now, ctx.topo, ctx.rng);
        ctx.at(winner, at, Timer::Mine);
    }

    fn on_block(&mut self, ctx: &mut Ctx<'_>, block: Arc<Block>) {
        let me = ctx.node;
        let mut queue = vec![block];
        let mut finalized = Vec::new();
        while let Some(b) = queue.pop() {
            let n = &mut self.nodes[me.0 as usize];
            if n.engine.get(&b.block_hash).is_some() {
                continue;
            }
            if n.engine.get(&b.parent).is_none() {
                n.orphans.entry(b.parent).or_default().push(b);
                continue;
            }
            if n.engine.validate(&b, me, ctx.work).is_err() {
                continue;
            }
            ctx.charge(WorkOp::Execute(b.txs.len() as u64));
            if let Ok(f) = n.engine.accept((*b).clone()) {
                finalized.extend(f);
            }
            if let Some(children) = n.orphans.remove(&b.block_hash) {
                queue.extend(children);
            }
        }
        let n = &mut self.nodes[me.0 as usize];
        for b in finalized {
            for tx in &b.txs {
                n.pool.remove(&tx.tx_id);
                n.seen.insert(tx.tx_id);
                ctx.commit(tx.tx_id, true);
                n.gateway.receipt(ctx, tx.tx_id);
            }
        }
    }
}

impl Protocol for PowProtocol {
    fn start(&mut self, topo: &Topology, rng: &mut ChaCha8Rng) -> Vec<(NodeId, SimTime, Timer)> {
        let (winner, at) = self.next_find(SimTime::ZERO, topo, rng);
        vec![(winner, at, Timer::Mine)]
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, input: Input) {
        let me = ctx.node;
        if !ctx.topo.is_manager(me) {
            if let Input::NewTx(tx) = input {
                ctx.send(ctx.topo.home(me), Msg::Submit(tx));
            }
            return;
        }
        match input {
            Input::Msg { from, msg } => match msg {
                Msg::Submit(tx) => {
                    let n = &mut self.nodes[me.0 as usize];
                    n.gateway.note(tx.tx_id, from);
                    admit_and_relay(ctx, &mut n.pool, &mut n.seen, from, tx);
                }
                Msg::Gossip(tx) => {
                    let n = &mut self.nodes[me.0 as usize];
                    admit_and_relay(ctx, &mut n.pool, &mut n.seen, from, tx);
                }
                Msg::Block(b) => self.on_block(ctx, b),
                _ => {}
            },
            Input::Timer(Timer::Mine) => self.mine(ctx),
            _ => {}
        }
    }
}
