//! Round-robin proposer, one vote round per height.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::{admit_and_relay, Gateway, TxPool};
use crate::consensus::{QuorumConfig, VotingEngine, WorkOp};
use crate::ledger::{Block, Hash};
use crate::netsim::sim::{Ctx, Input, Msg, Protocol, Timer, Topology};
use crate::types::{NodeId, SimTime};

struct Node {
    engine: VotingEngine,
    pool: TxPool,
    seen: HashSet<Hash>,
    gateway: Gateway,
    /// Proposals for heights we have not reached yet.
    future: BTreeMap<u64, Vec<Arc<Block>>>,
}

pub(crate) struct VotingProtocol {
    nodes: Vec<Node>,
    interval: SimTime,
    max_txs: usize,
}

impl VotingProtocol {
    pub fn new(topo: &Topology) -> Self {
        let cfg = QuorumConfig::for_validators(topo.m()).expect("at least one manager");
        VotingProtocol {
            nodes: (0..topo.m())
                .map(|_| Node {
                    engine: VotingEngine::new(cfg),
                    pool: TxPool::default(),
                    seen: HashSet::new(),
                    gateway: Gateway::default(),
                    future: BTreeMap::new(),
                })
                .collect(),
            interval: SimTime::from_ms_f64(topo.profile.chain.block_interval_ms),
            max_txs: topo.profile.chain.max_block_txs,
        }
    }

    fn proposer(topo: &Topology, height: u64) -> NodeId {
        topo.managers[(height % topo.m() as u64) as usize]
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>, height: u64) {
        let me = ctx.node;
        let n = &mut self.nodes[me.0 as usize];
        if n.engine.height() + 1 != height {
            return;
        }
        let txs = n.pool.peek(self.max_txs, |_| false);
        let block = n.engine.propose(txs.iter().map(|t| (**t).clone()).collect(), me, ctx.now);
        ctx.charge(WorkOp::Hash(1));
        ctx.charge(WorkOp::Sign(1));
        let block = Arc::new(block);
        let others: Vec<NodeId> = ctx.topo.others(me).collect();
        ctx.send_all(others, &Msg::Block(block.clone()));
        self.on_block(ctx, block);
    }

    fn on_block(&mut self, ctx: &mut Ctx<'_>, block: Arc<Block>) {
        let me = ctx.node;
        let n = &mut self.nodes[me.0 as usize];
        let next = n.engine.height() + 1;
        if block.height > next {
            n.future.entry(block.height).or_default().push(block);
            return;
        }
        if block.height < next {
            return;
        }
        if block.proposer != me {
            ctx.charge(WorkOp::Verify(1));
        }
        if n.engine.validate(&block, me, ctx.work).is_err() {
            return;
        }
        let mut done = n.engine.register((*block).clone());
        if let Ok(b) = n.engine.vote(block.height, block.block_hash, block.proposer) {
            done.extend(b);
        }
        if block.proposer != me {
            ctx.charge(WorkOp::Sign(1));
            if let Ok(b) = n.engine.vote(block.height, block.block_hash, me) {
                done.extend(b);
            }
            let others: Vec<NodeId> = ctx.topo.others(me).collect();
            ctx.send_all(
                others,
                &Msg::Vote {
                    height: block.height,
                    block: block.block_hash,
                },
            );
        }
        self.finalized(ctx, done);
    }

    fn finalized(&mut self, ctx: &mut Ctx<'_>, blocks: Vec<Block>) {
        if blocks.is_empty() {
            return;
        }
        let me = ctx.node;
        let n = &mut self.nodes[me.0 as usize];
        for b in &blocks {
            for tx in &b.txs {
                n.pool.remove(&tx.tx_id);
                n.seen.insert(tx.tx_id);
                ctx.commit(tx.tx_id, true);
                n.gateway.receipt(ctx, tx.tx_id);
            }
        }
        let next = n.engine.height() + 1;
        if Self::proposer(ctx.topo, next) == me {
            ctx.after(self.interval, Timer::Propose(next));
        }
        n.future.retain(|&h, _| h >= next);
        if let Some(waiting) = n.future.remove(&next) {
            for b in waiting {
                self.on_block(ctx, b);
            }
        }
    }
}

impl Protocol for VotingProtocol {
    fn start(&mut self, topo: &Topology, _: &mut rand_chacha::ChaCha8Rng) -> Vec<(NodeId, SimTime, Timer)> {
        vec![(Self::proposer(topo, 1), self.interval, Timer::Propose(1))]
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
                Msg::Vote { height, block } => {
                    ctx.charge(WorkOp::Verify(1));
                    let n = &mut self.nodes[me.0 as usize];
                    let done = n.engine.vote(height, block, from).unwrap_or_default();
                    self.finalized(ctx, done);
                }
                _ => {}
            },
            Input::Timer(Timer::Propose(h)) => self.propose(ctx, h),
            _ => {}
        }
    }
}
