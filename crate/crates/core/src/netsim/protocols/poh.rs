//! Leader schedule over fixed slots. The leader runs the PoH clock through
//! its slot, mixes in pending transactions and broadcasts; validators replay
//! the hashes and vote. A slot is confirmed once a supermajority of votes
//! for it is recorded on-chain, i.e. included in later slots.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{Gateway, TxPool};
use crate::consensus::{supermajority, verify_entries, PohRecorder, WorkOp};
use crate::ledger::{Block, Hash};
use crate::netsim::sim::{Ctx, Input, Msg, Protocol, SlotMsg, Timer, Topology};
use crate::types::{NodeId, SimTime};

#[derive(Default)]
struct SlotState {
    known: bool,
    txs: Vec<Hash>,
    votes: BTreeSet<NodeId>,
    confirmed: bool,
}

struct Node {
    pool: TxPool,
    gateway: Gateway,
    poh_tip: Hash,
    included: HashSet<Hash>,
    slots: BTreeMap<u64, SlotState>,
    /// Votes received while leading, waiting to go on-chain.
    votes: Vec<(NodeId, u64)>,
}

pub(crate) struct PohProtocol {
    nodes: Vec<Node>,
    slot: SimTime,
    slots_per_leader: u64,
    ticks: u64,
    hashes_per_tick: u64,
    max_txs: usize,
    quorum: usize,
}

impl PohProtocol {
    pub fn new(topo: &Topology) -> Self {
        let c = &topo.profile.chain;
        let genesis = Block::genesis().block_hash;
        PohProtocol {
            nodes: (0..topo.m())
                .map(|_| Node {
                    pool: TxPool::default(),
                    gateway: Gateway::default(),
                    poh_tip: genesis,
                    included: HashSet::new(),
                    slots: BTreeMap::new(),
                    votes: Vec::new(),
                })
                .collect(),
            slot: SimTime::from_ms_f64(c.block_interval_ms),
            slots_per_leader: c.slots_per_leader,
            ticks: c.ticks_per_slot,
            hashes_per_tick: c.hashes_per_tick,
            max_txs: c.max_block_txs,
            quorum: supermajority(topo.m()),
        }
    }

    fn leader(&self, topo: &Topology, slot: u64) -> NodeId {
        topo.managers[((slot / self.slots_per_leader) % topo.m() as u64) as usize]
    }

    fn current_slot(&self, now: SimTime) -> u64 {
        now.0 / self.slot.0
    }

    fn slot_end(&mut self, ctx: &mut Ctx<'_>, s: u64) {
        let me = ctx.node;
        let (ticks, hashes, max) = (self.ticks, self.hashes_per_tick, self.max_txs);
        let n = &mut self.nodes[me.0 as usize];
        let mut txs = n.pool.drain(max);
        txs.retain(|t| !n.included.contains(&t.tx_id));
        let votes = std::mem::take(&mut n.votes);

        let mut rec = PohRecorder::new(n.poh_tip);
        let mut entries = Vec::with_capacity(ticks as usize + 1);
        for i in 0..ticks {
            entries.push(rec.tick(hashes, me, ctx.work));
            if i == 0 && !txs.is_empty() {
                let batch = txs.iter().map(|t| (**t).clone()).collect();
                entries.push(rec.record(batch, me, ctx.work));
            }
        }
        ctx.charge(WorkOp::Sign(1));
        let msg = Arc::new(SlotMsg {
            slot: s,
            leader: me,
            start: n.poh_tip,
            entries,
            txs,
            votes,
        });
        let others: Vec<NodeId> = ctx.topo.others(me).collect();
        ctx.send_all(others, &Msg::Slot(msg.clone()));
        self.apply(ctx, msg);

        let next = self.leader(ctx.topo, s + 1);
        ctx.at(next, SimTime(self.slot.0 * (s + 2)), Timer::SlotEnd(s + 1));
        if next != me {
            let n = &mut self.nodes[me.0 as usize];
            for tx in n.pool.drain(usize::MAX) {
                ctx.send(next, Msg::Gossip(tx));
            }
        }
    }

    fn apply(&mut self, ctx: &mut Ctx<'_>, slot: Arc<SlotMsg>) {
        let me = ctx.node;
        let quorum = self.quorum;
        let voter_target = self.leader(ctx.topo, slot.slot + 1);
        let n = &mut self.nodes[me.0 as usize];
        if slot.leader != me {
            ctx.charge(WorkOp::Verify(1));
            if !verify_entries(slot.start, &slot.entries, me, ctx.work) {
                return;
            }
            ctx.charge(WorkOp::Execute(slot.txs.len() as u64));
        }
        if let Some(e) = slot.entries.last() {
            n.poh_tip = e.hash;
        }
        for tx in &slot.txs {
            n.included.insert(tx.tx_id);
            n.pool.remove(&tx.tx_id);
        }
        let st = n.slots.entry(slot.slot).or_default();
        st.known = true;
        st.txs = slot.txs.iter().map(|t| t.tx_id).collect();
        st.votes.insert(slot.leader);
        let mut touched = vec![slot.slot];
        for &(voter, s) in &slot.votes {
            n.slots.entry(s).or_default().votes.insert(voter);
            touched.push(s);
        }
        for s in touched {
            let st = n.slots.get_mut(&s).expect("inserted above");
            if st.confirmed || !st.known || st.votes.len() < quorum {
                continue;
            }
            st.confirmed = true;
            for &tx in &st.txs {
                ctx.commit(tx, true);
                n.gateway.receipt(ctx, tx);
            }
        }
        if slot.leader != me {
            ctx.charge(WorkOp::Sign(1));
            ctx.send(voter_target, Msg::SlotVote { slot: slot.slot });
        }
    }

    fn forward_or_keep(&mut self, ctx: &mut Ctx<'_>, tx: Arc<crate::ledger::Transaction>) {
        let me = ctx.node;
        let leader = self.leader(ctx.topo, self.current_slot(ctx.now));
        let n = &mut self.nodes[me.0 as usize];
        if n.included.contains(&tx.tx_id) {
            return;
        }
        if leader == me {
            n.pool.insert(tx);
        } else {
            ctx.send(leader, Msg::Gossip(tx));
        }
    }
}

impl Protocol for PohProtocol {
    fn start(&mut self, topo: &Topology, _: &mut ChaCha8Rng) -> Vec<(NodeId, SimTime, Timer)> {
        vec![(self.leader(topo, 0), self.slot, Timer::SlotEnd(0))]
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
                    ctx.charge(WorkOp::Verify(1));
                    if !tx.verify() {
                        return;
                    }
                    self.nodes[me.0 as usize].gateway.note(tx.tx_id, from);
                    self.forward_or_keep(ctx, tx);
                }
                Msg::Gossip(tx) => self.forward_or_keep(ctx, tx),
                Msg::Slot(s) => self.apply(ctx, s),
                Msg::SlotVote { slot } => {
                    ctx.charge(WorkOp::Verify(1));
                    self.nodes[me.0 as usize].votes.push((from, slot));
                }
                _ => {}
            },
            Input::Timer(Timer::SlotEnd(s)) => self.slot_end(ctx, s),
            _ => {}
        }
    }
}
