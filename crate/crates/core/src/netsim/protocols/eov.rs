//! Execute-order-validate: clients collect endorsements, a single orderer on
//! the first manager batches envelopes, every peer validates and commits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::Gateway;
use crate::consensus::{
    endorse, tx_keys, EndorsedTx, EndorsementPolicy, OrderedBlock, Orderer, Peer, WorkOp,
};
use crate::ledger::{Block, Hash, Transaction};
use crate::netsim::sim::{Ctx, Input, Msg, Protocol, Timer, Topology};
use crate::types::{NodeId, SimTime};

struct PeerNode {
    peer: Peer,
    gateway: Gateway,
    /// Delivered blocks waiting for their predecessor.
    pending: BTreeMap<u64, Arc<OrderedBlock>>,
}

struct OrderingService {
    orderer: Orderer,
    last: Block,
    batch: u64,
}

/// A client's transaction and the endorsements gathered so far.
type Collecting = (Arc<Transaction>, Vec<Arc<EndorsedTx>>);

pub(crate) struct EovProtocol {
    peers: Vec<PeerNode>,
    ordering: OrderingService,
    /// Per client: transactions still collecting endorsements.
    collecting: HashMap<NodeId, HashMap<Hash, Collecting>>,
    required: usize,
    timeout: SimTime,
    max_txs: usize,
}

impl EovProtocol {
    pub fn new(topo: &Topology) -> Self {
        let c = &topo.profile.chain;
        let m = topo.m();
        let required = match c.endorsements_required {
            0 => m,
            k => k.min(m),
        };
        EovProtocol {
            peers: (0..m)
                .map(|i| PeerNode {
                    peer: Peer::new(NodeId(i as u32), required),
                    gateway: Gateway::default(),
                    pending: BTreeMap::new(),
                })
                .collect(),
            ordering: OrderingService {
                orderer: Orderer::new(),
                last: Block::genesis(),
                batch: 0,
            },
            collecting: HashMap::new(),
            required,
            timeout: SimTime::from_ms_f64(c.block_interval_ms),
            max_txs: c.max_block_txs,
        }
    }

    fn orderer_node(topo: &Topology) -> NodeId {
        topo.managers[0]
    }

    /// Endorsers for a client: `required` managers starting at its home.
    fn endorsers(&self, topo: &Topology, client: NodeId) -> Vec<NodeId> {
        let home = topo.home(client).0 as usize;
        (0..self.required)
            .map(|i| topo.managers[(home + i) % topo.m()])
            .collect()
    }

    fn client(&mut self, ctx: &mut Ctx<'_>, input: Input) {
        let me = ctx.node;
        match input {
            Input::NewTx(tx) => {
                self.collecting
                    .entry(me)
                    .or_default()
                    .insert(tx.tx_id, (tx.clone(), Vec::new()));
                let targets = self.endorsers(ctx.topo, me);
                ctx.send_all(targets, &Msg::EndorseReq(tx));
            }
            Input::Msg {
                msg: Msg::EndorseResp(etx),
                ..
            } => {
                let mine = self.collecting.entry(me).or_default();
                let id = etx.tx.tx_id;
                let Some((_, got)) = mine.get_mut(&id) else { return };
                got.push(etx);
                if got.len() < self.required {
                    return;
                }
                let (tx, got) = mine.remove(&id).expect("present");
                ctx.charge(WorkOp::Verify(got.len() as u64));
                let envelope = EndorsedTx {
                    tx: (*tx).clone(),
                    rwset: got[0].rwset.clone(),
                    endorsements: got.iter().flat_map(|e| e.endorsements.iter().cloned()).collect(),
                };
                ctx.send(Self::orderer_node(ctx.topo), Msg::Envelope(Arc::new(envelope)));
            }
            _ => {}
        }
    }

    fn cut(&mut self, ctx: &mut Ctx<'_>) {
        let o = &mut self.ordering;
        let Some(block) = o.orderer.cut(&o.last, ctx.node, ctx.now, self.max_txs) else {
            return;
        };
        ctx.charge(WorkOp::Hash(1));
        ctx.charge(WorkOp::Sign(1));
        o.last = block.block.clone();
        if o.orderer.pending() > 0 {
            o.batch += 1;
            ctx.after(self.timeout, Timer::Cut(o.batch));
        }
        let all = ctx.topo.managers.clone();
        ctx.send_all(all, &Msg::Deliver(Arc::new(block)));
    }

    fn deliver(&mut self, ctx: &mut Ctx<'_>, block: Arc<OrderedBlock>) {
        let me = ctx.node;
        let p = &mut self.peers[me.0 as usize];
        ctx.charge(WorkOp::Verify(1));
        p.pending.insert(block.block.height, block);
        loop {
            let next = p.peer.chain().height() + 1;
            let Some(b) = p.pending.remove(&next) else { break };
            let Ok(labels) = p.peer.validate_and_commit(&b, ctx.work) else { break };
            for (etx, v) in b.envelopes.iter().zip(labels) {
                ctx.commit(etx.tx.tx_id, v.is_valid());
                p.gateway.receipt(ctx, etx.tx.tx_id);
            }
        }
    }
}

impl Protocol for EovProtocol {
    fn handle(&mut self, ctx: &mut Ctx<'_>, input: Input) {
        let me = ctx.node;
        if !ctx.topo.is_manager(me) {
            self.client(ctx, input);
            return;
        }
        match input {
            Input::Msg { from, msg } => match msg {
                Msg::EndorseReq(tx) => {
                    let p = &mut self.peers[me.0 as usize];
                    if ctx.topo.home(from) == me {
                        p.gateway.note(tx.tx_id, from);
                    }
                    let keys = tx_keys(&tx, ctx.topo.contention);
                    let me_only = BTreeSet::from([me]);
                    let policy = EndorsementPolicy::KOfN(1);
                    ctx.charge(WorkOp::Execute(1));
                    if let Ok(etx) =
                        endorse((*tx).clone(), &keys, p.peer.state(), &me_only, 1, policy, ctx.work)
                    {
                        ctx.send(from, Msg::EndorseResp(Arc::new(etx)));
                    }
                }
                Msg::Envelope(etx) => {
                    ctx.charge(WorkOp::Verify(1));
                    let o = &mut self.ordering;
                    o.orderer.submit((*etx).clone(), ctx.now);
                    if o.orderer.pending() >= self.max_txs {
                        self.cut(ctx);
                    } else if o.orderer.pending() == 1 {
                        o.batch += 1;
                        ctx.after(self.timeout, Timer::Cut(o.batch));
                    }
                }
                Msg::Deliver(b) => self.deliver(ctx, b),
                _ => {}
            },
            Input::Timer(Timer::Cut(batch)) if batch == self.ordering.batch => self.cut(ctx),
            _ => {}
        }
    }
}
