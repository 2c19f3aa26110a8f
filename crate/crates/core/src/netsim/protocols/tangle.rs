//! DAG ledger: the client asks its manager for two tips, does the little
//! PoW itself and hands the vertex back; managers gossip vertices and
//! confirm by approval weight.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;

use super::Gateway;
use crate::consensus::{TangleEngine, WorkOp};
use crate::ledger::{DagVertex, Hash, Transaction};
use crate::netsim::sim::{Ctx, Input, Msg, Protocol, Topology};
use crate::types::NodeId;

struct Node {
    engine: TangleEngine,
    seen: HashSet<Hash>,
    gateway: Gateway,
}

pub(crate) struct TangleProtocol {
    nodes: Vec<Node>,
    /// Per client: transactions waiting for tips.
    waiting: HashMap<NodeId, HashMap<Hash, Arc<Transaction>>>,
    difficulty: u32,
}

impl TangleProtocol {
    pub fn new(topo: &Topology) -> Self {
        let c = &topo.profile.chain;
        TangleProtocol {
            nodes: (0..topo.m())
                .map(|_| Node {
                    engine: TangleEngine::new(c.difficulty_bits, c.confirmation_weight),
                    seen: HashSet::new(),
                    gateway: Gateway::default(),
                })
                .collect(),
            waiting: HashMap::new(),
            difficulty: c.difficulty_bits,
        }
    }

    fn client(&mut self, ctx: &mut Ctx<'_>, input: Input) {
        let me = ctx.node;
        let home = ctx.topo.home(me);
        match input {
            Input::NewTx(tx) => {
                self.waiting.entry(me).or_default().insert(tx.tx_id, tx.clone());
                ctx.send(home, Msg::TipReq(tx));
            }
            Input::Msg {
                msg: Msg::TipResp { tx, tips },
                ..
            } => {
                let Some(tx) = self.waiting.entry(me).or_default().remove(&tx) else { return };
                let start = ctx.rng.random::<u64>();
                let (v, attempts) = DagVertex::mine([tips.0, tips.1], (*tx).clone(), self.difficulty, start);
                ctx.charge(WorkOp::Hash(attempts));
                ctx.send(home, Msg::Vertex(Arc::new(v)));
            }
            _ => {}
        }
    }

    fn vertex(&mut self, ctx: &mut Ctx<'_>, from: NodeId, v: Arc<DagVertex>) {
        let me = ctx.node;
        let n = &mut self.nodes[me.0 as usize];
        if !n.seen.insert(v.vertex_hash) {
            return;
        }
        if !ctx.topo.is_manager(from) {
            let others: Vec<NodeId> = ctx.topo.others(me).collect();
            ctx.send_all(others, &Msg::Vertex(v.clone()));
        }
        let Ok(confirmed) = n.engine.receive((*v).clone(), me, ctx.work) else { return };
        for h in confirmed {
            let Some(tx) = n.engine.dag().get(&h).map(|v| v.tx.tx_id) else { continue };
            ctx.commit(tx, true);
            n.gateway.receipt(ctx, tx);
        }
    }
}

impl Protocol for TangleProtocol {
    fn handle(&mut self, ctx: &mut Ctx<'_>, input: Input) {
        let me = ctx.node;
        if !ctx.topo.is_manager(me) {
            self.client(ctx, input);
            return;
        }
        let Input::Msg { from, msg } = input else { return };
        match msg {
            Msg::TipReq(tx) => {
                let n = &mut self.nodes[me.0 as usize];
                n.gateway.note(tx.tx_id, from);
                if let Ok(tips) = n.engine.select_tips(ctx.rng) {
                    ctx.send(from, Msg::TipResp { tx: tx.tx_id, tips });
                }
            }
            Msg::Vertex(v) => self.vertex(ctx, from, v),
            _ => {}
        }
    }
}
