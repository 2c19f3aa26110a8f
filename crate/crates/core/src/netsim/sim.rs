//! The event loop. Protocols are per-platform state machines driven through
//! [`Protocol::handle`]; this module owns time, CPU queueing, the network and
//! transaction bookkeeping.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::network::{NetError, Network, NodeSpec, Role};
use super::queue::EventQueue;
use super::scenario::{Arrival, Scenario};
use crate::consensus::{EndorsedTx, OrderedBlock, PohEntry, WorkLedger, WorkOp};
use crate::ledger::{Block, DagVertex, Hash, Transaction};
use crate::metrics::{commit_rate, LatencySummary, MetricsReport, NodeReport, TxCounts};
use crate::profile::PlatformProfile;
use crate::types::{NodeId, SimTime};

/// A leader's slot as it travels between validators.
#[derive(Debug)]
pub(crate) struct SlotMsg {
    pub slot: u64,
    pub leader: NodeId,
    pub start: Hash,
    pub entries: Vec<PohEntry>,
    pub txs: Vec<Arc<Transaction>>,
    /// (voter, slot voted for) pairs carried on-chain.
    pub votes: Vec<(NodeId, u64)>,
}

#[derive(Clone, Debug)]
pub(crate) enum Msg {
    Submit(Arc<Transaction>),
    Gossip(Arc<Transaction>),
    Receipt,
    Block(Arc<Block>),
    Vote { height: u64, block: Hash },
    EndorseReq(Arc<Transaction>),
    EndorseResp(Arc<EndorsedTx>),
    Envelope(Arc<EndorsedTx>),
    Deliver(Arc<OrderedBlock>),
    TipReq(Arc<Transaction>),
    TipResp { tx: Hash, tips: (Hash, Hash) },
    Vertex(Arc<DagVertex>),
    Slot(Arc<SlotMsg>),
    SlotVote { slot: u64 },
}

impl Msg {
    /// Bytes on the wire under `p`.
    pub fn size(&self, p: &PlatformProfile) -> u64 {
        let m = &p.messages;
        let wire = |tx: &Transaction| p.wire.wire_size(tx);
        match self {
            Msg::Submit(tx) | Msg::Gossip(tx) => wire(tx),
            Msg::Receipt => m.receipt,
            Msg::Block(b) => m.block_header + b.txs.iter().map(wire).sum::<u64>(),
            Msg::Vote { .. } | Msg::SlotVote { .. } => m.vote,
            Msg::EndorseReq(tx) => tx.payload.len() as u64 + m.proposal_overhead,
            Msg::EndorseResp(_) => m.endorsement_response,
            Msg::Envelope(e) => wire(&e.tx),
            Msg::Deliver(o) => m.block_header + o.block.txs.iter().map(wire).sum::<u64>(),
            Msg::TipReq(_) => m.tip_request,
            Msg::TipResp { .. } => m.tip_response,
            Msg::Vertex(v) => wire(&v.tx),
            Msg::Slot(s) => {
                let data = s.txs.iter().map(|t| wire(t)).sum::<u64>() + s.votes.len() as u64 * m.vote;
                (data as f64 * (1.0 + m.coding_ratio)).round() as u64
                    + s.entries.len() as u64 * m.entry_header
                    + m.block_header
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Timer {
    Propose(u64),
    Mine,
    Cut(u64),
    SlotEnd(u64),
}

pub(crate) enum Input {
    Msg { from: NodeId, msg: Msg },
    Timer(Timer),
    /// A client has just built and signed this transaction.
    NewTx(Arc<Transaction>),
}

enum When {
    After(SimTime),
    At(SimTime),
}

enum Out {
    Send { to: NodeId, msg: Msg },
    Timer { node: NodeId, when: When, timer: Timer },
    Commit { tx: Hash, valid: bool },
}

/// Static facts every handler may read.
pub(crate) struct Topology {
    pub managers: Vec<NodeId>,
    pub clients: Vec<NodeId>,
    pub profile: PlatformProfile,
    pub contention: Option<u64>,
}

impl Topology {
    pub fn new(managers: usize, clients: usize, profile: PlatformProfile, contention: Option<u64>) -> Self {
        Topology {
            managers: (0..managers as u32).map(NodeId).collect(),
            clients: (managers as u32..(managers + clients) as u32).map(NodeId).collect(),
            profile,
            contention,
        }
    }

    pub fn m(&self) -> usize {
        self.managers.len()
    }

    pub fn is_manager(&self, n: NodeId) -> bool {
        (n.0 as usize) < self.managers.len()
    }

    /// The manager a client submits through.
    pub fn home(&self, client: NodeId) -> NodeId {
        self.managers[(client.0 as usize - self.m()) % self.m()]
    }

    pub fn others(&self, me: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.managers.iter().copied().filter(move |&n| n != me)
    }
}

/// Handler context: the node being run, its clock, and an outbox that the
/// loop releases once the node's CPU has finished the job.
pub(crate) struct Ctx<'a> {
    pub node: NodeId,
    pub now: SimTime,
    pub work: &'a mut WorkLedger,
    pub rng: &'a mut ChaCha8Rng,
    pub topo: &'a Topology,
    out: Vec<Out>,
}

impl Ctx<'_> {
    pub fn charge(&mut self, op: WorkOp) {
        self.work.charge(self.node, op);
    }

    pub fn send(&mut self, to: NodeId, msg: Msg) {
        self.out.push(Out::Send { to, msg });
    }

    pub fn send_all(&mut self, to: impl IntoIterator<Item = NodeId>, msg: &Msg) {
        for n in to {
            self.send(n, msg.clone());
        }
    }

    /// Fires on this node `delay` after the current job completes.
    pub fn after(&mut self, delay: SimTime, timer: Timer) {
        self.out.push(Out::Timer {
            node: self.node,
            when: When::After(delay),
            timer,
        });
    }

    /// Fires on `node` at absolute time `at` (never earlier than now).
    pub fn at(&mut self, node: NodeId, at: SimTime, timer: Timer) {
        self.out.push(Out::Timer {
            node,
            when: When::At(at),
            timer,
        });
    }

    pub fn commit(&mut self, tx: Hash, valid: bool) {
        self.out.push(Out::Commit { tx, valid });
    }
}

pub(crate) trait Protocol {
    /// Timers to arm before the first event.
    fn start(&mut self, _topo: &Topology, _rng: &mut ChaCha8Rng) -> Vec<(NodeId, SimTime, Timer)> {
        Vec::new()
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, input: Input);
}

enum Event {
    Generate(usize),
    Inject(usize),
    Arrive { from: NodeId, msg: Msg, recv_cost: f64 },
    Timer(Timer),
}

const RANK_ARRIVE: u8 = 0;
const RANK_TIMER: u8 = 1;
const RANK_GENERATE: u8 = 2;

struct TxRecord {
    created: SimTime,
    home: NodeId,
    outcome: Option<(SimTime, bool)>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Carbon(#[from] crate::metrics::CarbonError),
}

struct ClientGen {
    rate: f64,
    next: u64,
    offset_us: f64,
    last_us: f64,
    rng: ChaCha8Rng,
}

pub(crate) struct Sim<'s> {
    scenario: &'s Scenario,
    topo: Topology,
    net: Network,
    queue: EventQueue<Event>,
    work: WorkLedger,
    rng: ChaCha8Rng,
    busy: Vec<SimTime>,
    job_capacity: Vec<f64>,
    txs: HashMap<Hash, TxRecord>,
    gens: Vec<ClientGen>,
    injected: Vec<(usize, Arc<Transaction>)>,
    duration: SimTime,
    proto: Box<dyn Protocol + 's>,
}

impl<'s> Sim<'s> {
    pub fn new(
        scenario: &'s Scenario,
        topo: Topology,
        proto: Box<dyn Protocol + 's>,
        market: Vec<Transaction>,
    ) -> Self {
        let p = &topo.profile;
        let l = &scenario.links;
        let mut specs = Vec::new();
        let mut job_capacity = Vec::new();
        for &n in &topo.managers {
            let cap = p.cpu.manager_capacity;
            specs.push(NodeSpec::new(n, Role::Manager, l.manager_latency_ms, l.manager_bandwidth, cap));
            job_capacity.push(cap * (1.0 - p.cpu.mining_share));
        }
        for &n in &topo.clients {
            let cap = p.cpu.client_capacity;
            specs.push(NodeSpec::new(n, Role::Client, l.client_latency_ms, l.client_bandwidth, cap));
            job_capacity.push(cap);
        }
        let rate = scenario.per_client_tps();
        let c = topo.clients.len();
        let gens = (0..c)
            .map(|i| ClientGen {
                rate,
                next: 0,
                offset_us: if rate > 0.0 { 1e6 / rate * i as f64 / c as f64 } else { 0.0 },
                last_us: 0.0,
                rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ (0xC11E_0000 + i as u64)),
            })
            .collect();
        let injected = market
            .into_iter()
            .enumerate()
            .map(|(i, tx)| (i % c, Arc::new(tx)))
            .collect();
        Sim {
            scenario,
            net: Network::new(specs),
            queue: EventQueue::new(),
            work: WorkLedger::new(p.cpu.costs.clone()),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            busy: vec![SimTime::ZERO; topo.managers.len() + c],
            job_capacity,
            txs: HashMap::new(),
            gens,
            injected,
            duration: SimTime::from_secs_f64(scenario.duration_s),
            topo,
            proto,
        }
    }

    fn next_arrival(&mut self, client: usize) -> Option<SimTime> {
        let g = &mut self.gens[client];
        if g.rate <= 0.0 {
            return None;
        }
        let t = match self.scenario.arrival {
            Arrival::Fixed => g.offset_us + g.next as f64 * 1e6 / g.rate,
            Arrival::Poisson => {
                g.last_us += Exp::new(g.rate).expect("positive rate").sample(&mut g.rng) * 1e6;
                g.last_us
            }
        };
        g.next += 1;
        let t = SimTime(t.round() as u64);
        (t < self.duration).then_some(t)
    }

    fn payload(&self, client: NodeId, k: u64) -> Vec<u8> {
        let mut p = vec![0u8; self.scenario.payload_bytes.max(12)];
        p[..4].copy_from_slice(&client.0.to_le_bytes());
        p[4..12].copy_from_slice(&k.to_le_bytes());
        p.truncate(self.scenario.payload_bytes.max(1));
        p
    }

    pub fn run(mut self) -> Result<MetricsReport, SimError> {
        for (node, at, timer) in self.proto.start(&self.topo, &mut self.rng) {
            self.queue.push(at, RANK_TIMER, node, Event::Timer(timer));
        }
        for i in 0..self.gens.len() {
            if let Some(t) = self.next_arrival(i) {
                self.queue.push(t, RANK_GENERATE, self.topo.clients[i], Event::Generate(i));
            }
        }
        for (i, (c, tx)) in self.injected.iter().enumerate() {
            if tx.created_at < self.duration {
                self.queue.push(tx.created_at, RANK_GENERATE, self.topo.clients[*c], Event::Inject(i));
            }
        }

        while let Some((key, event)) = self.queue.pop() {
            if key.time > self.duration {
                break;
            }
            let (node, now) = (key.node, key.time);
            match event {
                Event::Generate(i) => {
                    let k = self.gens[i].next - 1;
                    let tx = Transaction::new(node, self.scenario.tx_kind, self.payload(node, k), now);
                    if let Some(t) = self.next_arrival(i) {
                        self.queue.push(t, RANK_GENERATE, node, Event::Generate(i));
                    }
                    self.new_tx(node, now, Arc::new(tx))?;
                }
                Event::Inject(i) => {
                    let tx = self.injected[i].1.clone();
                    self.new_tx(node, now, tx)?;
                }
                Event::Arrive { from, msg, recv_cost } => {
                    self.dispatch(node, now, Input::Msg { from, msg }, recv_cost)?;
                }
                Event::Timer(t) => self.dispatch(node, now, Input::Timer(t), 0.0)?,
            }
        }
        self.finish()
    }

    fn new_tx(&mut self, client: NodeId, now: SimTime, tx: Arc<Transaction>) -> Result<(), SimError> {
        let home = self.topo.home(client);
        self.txs.entry(tx.tx_id).or_insert(TxRecord {
            created: now,
            home,
            outcome: None,
        });
        self.work.charge(client, WorkOp::ClientTx(1));
        self.work.charge(client, WorkOp::Sign(1));
        let cost = self.work.cost_of(WorkOp::ClientTx(1)) + self.work.cost_of(WorkOp::Sign(1));
        self.dispatch(client, now, Input::NewTx(tx), cost)
    }

    /// Runs one handler and releases its outputs when the node's CPU is done.
    fn dispatch(&mut self, node: NodeId, now: SimTime, input: Input, extra: f64) -> Result<(), SimError> {
        let before = self.work.units(node);
        let mut ctx = Ctx {
            node,
            now,
            work: &mut self.work,
            rng: &mut self.rng,
            topo: &self.topo,
            out: Vec::new(),
        };
        self.proto.handle(&mut ctx, input);
        let out = std::mem::take(&mut ctx.out);
        let spent = self.work.units(node) - before + extra;

        let idx = node.0 as usize;
        let cap = self.job_capacity[idx];
        let start = now.max(self.busy[idx]);
        let done = SimTime(start.0 + (spent / cap * 1e6).round() as u64);
        self.busy[idx] = done;

        for o in out {
            match o {
                Out::Send { to, msg } if to == node => {
                    self.queue.push(
                        done,
                        RANK_ARRIVE,
                        to,
                        Event::Arrive {
                            from: node,
                            msg,
                            recv_cost: 0.0,
                        },
                    );
                }
                Out::Send { to, msg } => {
                    let size = msg.size(&self.topo.profile);
                    let send_cost = self.work.cost_of(WorkOp::Send { bytes: size });
                    let depart = SimTime(self.busy[idx].0 + (send_cost / cap * 1e6).round() as u64);
                    self.busy[idx] = depart;
                    let d = self.net.deliver(size, node, to, depart, &mut self.work)?;
                    self.queue.push(
                        d.arrival,
                        RANK_ARRIVE,
                        to,
                        Event::Arrive {
                            from: node,
                            msg,
                            recv_cost: d.recv_cost,
                        },
                    );
                }
                Out::Timer { node: target, when, timer } => {
                    let at = match when {
                        When::After(d) => done + d,
                        When::At(t) => t.max(now),
                    };
                    self.queue.push(at, RANK_TIMER, target, Event::Timer(timer));
                }
                Out::Commit { tx, valid } => {
                    if done > self.duration {
                        continue;
                    }
                    if let Some(r) = self.txs.get_mut(&tx) {
                        if r.home == node && r.outcome.is_none() {
                            r.outcome = Some((done, valid));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<MetricsReport, SimError> {
        let p = &self.topo.profile;
        let dur_s = self.scenario.duration_s;
        if p.cpu.mining_share > 0.0 {
            let units = p.cpu.mining_share * p.cpu.manager_capacity * dur_s;
            let op = if p.cpu.costs.hash > 0.0 {
                WorkOp::Hash((units / p.cpu.costs.hash).round() as u64)
            } else {
                WorkOp::Raw(units.round() as u64)
            };
            for &m in &self.topo.managers {
                self.work.charge(m, op);
            }
        }

        let lo = SimTime::from_secs_f64(self.scenario.warmup_s);
        let hi = SimTime::from_secs_f64(dur_s - self.scenario.guard_s);
        let mut counts = TxCounts::default();
        let mut latencies = Vec::new();
        let mut commits = Vec::new();
        let mut records: Vec<&TxRecord> = self.txs.values().collect();
        records.sort_by_key(|r| (r.created, r.home));
        for r in records {
            counts.generated += 1;
            match r.outcome {
                None => counts.pending += 1,
                Some((_, false)) => counts.invalidated += 1,
                Some((t, true)) => {
                    counts.finalized += 1;
                    commits.push(t);
                    if r.created >= lo && r.created < hi {
                        latencies.push(t.saturating_sub(r.created).as_ms_f64());
                    }
                }
            }
        }
        let validated_tps = commit_rate(&commits, lo, hi);

        let mparams = self.scenario.carbon.manager_params()?;
        let cparams = self.scenario.carbon.client_params()?;
        let duration = self.duration;
        let nodes = self
            .net
            .nodes()
            .map(|spec| {
                let params = if spec.role == Role::Manager { &mparams } else { &cparams };
                NodeReport::new(spec, &self.work, duration, params)
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(MetricsReport {
            scenario: self.scenario.name.clone(),
            platform: self.scenario.platform,
            managers: self.topo.managers.len(),
            clients: self.topo.clients.len(),
            seed: self.scenario.seed,
            duration_s: dur_s,
            txs: counts,
            validated_tps,
            latency_ms: LatencySummary::from_samples(latencies),
            nodes,
            carbon: mparams,
        })
    }
}
