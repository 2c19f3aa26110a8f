//! Matching against a brute-force greedy oracle, and event-sourcing replay
//! of arbitrary operation sequences.

use std::collections::{BTreeMap, BTreeSet};

use dltsim::channel::Channel;
use dltsim::marketplace::{replay, AgreementState, Machine, Marketplace, Period, RentalRequest};
use dltsim::NodeId;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAPS: [&str; 4] = ["mill", "weld", "paint", "pick-place"];
const OPERATOR: NodeId = NodeId(1);

fn caps(mask: u8) -> BTreeSet<String> {
    CAPS.iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| c.to_string())
        .collect()
}

struct Instance {
    machines: Vec<(String, BTreeSet<String>)>,
    requests: Vec<(BTreeSet<String>, Period)>,
}

fn instance(seed: u64, machines: usize, requests: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = (0..machines).map(|i| format!("M{:03}", i * 7 % 101)).collect();
    ids.shuffle(&mut rng);
    Instance {
        machines: ids.into_iter().map(|id| (id, caps(rng.random_range(1..16)))).collect(),
        requests: (0..requests)
            .map(|_| {
                let start = rng.random_range(0..50);
                let req = caps(rng.random_range(0..16) & rng.random_range(0..16));
                (req, Period { start, end: start + rng.random_range(1..20) })
            })
            .collect(),
    }
}

/// Arrival order, each request to the smallest untaken machine id whose
/// capabilities cover it.
fn greedy_oracle(inst: &Instance) -> BTreeMap<usize, String> {
    let mut sorted: Vec<&(String, BTreeSet<String>)> = inst.machines.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut taken = BTreeSet::new();
    let mut out = BTreeMap::new();
    for (i, (req, _)) in inst.requests.iter().enumerate() {
        if let Some((id, _)) = sorted.iter().find(|(id, c)| !taken.contains(id) && req.is_subset(c)) {
            taken.insert(id.clone());
            out.insert(i, id.clone());
        }
    }
    out
}

fn run_matching(inst: &Instance) -> (Marketplace, BTreeMap<usize, String>) {
    let mut m = Marketplace::default();
    for (id, c) in &inst.machines {
        m.publish_machine(Machine::new(id, c.iter().cloned(), OPERATOR), 0).unwrap();
    }
    for (i, (req, period)) in inst.requests.iter().enumerate() {
        let r = RentalRequest::new(NodeId(100 + i as u32), req.iter().cloned(), *period, 3);
        m.submit_request(r, 0).unwrap();
    }
    let matched = m
        .match_requests(0)
        .into_iter()
        .map(|a| (a.request_id as usize, a.machine_id))
        .collect();
    (m, matched)
}

#[test]
fn matching_equals_brute_force_greedy() {
    for seed in 0..300 {
        let inst = instance(seed, 20, 30);
        let (m, matched) = run_matching(&inst);
        assert_eq!(matched, greedy_oracle(&inst), "seed {seed}");
        assert_eq!(m.state().queue.len(), 30 - matched.len());
        let (_, again) = run_matching(&inst);
        assert_eq!(again, matched);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Publish { id: u8, caps: u8 },
    Request { customer: u8, caps: u8, start: u8, len: u8, price: u8 },
    Match,
    Unlock { agreement: u8 },
    Progress { agreement: u8, bytes: u16 },
    Open { agreement: u8, deposit: u16 },
    Pay { agreement: u8, amount: u8 },
    Settle { agreement: u8, via_channel: bool },
    Tick { units: u8 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (0u8..6, 0u8..16).prop_map(|(id, caps)| Op::Publish { id, caps }),
        2 => (0u8..4, 0u8..16, 0u8..6, 0u8..12, 0u8..6)
            .prop_map(|(customer, caps, start, len, price)| Op::Request { customer, caps, start, len, price }),
        2 => Just(Op::Match),
        3 => (0u8..4).prop_map(|agreement| Op::Unlock { agreement }),
        3 => (0u8..4, 0u16..300).prop_map(|(agreement, bytes)| Op::Progress { agreement, bytes }),
        2 => (0u8..4, 0u16..200).prop_map(|(agreement, deposit)| Op::Open { agreement, deposit }),
        2 => (0u8..4, 0u8..20).prop_map(|(agreement, amount)| Op::Pay { agreement, amount }),
        3 => (0u8..4, any::<bool>()).prop_map(|(agreement, via_channel)| Op::Settle { agreement, via_channel }),
        2 => (0u8..5).prop_map(|units| Op::Tick { units }),
    ]
}

/// Applies `op`; contract errors are expected and leave state untouched.
fn apply(m: &mut Marketplace, channels: &mut BTreeMap<u64, Channel>, now: &mut u64, op: &Op) {
    let t = *now;
    match *op {
        Op::Publish { id, caps: c } => {
            let _ = m.publish_machine(Machine::new(&format!("M{id}"), caps(c), OPERATOR), t);
        }
        Op::Request { customer, caps: c, start, len, price } => {
            let period = Period { start: t + start as u64, end: t + start as u64 + len as u64 };
            let r = RentalRequest::new(NodeId(100 + customer as u32), caps(c), period, price as u64);
            let _ = m.submit_request(r, t);
        }
        Op::Match => {
            m.match_requests(t);
        }
        Op::Unlock { agreement } => {
            let _ = m.unlock_and_assign(agreement as u64, t);
        }
        Op::Progress { agreement, bytes } => {
            let blob: Vec<u8> = (0..bytes).map(|i| (i as u8) ^ agreement).collect();
            let _ = m.record_job_progress(agreement as u64, &blob, t);
        }
        Op::Open { agreement, deposit } => {
            if let Ok(ch) = m.open_payment_channel(agreement as u64, deposit as u64, t) {
                channels.insert(agreement as u64, ch);
            }
        }
        Op::Pay { agreement, amount } => {
            if let Some(ch) = channels.get_mut(&(agreement as u64)) {
                let _ = m.pay(ch, amount as u64, t);
            }
        }
        Op::Settle { agreement, via_channel } => {
            let id = agreement as u64;
            match channels.get_mut(&id).filter(|_| via_channel) {
                Some(ch) => {
                    // top the channel up to the amount due when the deposit allows
                    if let Ok(a) = m.agreement(id) {
                        let due = a.amount_due(t);
                        let paid = ch.state().balance_b;
                        if due > paid {
                            let _ = m.pay(ch, due - paid, t);
                        }
                    }
                    let _ = m.complete_and_settle(id, Some(ch), t);
                }
                None => {
                    let _ = m.complete_and_settle(id, None, t);
                }
            }
        }
        Op::Tick { units } => *now += units as u64,
    }
}

fn no_double_rental(m: &Marketplace) -> bool {
    let mut active: BTreeMap<&str, usize> = BTreeMap::new();
    for a in m.state().agreements.values() {
        if matches!(a.state, AgreementState::Unlocked | AgreementState::Executing) {
            *active.entry(a.machine_id.as_str()).or_default() += 1;
        }
    }
    active.values().all(|&n| n <= 1)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn replaying_the_ledger_rebuilds_the_state(ops in prop::collection::vec(op(), 1..80)) {
        let mut m = Marketplace::default();
        let mut channels = BTreeMap::new();
        let mut now = 0;
        for op in &ops {
            apply(&mut m, &mut channels, &mut now, op);
            prop_assert!(no_double_rental(&m));
            let rebuilt = replay(m.ledger(), m.time_unit()).unwrap();
            prop_assert_eq!(&rebuilt, m.state());
        }
        for a in m.state().agreements.values().filter(|a| a.state == AgreementState::Settled) {
            if let Some(ch) = a.channel_id {
                prop_assert_eq!(m.channels().on_chain_tx_count(ch), 2);
            }
        }
    }
}
