//! Scripted rental workload: publishes machines, streams requests and drives
//! every matched agreement through unlock, progress and settlement.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Machine, MarketError, Marketplace, Period, RentalRequest};
use crate::channel::Channel;
use crate::ledger::Transaction;
use crate::types::{NodeId, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketWorkload {
    pub machines: usize,
    pub capabilities: Vec<String>,
    pub operator: u32,
    pub customers: u32,
    pub requests: usize,
    /// Time units between consecutive requests.
    pub request_interval: u64,
    /// Time units between a request and its desired start.
    pub lead_time: u64,
    pub rental_length: u64,
    pub price: u64,
    pub progress_interval: u64,
    pub anchor_bytes: usize,
    pub use_channels: bool,
    /// Milliseconds per contract time unit.
    pub time_unit_ms: u64,
    pub seed: u64,
}

impl Default for MarketWorkload {
    fn default() -> Self {
        MarketWorkload {
            machines: 4,
            capabilities: vec!["mill".into(), "weld".into(), "pick-place".into()],
            operator: 1,
            customers: 2,
            requests: 8,
            request_interval: 2,
            lead_time: 1,
            rental_length: 6,
            price: 5,
            progress_interval: 2,
            anchor_bytes: 1024,
            use_channels: true,
            time_unit_ms: 1000,
            seed: 7,
        }
    }
}

pub struct WorkloadOutcome {
    pub market: Marketplace,
    /// Ledger transactions in emission order.
    pub txs: Vec<Transaction>,
    pub end_time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Request(usize),
    Unlock(u64),
    Progress(u64),
    Settle(u64),
}

/// Customer node ids start here so they do not collide with simulator nodes.
pub const CUSTOMER_BASE: u32 = 0x2000_0000;

/// Runs the workload to completion and returns the marketplace and its
/// ledger. Every agreement that is matched is also settled.
pub fn run_workload(cfg: &MarketWorkload) -> Result<WorkloadOutcome, MarketError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut market = Marketplace::new(SimTime::from_ms(cfg.time_unit_ms));
    let operator = NodeId(cfg.operator);
    let caps = &cfg.capabilities;

    for i in 0..cfg.machines {
        let mut own: Vec<String> = caps
            .iter()
            .filter(|_| rng.random_bool(0.5))
            .cloned()
            .collect();
        if own.is_empty() && !caps.is_empty() {
            own.push(caps[i % caps.len()].clone());
        }
        market.publish_machine(Machine::new(&format!("machine-{i:03}"), own, operator), 0)?;
    }

    let mut queue: BinaryHeap<Reverse<(u64, u64, Step)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |q: &mut BinaryHeap<Reverse<(u64, u64, Step)>>, t: u64, s: Step| {
        q.push(Reverse((t, seq, s)));
        seq += 1;
    };
    for i in 0..cfg.requests {
        push(&mut queue, i as u64 * cfg.request_interval, Step::Request(i));
    }

    let mut channels: BTreeMap<u64, Channel> = BTreeMap::new();
    let mut paid: BTreeMap<u64, u64> = BTreeMap::new();
    let mut end_time = 0;
    let step = cfg.progress_interval.max(1);

    while let Some(Reverse((now, _, action))) = queue.pop() {
        end_time = now;
        match action {
            Step::Request(i) => {
                let customer = NodeId(CUSTOMER_BASE + (i as u32 % cfg.customers.max(1)));
                let need: Vec<String> = caps.choose(&mut rng).cloned().into_iter().collect();
                let start = now + cfg.lead_time;
                let period = Period {
                    start,
                    end: start + cfg.rental_length.max(1),
                };
                market.submit_request(RentalRequest::new(customer, need, period, cfg.price), now)?;
            }
            Step::Unlock(id) => {
                market.unlock_and_assign(id, now)?;
                if cfg.use_channels {
                    let a = market.agreement(id)?;
                    let deposit = a.price * a.period.len();
                    channels.insert(id, market.open_payment_channel(id, deposit, now)?);
                }
                paid.insert(id, 0);
                push(&mut queue, now, Step::Progress(id));
            }
            Step::Progress(id) => {
                let mut blob = vec![0u8; cfg.anchor_bytes.max(1)];
                rng.fill(blob.as_mut_slice());
                market.record_job_progress(id, &blob, now)?;
                settle_up(&market, &mut channels, &mut paid, id, now)?;
                let end = market.agreement(id)?.period.end;
                if now + step < end {
                    push(&mut queue, now + step, Step::Progress(id));
                } else {
                    push(&mut queue, end.max(now), Step::Settle(id));
                }
            }
            Step::Settle(id) => {
                settle_up(&market, &mut channels, &mut paid, id, now)?;
                market.complete_and_settle(id, channels.get_mut(&id), now)?;
            }
        }
        for a in market.match_requests(now) {
            let at = a.period.start.max(now);
            push(&mut queue, at, Step::Unlock(a.agreement_id));
        }
    }

    let txs = market.ledger().to_vec();
    Ok(WorkloadOutcome {
        market,
        txs,
        end_time,
    })
}

/// One channel update per progress report, paying what has accrued since
/// the last one.
fn settle_up(
    market: &Marketplace,
    channels: &mut BTreeMap<u64, Channel>,
    paid: &mut BTreeMap<u64, u64>,
    id: u64,
    now: u64,
) -> Result<(), MarketError> {
    let Some(ch) = channels.get_mut(&id) else {
        return Ok(());
    };
    let due = market.agreement(id)?.amount_due(now);
    let so_far = paid.entry(id).or_insert(0);
    if due > *so_far {
        market.pay(ch, due - *so_far, now)?;
        *so_far = due;
    }
    Ok(())
}
