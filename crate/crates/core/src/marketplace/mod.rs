//! Shared-manufacturing contract: machine registry, rental matching, unlock,
//! progress anchoring and settlement. Every state change is an event that is
//! also emitted as a ledger transaction, so the full state can be rebuilt by
//! replaying the ledger.

mod codec;
mod state;
pub mod workload;

use std::collections::BTreeSet;
use std::io;

use serde::Serialize;

use crate::channel::{Channel, ChannelContract, ChannelError, ChannelId};
use crate::ledger::{ContentStore, Hash, StoreError, Transaction};
use crate::types::{NodeId, SimTime};

pub use state::{replay, MarketEvent, MarketState};
pub use workload::{run_workload, MarketWorkload, WorkloadOutcome};

/// Anchors are signed with a per-agreement session identity derived from
/// the control token; its node id is this base plus the agreement id.
pub const SESSION_BASE: u32 = 0x4000_0000;

pub fn session_node(agreement_id: u64) -> NodeId {
    NodeId(SESSION_BASE + agreement_id as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MachineStatus {
    Available,
    Locked,
    Assigned,
    Executing,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Machine {
    pub machine_id: String,
    pub capabilities: BTreeSet<String>,
    pub owner: NodeId,
    pub status: MachineStatus,
}

impl Machine {
    pub fn new<I, S>(machine_id: &str, capabilities: I, owner: NodeId) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Machine {
            machine_id: machine_id.to_string(),
            capabilities: capabilities.into_iter().map(Into::into).collect(),
            owner,
            status: MachineStatus::Available,
        }
    }
}

/// Half-open interval `[start, end)` in contract time units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Period {
    pub start: u64,
    pub end: u64,
}

impl Period {
    pub fn overlaps(&self, other: &Period) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RentalRequest {
    /// Assigned by the book on submission.
    pub request_id: u64,
    pub customer: NodeId,
    pub required_capabilities: BTreeSet<String>,
    pub period: Period,
    /// Micro-units per time unit.
    pub offered_price: u64,
}

impl RentalRequest {
    pub fn new<I, S>(customer: NodeId, required: I, period: Period, offered_price: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RentalRequest {
            request_id: 0,
            customer,
            required_capabilities: required.into_iter().map(Into::into).collect(),
            period,
            offered_price,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum AgreementState {
    Matched,
    Unlocked,
    Executing,
    Completed,
    Settled,
}

/// Capability record handed to the customer on unlock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlToken {
    pub agreement_id: u64,
    pub machine_id: String,
    pub holder: NodeId,
    pub session: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RentalAgreement {
    pub agreement_id: u64,
    pub request_id: u64,
    pub machine_id: String,
    pub customer: NodeId,
    pub operator: NodeId,
    pub period: Period,
    pub price: u64,
    pub state: AgreementState,
    pub channel_id: Option<ChannelId>,
    pub token: Option<ControlToken>,
    pub anchors: Vec<Hash>,
    pub t_matched: u64,
    pub t_unlocked: Option<u64>,
    pub t_settled: Option<u64>,
    pub amount: Option<u64>,
}

impl RentalAgreement {
    /// Amount owed if settled at `now`: price times the time elapsed since
    /// unlock, capped at the period end.
    pub fn amount_due(&self, now: u64) -> u64 {
        let start = self.t_unlocked.unwrap_or(self.period.start);
        self.price * now.min(self.period.end).saturating_sub(start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarketError {
    #[error("machine {0} is already registered")]
    DuplicateMachineId(String),
    #[error("period start must precede end")]
    InvalidPeriod,
    #[error("price must be positive")]
    NonPositivePrice,
    #[error("unknown agreement {0}")]
    UnknownAgreement(u64),
    #[error("agreement {agreement_id} is {found:?}")]
    WrongState {
        agreement_id: u64,
        found: AgreementState,
    },
    #[error("unlock at {now} precedes start {start}")]
    NotYetStartTime { now: u64, start: u64 },
    #[error("channel pays {got}, agreement requires {expected}")]
    BalanceMismatch { expected: u64, got: u64 },
    #[error("channel {0:?} does not belong to this agreement")]
    ForeignChannel(ChannelId),
    #[error("agreement has open channel {0:?}; settle through it")]
    ChannelRequired(ChannelId),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("undecodable ledger transaction {0}")]
    Decode(String),
}

/// Row of the exported agreement history.
#[derive(Clone, Debug, Serialize)]
pub struct AgreementRow {
    pub agreement_id: u64,
    pub machine_id: String,
    pub customer: u32,
    pub t_matched: u64,
    pub t_settled: Option<u64>,
    pub amount: Option<u64>,
}

/// The live contract: event-sourced state plus the off-chain pieces (blob
/// store, channel contract) and the emitted ledger.
#[derive(Clone, Debug)]
pub struct Marketplace {
    state: MarketState,
    store: ContentStore,
    channels: ChannelContract,
    ledger: Vec<Transaction>,
    time_unit: SimTime,
    unlock_tolerance: u64,
}

impl Default for Marketplace {
    fn default() -> Self {
        Self::new(SimTime::from_ms(1000))
    }
}

impl Marketplace {
    /// `time_unit` maps one contract time unit to simulated time.
    pub fn new(time_unit: SimTime) -> Self {
        Marketplace {
            state: MarketState::default(),
            store: ContentStore::new(),
            channels: ChannelContract::new(),
            ledger: Vec::new(),
            time_unit,
            unlock_tolerance: 0,
        }
    }

    /// Allows unlocking up to `units` before the period start.
    pub fn with_unlock_tolerance(mut self, units: u64) -> Self {
        self.unlock_tolerance = units;
        self
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn ledger(&self) -> &[Transaction] {
        &self.ledger
    }

    pub fn time_unit(&self) -> SimTime {
        self.time_unit
    }

    pub fn channels(&self) -> &ChannelContract {
        &self.channels
    }

    pub fn agreement(&self, id: u64) -> Result<&RentalAgreement, MarketError> {
        self.state
            .agreements
            .get(&id)
            .ok_or(MarketError::UnknownAgreement(id))
    }

    fn sim_time(&self, units: u64) -> SimTime {
        SimTime(units * self.time_unit.0)
    }

    fn commit(&mut self, event: MarketEvent, at: u64) -> Transaction {
        let tx = event
            .to_tx(self.sim_time(at))
            .expect("contract events other than channel ones encode to a tx");
        self.state.apply(&event).expect("live events are pre-validated");
        self.ledger.push(tx.clone());
        tx
    }

    /// Step 1: registers a machine as Available.
    pub fn publish_machine(&mut self, machine: Machine, now: u64) -> Result<Transaction, MarketError> {
        if self.state.machines.contains_key(&machine.machine_id) {
            return Err(MarketError::DuplicateMachineId(machine.machine_id));
        }
        let event = MarketEvent::Published {
            machine_id: machine.machine_id,
            capabilities: machine.capabilities,
            owner: machine.owner,
        };
        Ok(self.commit(event, now))
    }

    /// Step 2: queues a request in arrival order.
    pub fn submit_request(&mut self, mut req: RentalRequest, now: u64) -> Result<Transaction, MarketError> {
        if req.period.start >= req.period.end {
            return Err(MarketError::InvalidPeriod);
        }
        if req.offered_price == 0 {
            return Err(MarketError::NonPositivePrice);
        }
        req.request_id = self.state.next_request_id;
        Ok(self.commit(MarketEvent::Requested(req), now))
    }

    /// Step 3: greedy first-come-first-served matching against the
    /// lexicographically smallest suitable machine.
    pub fn match_requests(&mut self, now: u64) -> Vec<RentalAgreement> {
        let mut out = Vec::new();
        while let Some((request_id, machine_id)) = self.state.next_match() {
            let agreement_id = self.state.next_agreement_id;
            self.commit(
                MarketEvent::Matched {
                    agreement_id,
                    request_id,
                    machine_id,
                    at: now,
                },
                now,
            );
            out.push(self.state.agreements[&agreement_id].clone());
        }
        out
    }

    /// Step 4: hands the machine to the customer.
    pub fn unlock_and_assign(&mut self, agreement_id: u64, now: u64) -> Result<Transaction, MarketError> {
        let a = self.agreement(agreement_id)?;
        if a.state != AgreementState::Matched {
            return Err(MarketError::WrongState {
                agreement_id,
                found: a.state,
            });
        }
        if now + self.unlock_tolerance < a.period.start {
            return Err(MarketError::NotYetStartTime {
                now,
                start: a.period.start,
            });
        }
        Ok(self.commit(MarketEvent::Unlocked { agreement_id, at: now }, now))
    }

    /// Steps 5-6: stores the blob off-ledger and anchors its hash.
    pub fn record_job_progress(
        &mut self,
        agreement_id: u64,
        anchor: &[u8],
        now: u64,
    ) -> Result<Transaction, MarketError> {
        let a = self.agreement(agreement_id)?;
        if !matches!(a.state, AgreementState::Unlocked | AgreementState::Executing) {
            return Err(MarketError::WrongState {
                agreement_id,
                found: a.state,
            });
        }
        let hash = self.store.store_blob(anchor)?;
        Ok(self.commit(
            MarketEvent::Progress {
                agreement_id,
                anchor: hash,
                at: now,
            },
            now,
        ))
    }

    /// Opens a customer-funded channel to the operator for `agreement_id`.
    pub fn open_payment_channel(
        &mut self,
        agreement_id: u64,
        deposit: u64,
        now: u64,
    ) -> Result<Channel, MarketError> {
        let a = self.agreement(agreement_id)?;
        if a.state >= AgreementState::Completed || a.channel_id.is_some() {
            return Err(MarketError::WrongState {
                agreement_id,
                found: a.state,
            });
        }
        let (customer, operator) = (a.customer, a.operator);
        let at = self.sim_time(now);
        let (channel, tx) =
            self.channels
                .open_channel_tagged(customer, operator, deposit, agreement_id, at)?;
        self.state.apply(&MarketEvent::ChannelOpened {
            agreement_id,
            channel_id: channel.id(),
        })?;
        self.ledger.push(tx);
        Ok(channel)
    }

    /// Off-chain micro-payment from customer to operator.
    pub fn pay(&self, channel: &mut Channel, amount: u64, now: u64) -> Result<(), MarketError> {
        let s = channel.state();
        let signers = [s.party_a, s.party_b];
        channel.update(amount, &signers, self.sim_time(now))?;
        Ok(())
    }

    /// Step 7: settles through the agreement's channel (closing it) or, if
    /// none was opened, with a single transfer; frees the machine.
    pub fn complete_and_settle(
        &mut self,
        agreement_id: u64,
        channel_final: Option<&mut Channel>,
        now: u64,
    ) -> Result<Transaction, MarketError> {
        let a = self.agreement(agreement_id)?;
        if a.state != AgreementState::Executing {
            return Err(MarketError::WrongState {
                agreement_id,
                found: a.state,
            });
        }
        let expected = a.amount_due(now);
        if let (None, Some(open)) = (&channel_final, a.channel_id) {
            return Err(MarketError::ChannelRequired(open));
        }
        match channel_final {
            Some(ch) => {
                if Some(ch.id()) != a.channel_id {
                    return Err(MarketError::ForeignChannel(ch.id()));
                }
                let got = ch.state().balance_b;
                if got != expected {
                    return Err(MarketError::BalanceMismatch { expected, got });
                }
                let at = self.sim_time(now);
                let (_, tx) = self.channels.close_channel_tagged(ch, agreement_id, at)?;
                self.state.apply(&MarketEvent::Settled {
                    agreement_id,
                    amount: got,
                    at: now,
                    via_channel: true,
                })?;
                self.ledger.push(tx.clone());
                Ok(tx)
            }
            None => Ok(self.commit(
                MarketEvent::Settled {
                    agreement_id,
                    amount: expected,
                    at: now,
                    via_channel: false,
                },
                now,
            )),
        }
    }

    pub fn agreement_rows(&self) -> Vec<AgreementRow> {
        self.state
            .agreements
            .values()
            .map(|a| AgreementRow {
                agreement_id: a.agreement_id,
                machine_id: a.machine_id.clone(),
                customer: a.customer.0,
                t_matched: a.t_matched,
                t_settled: a.t_settled,
                amount: a.amount,
            })
            .collect()
    }

    /// Writes `agreement_id,machine_id,customer,t_matched,t_settled,amount`.
    pub fn write_agreements_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.agreement_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TxKind;

    const OP: NodeId = NodeId(1);
    const CUST: NodeId = NodeId(2);

    fn req(caps: &[&str], start: u64, end: u64, price: u64) -> RentalRequest {
        RentalRequest::new(CUST, caps.iter().copied(), Period { start, end }, price)
    }

    fn running(price: u64, end: u64) -> (Marketplace, u64) {
        let mut m = Marketplace::default();
        m.publish_machine(Machine::new("M", ["weld"], OP), 0).unwrap();
        m.submit_request(req(&["weld"], 0, end, price), 0).unwrap();
        let id = m.match_requests(0)[0].agreement_id;
        m.unlock_and_assign(id, 0).unwrap();
        m.record_job_progress(id, b"start", 0).unwrap();
        (m, id)
    }

    #[test]
    fn publish_registers_machine() {
        let mut m = Marketplace::default();
        let tx = m.publish_machine(Machine::new("UR5-01", ["pick-place"], OP), 0).unwrap();
        assert_eq!(tx.kind, TxKind::MachinePublish);
        assert_eq!(m.state().machines.len(), 1);
        assert_eq!(
            m.publish_machine(Machine::new("UR5-01", ["x"], OP), 0).unwrap_err(),
            MarketError::DuplicateMachineId("UR5-01".into())
        );
        assert_eq!(m.ledger().len(), 1);
    }

    #[test]
    fn fifty_machines_fifty_txs() {
        let mut m = Marketplace::default();
        for i in 0..50 {
            m.publish_machine(Machine::new(&format!("m{i:02}"), ["a"], OP), 0).unwrap();
        }
        assert_eq!(m.ledger().len(), 50);
        assert_eq!(m.state().machines.len(), 50);
    }

    #[test]
    fn request_validation() {
        let mut m = Marketplace::default();
        assert_eq!(m.submit_request(req(&[], 5, 5, 1), 0).unwrap_err(), MarketError::InvalidPeriod);
        assert_eq!(m.submit_request(req(&[], 0, 5, 0), 0).unwrap_err(), MarketError::NonPositivePrice);
        let tx = m.submit_request(req(&[], 0, 5, 1), 0).unwrap();
        assert_eq!(tx.kind, TxKind::RentalRequest);
        assert_eq!(m.state().queue.len(), 1);
    }

    #[test]
    fn lexicographic_tie_break() {
        let mut m = Marketplace::default();
        m.publish_machine(Machine::new("B", ["weld"], OP), 0).unwrap();
        m.publish_machine(Machine::new("A", ["weld"], OP), 0).unwrap();
        m.submit_request(req(&["weld"], 0, 10, 1), 0).unwrap();
        let matched = m.match_requests(0);
        assert_eq!(matched[0].machine_id, "A");
        assert_eq!(m.state().machines["A"].status, MachineStatus::Locked);
    }

    #[test]
    fn overlapping_requests_queue() {
        let mut m = Marketplace::default();
        m.publish_machine(Machine::new("A", ["weld"], OP), 0).unwrap();
        m.submit_request(req(&["weld"], 0, 10, 1), 0).unwrap();
        m.submit_request(req(&["weld"], 5, 15, 1), 0).unwrap();
        assert_eq!(m.match_requests(0).len(), 1);
        assert_eq!(m.state().queue.len(), 1);
    }

    #[test]
    fn unlock_checks_state_and_time() {
        let mut m = Marketplace::default();
        m.publish_machine(Machine::new("A", ["weld"], OP), 0).unwrap();
        m.submit_request(req(&["weld"], 10, 20, 1), 0).unwrap();
        let id = m.match_requests(0)[0].agreement_id;
        assert_eq!(
            m.unlock_and_assign(id, 9).unwrap_err(),
            MarketError::NotYetStartTime { now: 9, start: 10 }
        );
        m.unlock_and_assign(id, 10).unwrap();
        assert_eq!(m.state().machines["A"].status, MachineStatus::Assigned);
        let token = m.agreement(id).unwrap().token.clone().unwrap();
        assert_eq!(token.holder, CUST);
        assert!(matches!(m.unlock_and_assign(id, 10), Err(MarketError::WrongState { .. })));
    }

    #[test]
    fn progress_anchors_only_the_hash() {
        let (mut m, id) = running(1, 1000);
        assert_eq!(m.agreement(id).unwrap().state, AgreementState::Executing);
        let before_store = m.store().total_bytes();
        let mut ledger_bytes = 0;
        for i in 0..100u32 {
            let mut blob = vec![0u8; 10 * 1024];
            blob[..4].copy_from_slice(&i.to_le_bytes());
            let tx = m.record_job_progress(id, &blob, 1).unwrap();
            assert_eq!(tx.kind, TxKind::DataAnchor);
            assert_eq!(tx.sender, session_node(id));
            ledger_bytes += tx.payload.len();
        }
        assert_eq!(ledger_bytes, 100 * 32);
        assert_eq!(m.store().total_bytes() - before_store, 100 * 10240);
    }

    #[test]
    fn settle_with_channel() {
        let (mut m, id) = running(5, 10);
        let mut ch = m.open_payment_channel(id, 100, 0).unwrap();
        for t in 1..=10 {
            m.pay(&mut ch, 5, t).unwrap();
        }
        let tx = m.complete_and_settle(id, Some(&mut ch), 10).unwrap();
        assert_eq!(tx.kind, TxKind::ChannelClose);
        let a = m.agreement(id).unwrap();
        assert_eq!((a.state, a.amount), (AgreementState::Settled, Some(50)));
        assert_eq!(m.state().machines["M"].status, MachineStatus::Available);
        assert!(matches!(
            m.record_job_progress(id, b"late", 11),
            Err(MarketError::WrongState { .. })
        ));
    }

    #[test]
    fn channel_balance_mismatch() {
        let (mut m, id) = running(5, 10);
        let mut ch = m.open_payment_channel(id, 100, 0).unwrap();
        m.pay(&mut ch, 49, 5).unwrap();
        assert_eq!(
            m.complete_and_settle(id, Some(&mut ch), 10).unwrap_err(),
            MarketError::BalanceMismatch { expected: 50, got: 49 }
        );
    }

    #[test]
    fn settle_without_channel_is_one_transfer() {
        let (mut m, id) = running(5, 10);
        let before = m.ledger().len();
        let tx = m.complete_and_settle(id, None, 10).unwrap();
        assert_eq!(tx.kind, TxKind::Transfer);
        assert_eq!(m.ledger().len(), before + 1);
    }

    #[test]
    fn open_channel_must_settle_through_it() {
        let (mut m, id) = running(5, 10);
        let ch = m.open_payment_channel(id, 100, 0).unwrap();
        assert_eq!(
            m.complete_and_settle(id, None, 10).unwrap_err(),
            MarketError::ChannelRequired(ch.id())
        );
    }

    #[test]
    fn agreements_csv() {
        let (mut m, id) = running(5, 10);
        m.complete_and_settle(id, None, 10).unwrap();
        let mut buf = Vec::new();
        m.write_agreements_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "agreement_id,machine_id,customer,t_matched,t_settled,amount\n0,M,2,0,10,50\n"
        );
    }

    #[test]
    fn replay_matches_live_state() {
        let (mut m, id) = running(5, 10);
        let mut ch = m.open_payment_channel(id, 100, 0).unwrap();
        m.pay(&mut ch, 50, 10).unwrap();
        m.complete_and_settle(id, Some(&mut ch), 10).unwrap();
        m.submit_request(req(&["paint"], 3, 4, 2), 11).unwrap();
        let rebuilt = replay(m.ledger(), m.time_unit()).unwrap();
        assert_eq!(&rebuilt, m.state());
    }
}
