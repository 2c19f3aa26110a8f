use std::collections::{BTreeMap, BTreeSet};

use super::codec::{Dec, Enc};
use super::{
    session_node, AgreementState, ControlToken, Machine, MachineStatus, MarketError, Period,
    RentalAgreement, RentalRequest, SESSION_BASE,
};
use crate::channel::{ChannelId, ChannelTx};
use crate::ledger::{Hash, Transaction, TxKind};
use crate::types::{NodeId, SimTime};

const TAG_PUBLISH: u8 = b'P';
const TAG_REQUEST: u8 = b'R';
const TAG_MATCH: u8 = b'M';
const TAG_UNLOCK: u8 = b'U';
const TAG_SETTLE: u8 = b'S';

/// A contract state transition. Times are contract time units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MarketEvent {
    Published {
        machine_id: String,
        capabilities: BTreeSet<String>,
        owner: NodeId,
    },
    Requested(RentalRequest),
    Matched {
        agreement_id: u64,
        request_id: u64,
        machine_id: String,
        at: u64,
    },
    Unlocked {
        agreement_id: u64,
        at: u64,
    },
    Progress {
        agreement_id: u64,
        anchor: Hash,
        at: u64,
    },
    ChannelOpened {
        agreement_id: u64,
        channel_id: ChannelId,
    },
    Settled {
        agreement_id: u64,
        amount: u64,
        at: u64,
        via_channel: bool,
    },
}

impl MarketEvent {
    /// Ledger encoding. Channel events are emitted by the channel contract
    /// and return `None` here.
    pub fn to_tx(&self, at: SimTime) -> Option<Transaction> {
        let (sender, kind, payload) = match self {
            MarketEvent::Published {
                machine_id,
                capabilities,
                owner,
            } => (
                *owner,
                TxKind::MachinePublish,
                Enc::new(TAG_PUBLISH)
                    .str(machine_id)
                    .strs(capabilities.iter())
                    .finish(),
            ),
            MarketEvent::Requested(r) => (
                r.customer,
                TxKind::RentalRequest,
                Enc::new(TAG_REQUEST)
                    .u64(r.request_id)
                    .u64(r.period.start)
                    .u64(r.period.end)
                    .u64(r.offered_price)
                    .strs(r.required_capabilities.iter())
                    .finish(),
            ),
            MarketEvent::Matched {
                agreement_id,
                request_id,
                machine_id,
                ..
            } => (
                NodeId(0),
                TxKind::RentalRequest,
                Enc::new(TAG_MATCH)
                    .u64(*agreement_id)
                    .u64(*request_id)
                    .str(machine_id)
                    .finish(),
            ),
            MarketEvent::Unlocked { agreement_id, .. } => (
                NodeId(0),
                TxKind::RentalRequest,
                Enc::new(TAG_UNLOCK).u64(*agreement_id).finish(),
            ),
            MarketEvent::Progress {
                agreement_id,
                anchor,
                ..
            } => (session_node(*agreement_id), TxKind::DataAnchor, anchor.0.to_vec()),
            MarketEvent::Settled {
                agreement_id,
                amount,
                via_channel: false,
                ..
            } => (
                NodeId(0),
                TxKind::Transfer,
                Enc::new(TAG_SETTLE).u64(*agreement_id).u64(*amount).finish(),
            ),
            MarketEvent::ChannelOpened { .. } | MarketEvent::Settled { .. } => return None,
        };
        Some(Transaction::new(sender, kind, payload, at))
    }

    /// Inverse of [`Self::to_tx`], plus the channel contract's open/close.
    pub fn from_tx(tx: &Transaction, time_unit: SimTime) -> Result<MarketEvent, MarketError> {
        let bad = || MarketError::Decode(tx.tx_id.short());
        let at = tx.created_at.0 / time_unit.0.max(1);
        match tx.kind {
            TxKind::ChannelOpen | TxKind::ChannelClose => {
                return match ChannelTx::decode(tx).ok_or_else(bad)? {
                    ChannelTx::Open {
                        channel_id, memo, ..
                    } => Ok(MarketEvent::ChannelOpened {
                        agreement_id: memo,
                        channel_id,
                    }),
                    ChannelTx::Close {
                        balance_b, memo, ..
                    } => Ok(MarketEvent::Settled {
                        agreement_id: memo,
                        amount: balance_b,
                        at,
                        via_channel: true,
                    }),
                };
            }
            TxKind::DataAnchor => {
                let anchor: [u8; 32] = tx.payload.as_slice().try_into().map_err(|_| bad())?;
                let agreement_id = tx.sender.0.checked_sub(SESSION_BASE).ok_or_else(bad)? as u64;
                return Ok(MarketEvent::Progress {
                    agreement_id,
                    anchor: Hash(anchor),
                    at,
                });
            }
            _ => {}
        }
        let mut d = Dec::new(&tx.payload);
        let event = match (tx.kind, d.u8()) {
            (TxKind::MachinePublish, Some(TAG_PUBLISH)) => MarketEvent::Published {
                machine_id: d.str().ok_or_else(bad)?,
                capabilities: d.strs().ok_or_else(bad)?.into_iter().collect(),
                owner: tx.sender,
            },
            (TxKind::RentalRequest, Some(TAG_REQUEST)) => {
                let request_id = d.u64().ok_or_else(bad)?;
                let start = d.u64().ok_or_else(bad)?;
                let end = d.u64().ok_or_else(bad)?;
                let offered_price = d.u64().ok_or_else(bad)?;
                let caps = d.strs().ok_or_else(bad)?;
                MarketEvent::Requested(RentalRequest {
                    request_id,
                    customer: tx.sender,
                    required_capabilities: caps.into_iter().collect(),
                    period: Period { start, end },
                    offered_price,
                })
            }
            (TxKind::RentalRequest, Some(TAG_MATCH)) => MarketEvent::Matched {
                agreement_id: d.u64().ok_or_else(bad)?,
                request_id: d.u64().ok_or_else(bad)?,
                machine_id: d.str().ok_or_else(bad)?,
                at,
            },
            (TxKind::RentalRequest, Some(TAG_UNLOCK)) => MarketEvent::Unlocked {
                agreement_id: d.u64().ok_or_else(bad)?,
                at,
            },
            (TxKind::Transfer, Some(TAG_SETTLE)) => MarketEvent::Settled {
                agreement_id: d.u64().ok_or_else(bad)?,
                amount: d.u64().ok_or_else(bad)?,
                at,
                via_channel: false,
            },
            _ => return Err(bad()),
        };
        if !d.done() {
            return Err(bad());
        }
        Ok(event)
    }
}

/// Everything the ledger determines about the contract.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarketState {
    pub machines: BTreeMap<String, Machine>,
    pub queue: Vec<RentalRequest>,
    pub agreements: BTreeMap<u64, RentalAgreement>,
    /// Active bookings per machine.
    pub bookings: BTreeMap<String, Vec<(Period, u64)>>,
    pub next_request_id: u64,
    pub next_agreement_id: u64,
}

impl MarketState {
    fn schedule_free(&self, machine_id: &str, period: &Period) -> bool {
        self.bookings
            .get(machine_id)
            .is_none_or(|b| b.iter().all(|(p, _)| !p.overlaps(period)))
    }

    /// First queued request (arrival order) that some machine can serve,
    /// with the lexicographically smallest such machine.
    pub fn next_match(&self) -> Option<(u64, String)> {
        self.queue.iter().find_map(|r| {
            self.machines
                .values()
                .find(|m| {
                    m.status == MachineStatus::Available
                        && m.capabilities.is_superset(&r.required_capabilities)
                        && self.schedule_free(&m.machine_id, &r.period)
                })
                .map(|m| (r.request_id, m.machine_id.clone()))
        })
    }

    fn agreement_mut(&mut self, id: u64) -> Result<&mut RentalAgreement, MarketError> {
        self.agreements
            .get_mut(&id)
            .ok_or(MarketError::UnknownAgreement(id))
    }

    fn machine_mut(&mut self, id: &str) -> Result<&mut Machine, MarketError> {
        self.machines
            .get_mut(id)
            .ok_or_else(|| MarketError::Decode(format!("unknown machine {id}")))
    }

    fn advance(
        &mut self,
        id: u64,
        from: &[AgreementState],
        to: AgreementState,
    ) -> Result<&mut RentalAgreement, MarketError> {
        let a = self.agreement_mut(id)?;
        if !from.contains(&a.state) {
            return Err(MarketError::WrongState {
                agreement_id: id,
                found: a.state,
            });
        }
        a.state = to;
        Ok(a)
    }

    pub fn apply(&mut self, event: &MarketEvent) -> Result<(), MarketError> {
        use AgreementState::*;
        match event {
            MarketEvent::Published {
                machine_id,
                capabilities,
                owner,
            } => {
                if self.machines.contains_key(machine_id) {
                    return Err(MarketError::DuplicateMachineId(machine_id.clone()));
                }
                self.machines.insert(
                    machine_id.clone(),
                    Machine {
                        machine_id: machine_id.clone(),
                        capabilities: capabilities.clone(),
                        owner: *owner,
                        status: MachineStatus::Available,
                    },
                );
            }
            MarketEvent::Requested(r) => {
                self.next_request_id = self.next_request_id.max(r.request_id + 1);
                self.queue.push(r.clone());
            }
            MarketEvent::Matched {
                agreement_id,
                request_id,
                machine_id,
                at,
            } => {
                let pos = self
                    .queue
                    .iter()
                    .position(|r| r.request_id == *request_id)
                    .ok_or_else(|| MarketError::Decode(format!("unknown request {request_id}")))?;
                let req = self.queue.remove(pos);
                let machine = self.machine_mut(machine_id)?;
                machine.status = MachineStatus::Locked;
                let operator = machine.owner;
                self.bookings
                    .entry(machine_id.clone())
                    .or_default()
                    .push((req.period, *agreement_id));
                self.agreements.insert(
                    *agreement_id,
                    RentalAgreement {
                        agreement_id: *agreement_id,
                        request_id: *request_id,
                        machine_id: machine_id.clone(),
                        customer: req.customer,
                        operator,
                        period: req.period,
                        price: req.offered_price,
                        state: Matched,
                        channel_id: None,
                        token: None,
                        anchors: Vec::new(),
                        t_matched: *at,
                        t_unlocked: None,
                        t_settled: None,
                        amount: None,
                    },
                );
                self.next_agreement_id = self.next_agreement_id.max(agreement_id + 1);
            }
            MarketEvent::Unlocked { agreement_id, at } => {
                let a = self.advance(*agreement_id, &[Matched], Unlocked)?;
                a.t_unlocked = Some(*at);
                a.token = Some(ControlToken {
                    agreement_id: *agreement_id,
                    machine_id: a.machine_id.clone(),
                    holder: a.customer,
                    session: session_node(*agreement_id),
                });
                let machine_id = a.machine_id.clone();
                self.machine_mut(&machine_id)?.status = MachineStatus::Assigned;
            }
            MarketEvent::Progress {
                agreement_id,
                anchor,
                ..
            } => {
                let a = self.advance(*agreement_id, &[Unlocked, Executing], Executing)?;
                a.anchors.push(*anchor);
                let machine_id = a.machine_id.clone();
                self.machine_mut(&machine_id)?.status = MachineStatus::Executing;
            }
            MarketEvent::ChannelOpened {
                agreement_id,
                channel_id,
            } => {
                let a = self.agreement_mut(*agreement_id)?;
                if a.channel_id.is_some() || a.state >= Completed {
                    return Err(MarketError::WrongState {
                        agreement_id: *agreement_id,
                        found: a.state,
                    });
                }
                a.channel_id = Some(*channel_id);
            }
            MarketEvent::Settled {
                agreement_id,
                amount,
                at,
                ..
            } => {
                let a = self.advance(*agreement_id, &[Executing], Settled)?;
                a.t_settled = Some(*at);
                a.amount = Some(*amount);
                let machine_id = a.machine_id.clone();
                self.machine_mut(&machine_id)?.status = MachineStatus::Available;
                if let Some(b) = self.bookings.get_mut(&machine_id) {
                    b.retain(|(_, id)| id != agreement_id);
                    if b.is_empty() {
                        self.bookings.remove(&machine_id);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rebuilds contract state from ledger transactions alone.
pub fn replay(txs: &[Transaction], time_unit: SimTime) -> Result<MarketState, MarketError> {
    let mut state = MarketState::default();
    for tx in txs {
        state.apply(&MarketEvent::from_tx(tx, time_unit)?)?;
    }
    Ok(state)
}
