//! Unidirectional payment channels. Party A funds the channel and pays B
//! through dual-signed off-chain states; only the open and the cooperative
//! close touch the ledger.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use crate::ledger::sig::{self, Signature};
use crate::ledger::{Transaction, TxKind};
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ChannelId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("deposit must be positive")]
    NonPositiveDeposit,
    #[error("transfer of {requested} exceeds balance {available}")]
    InsufficientBalance { requested: u64, available: u64 },
    #[error("transfer must be positive")]
    ZeroTransfer,
    #[error("update is missing the signature of {0}")]
    MissingSignature(NodeId),
    #[error("signature check failed")]
    BadSignature,
    #[error("channel already closed")]
    AlreadyClosed,
    #[error("stale update: seq {got} <= current {current}")]
    Replay { current: u64, got: u64 },
    #[error("balances do not sum to the deposit")]
    Conservation,
    #[error("unknown channel {0:?}")]
    UnknownChannel(ChannelId),
}

/// A dual-signed channel state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    pub channel_id: ChannelId,
    pub party_a: NodeId,
    pub party_b: NodeId,
    pub deposit: u64,
    pub balance_a: u64,
    pub balance_b: u64,
    pub seq: u64,
    pub sig_a: Signature,
    pub sig_b: Signature,
}

impl ChannelState {
    /// Bytes both parties sign: (channel_id, seq, balance_a, balance_b).
    pub fn signing_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[..8].copy_from_slice(&self.channel_id.0.to_le_bytes());
        out[8..16].copy_from_slice(&self.seq.to_le_bytes());
        out[16..24].copy_from_slice(&self.balance_a.to_le_bytes());
        out[24..].copy_from_slice(&self.balance_b.to_le_bytes());
        out
    }

    fn sign_with(&mut self, signers: &[NodeId]) {
        let msg = self.signing_bytes();
        self.sig_a = if signers.contains(&self.party_a) {
            sig::sign(self.party_a, &msg)
        } else {
            Signature::EMPTY
        };
        self.sig_b = if signers.contains(&self.party_b) {
            sig::sign(self.party_b, &msg)
        } else {
            Signature::EMPTY
        };
    }

    pub fn signatures_valid(&self) -> bool {
        let msg = self.signing_bytes();
        sig::verify(self.party_a, &msg, &self.sig_a) && sig::verify(self.party_b, &msg, &self.sig_b)
    }

    pub fn conserves(&self) -> bool {
        self.balance_a.checked_add(self.balance_b) == Some(self.deposit)
    }
}

/// One row of a channel's exported history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HistoryRow {
    pub seq: u64,
    pub balance_a: u64,
    pub balance_b: u64,
    pub time: u64,
}

/// Off-chain view held by the two parties.
#[derive(Clone, Debug)]
pub struct Channel {
    state: ChannelState,
    closed: bool,
    history: Vec<HistoryRow>,
}

impl Channel {
    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn id(&self) -> ChannelId {
        self.state.channel_id
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// Moves `transfer_to_b` from A to B. Both parties must be in `signers`.
    pub fn update(
        &mut self,
        transfer_to_b: u64,
        signers: &[NodeId],
        now: SimTime,
    ) -> Result<&ChannelState, ChannelError> {
        if self.closed {
            return Err(ChannelError::AlreadyClosed);
        }
        if transfer_to_b == 0 {
            return Err(ChannelError::ZeroTransfer);
        }
        if transfer_to_b > self.state.balance_a {
            return Err(ChannelError::InsufficientBalance {
                requested: transfer_to_b,
                available: self.state.balance_a,
            });
        }
        for party in [self.state.party_a, self.state.party_b] {
            if !signers.contains(&party) {
                return Err(ChannelError::MissingSignature(party));
            }
        }
        let mut next = self.state.clone();
        next.balance_a -= transfer_to_b;
        next.balance_b += transfer_to_b;
        next.seq += 1;
        next.sign_with(signers);
        self.install(next, now);
        Ok(&self.state)
    }

    /// Accepts a state produced elsewhere (e.g. by the counterparty).
    pub fn accept(&mut self, proposed: ChannelState, now: SimTime) -> Result<(), ChannelError> {
        if self.closed {
            return Err(ChannelError::AlreadyClosed);
        }
        if proposed.channel_id != self.state.channel_id
            || proposed.party_a != self.state.party_a
            || proposed.party_b != self.state.party_b
            || proposed.deposit != self.state.deposit
        {
            return Err(ChannelError::UnknownChannel(proposed.channel_id));
        }
        if proposed.seq <= self.state.seq {
            return Err(ChannelError::Replay {
                current: self.state.seq,
                got: proposed.seq,
            });
        }
        if !proposed.conserves() {
            return Err(ChannelError::Conservation);
        }
        if !proposed.signatures_valid() {
            return Err(ChannelError::BadSignature);
        }
        self.install(proposed, now);
        Ok(())
    }

    fn install(&mut self, state: ChannelState, now: SimTime) {
        self.history.push(HistoryRow {
            seq: state.seq,
            balance_a: state.balance_a,
            balance_b: state.balance_b,
            time: now.0,
        });
        self.state = state;
    }

    /// Writes `seq,balance_a,balance_b,time` rows (time in microseconds).
    pub fn write_history_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.history {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Final on-chain payout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Payout {
    pub to_a: u64,
    pub to_b: u64,
    pub seq: u64,
}

#[derive(Clone, Debug)]
struct OnChain {
    party_a: NodeId,
    party_b: NodeId,
    deposit: u64,
    payout: Option<Payout>,
    txs: usize,
}

/// The on-chain half: holds deposits and settles cooperative closes.
#[derive(Clone, Debug, Default)]
pub struct ChannelContract {
    next_id: u64,
    channels: BTreeMap<ChannelId, OnChain>,
    ledger: Vec<Transaction>,
}

const OP_OPEN: u8 = 1;
const OP_CLOSE: u8 = 2;

fn open_payload(id: ChannelId, a: NodeId, b: NodeId, deposit: u64, memo: u64) -> Vec<u8> {
    let mut p = vec![OP_OPEN];
    p.extend_from_slice(&id.0.to_le_bytes());
    p.extend_from_slice(&a.0.to_le_bytes());
    p.extend_from_slice(&b.0.to_le_bytes());
    p.extend_from_slice(&deposit.to_le_bytes());
    p.extend_from_slice(&memo.to_le_bytes());
    p
}

fn close_payload(s: &ChannelState, memo: u64) -> Vec<u8> {
    let mut p = vec![OP_CLOSE];
    p.extend_from_slice(&s.signing_bytes());
    p.extend_from_slice(&memo.to_le_bytes());
    p.extend_from_slice(&s.sig_a.0);
    p.extend_from_slice(&s.sig_b.0);
    p
}

/// Decoded channel transaction payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelTx {
    Open {
        channel_id: ChannelId,
        party_a: NodeId,
        party_b: NodeId,
        deposit: u64,
        memo: u64,
    },
    Close {
        channel_id: ChannelId,
        seq: u64,
        balance_a: u64,
        balance_b: u64,
        memo: u64,
    },
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

impl ChannelTx {
    pub fn decode(tx: &Transaction) -> Option<ChannelTx> {
        let p = &tx.payload;
        match (tx.kind, p.first()) {
            (TxKind::ChannelOpen, Some(&OP_OPEN)) if p.len() == 33 => Some(ChannelTx::Open {
                channel_id: ChannelId(le_u64(&p[1..9])),
                party_a: NodeId(le_u32(&p[9..13])),
                party_b: NodeId(le_u32(&p[13..17])),
                deposit: le_u64(&p[17..25]),
                memo: le_u64(&p[25..33]),
            }),
            (TxKind::ChannelClose, Some(&OP_CLOSE)) if p.len() == 169 => Some(ChannelTx::Close {
                channel_id: ChannelId(le_u64(&p[1..9])),
                seq: le_u64(&p[9..17]),
                balance_a: le_u64(&p[17..25]),
                balance_b: le_u64(&p[25..33]),
                memo: le_u64(&p[33..41]),
            }),
            _ => None,
        }
    }

    pub fn channel_id(&self) -> ChannelId {
        match *self {
            ChannelTx::Open { channel_id, .. } | ChannelTx::Close { channel_id, .. } => channel_id,
        }
    }
}

impl ChannelContract {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a channel funded entirely by `a`.
    pub fn open_channel(
        &mut self,
        a: NodeId,
        b: NodeId,
        deposit: u64,
        now: SimTime,
    ) -> Result<(Channel, Transaction), ChannelError> {
        self.open_channel_tagged(a, b, deposit, 0, now)
    }

    /// [`Self::open_channel`] with a caller-defined memo recorded on-chain.
    pub fn open_channel_tagged(
        &mut self,
        a: NodeId,
        b: NodeId,
        deposit: u64,
        memo: u64,
        now: SimTime,
    ) -> Result<(Channel, Transaction), ChannelError> {
        if deposit == 0 {
            return Err(ChannelError::NonPositiveDeposit);
        }
        let id = ChannelId(self.next_id);
        self.next_id += 1;
        let mut state = ChannelState {
            channel_id: id,
            party_a: a,
            party_b: b,
            deposit,
            balance_a: deposit,
            balance_b: 0,
            seq: 0,
            sig_a: Signature::EMPTY,
            sig_b: Signature::EMPTY,
        };
        state.sign_with(&[a, b]);
        let tx = Transaction::new(a, TxKind::ChannelOpen, open_payload(id, a, b, deposit, memo), now);
        self.channels.insert(
            id,
            OnChain {
                party_a: a,
                party_b: b,
                deposit,
                payout: None,
                txs: 1,
            },
        );
        self.ledger.push(tx.clone());
        let channel = Channel {
            history: vec![HistoryRow {
                seq: 0,
                balance_a: deposit,
                balance_b: 0,
                time: now.0,
            }],
            state,
            closed: false,
        };
        Ok((channel, tx))
    }

    /// Settles on the submitted state after checking both signatures.
    pub fn close_state(
        &mut self,
        state: &ChannelState,
        memo: u64,
        now: SimTime,
    ) -> Result<(Payout, Transaction), ChannelError> {
        let rec = self
            .channels
            .get_mut(&state.channel_id)
            .ok_or(ChannelError::UnknownChannel(state.channel_id))?;
        if rec.payout.is_some() {
            return Err(ChannelError::AlreadyClosed);
        }
        if state.party_a != rec.party_a || state.party_b != rec.party_b || state.deposit != rec.deposit
        {
            return Err(ChannelError::BadSignature);
        }
        if !state.signatures_valid() {
            return Err(ChannelError::BadSignature);
        }
        if !state.conserves() {
            return Err(ChannelError::Conservation);
        }
        let payout = Payout {
            to_a: state.balance_a,
            to_b: state.balance_b,
            seq: state.seq,
        };
        rec.payout = Some(payout);
        rec.txs += 1;
        let tx = Transaction::new(state.party_a, TxKind::ChannelClose, close_payload(state, memo), now);
        self.ledger.push(tx.clone());
        Ok((payout, tx))
    }

    /// Closes on the channel's latest state and marks it closed off-chain.
    pub fn close_channel(
        &mut self,
        channel: &mut Channel,
        now: SimTime,
    ) -> Result<(Payout, Transaction), ChannelError> {
        self.close_channel_tagged(channel, 0, now)
    }

    pub fn close_channel_tagged(
        &mut self,
        channel: &mut Channel,
        memo: u64,
        now: SimTime,
    ) -> Result<(Payout, Transaction), ChannelError> {
        if channel.closed {
            return Err(ChannelError::AlreadyClosed);
        }
        let out = self.close_state(&channel.state, memo, now)?;
        channel.closed = true;
        Ok(out)
    }

    pub fn payout(&self, id: ChannelId) -> Option<Payout> {
        self.channels.get(&id).and_then(|c| c.payout)
    }

    /// Ledger transactions emitted for `id`.
    pub fn on_chain_tx_count(&self, id: ChannelId) -> usize {
        self.channels.get(&id).map_or(0, |c| c.txs)
    }

    /// Every transaction the contract has emitted, in order.
    pub fn ledger(&self) -> &[Transaction] {
        &self.ledger
    }
}

/// Counts ledger transactions that reference `id`, independently of the
/// contract's own bookkeeping.
pub fn count_channel_txs(ledger: &[Transaction], id: ChannelId) -> usize {
    ledger
        .iter()
        .filter_map(ChannelTx::decode)
        .filter(|t| t.channel_id() == id)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(10);
    const B: NodeId = NodeId(20);
    const T: SimTime = SimTime::ZERO;

    fn open(deposit: u64) -> (ChannelContract, Channel) {
        let mut c = ChannelContract::new();
        let (ch, _) = c.open_channel(A, B, deposit, T).unwrap();
        (c, ch)
    }

    #[test]
    fn open_sets_initial_balances() {
        let (c, ch) = open(1000);
        let s = ch.state();
        assert_eq!((s.balance_a, s.balance_b, s.seq), (1000, 0, 0));
        assert!(s.signatures_valid());
        assert_eq!(c.on_chain_tx_count(ch.id()), 1);
    }

    #[test]
    fn zero_deposit_is_rejected() {
        let mut c = ChannelContract::new();
        assert_eq!(c.open_channel(A, B, 0, T).unwrap_err(), ChannelError::NonPositiveDeposit);
    }

    #[test]
    fn two_opens_get_distinct_ids() {
        let mut c = ChannelContract::new();
        let (x, _) = c.open_channel(A, B, 5, T).unwrap();
        let (y, _) = c.open_channel(A, B, 5, T).unwrap();
        assert_ne!(x.id(), y.id());
    }

    #[test]
    fn update_moves_funds() {
        let (_, mut ch) = open(1000);
        let s = ch.update(1, &[A, B], T).unwrap();
        assert_eq!((s.balance_a, s.balance_b, s.seq), (999, 1, 1));
        assert_eq!(
            ch.update(1000, &[A, B], T).unwrap_err(),
            ChannelError::InsufficientBalance { requested: 1000, available: 999 }
        );
        assert_eq!(ch.update(1, &[A], T).unwrap_err(), ChannelError::MissingSignature(B));
    }

    #[test]
    fn five_hundred_updates_stay_off_chain() {
        let (mut c, mut ch) = open(1000);
        for _ in 0..500 {
            ch.update(1, &[A, B], T).unwrap();
        }
        let s = ch.state();
        assert_eq!((s.balance_a, s.balance_b, s.seq), (500, 500, 500));
        assert_eq!(c.on_chain_tx_count(ch.id()), 1);
        let (payout, _) = c.close_channel(&mut ch, T).unwrap();
        assert_eq!(payout, Payout { to_a: 500, to_b: 500, seq: 500 });
        assert_eq!(c.on_chain_tx_count(ch.id()), 2);
        assert_eq!(count_channel_txs(c.ledger(), ch.id()), 2);
    }

    #[test]
    fn close_twice_fails() {
        let (mut c, mut ch) = open(10);
        c.close_channel(&mut ch, T).unwrap();
        assert_eq!(c.close_channel(&mut ch, T).unwrap_err(), ChannelError::AlreadyClosed);
        assert_eq!(c.close_state(ch.state(), 0, T).unwrap_err(), ChannelError::AlreadyClosed);
        assert_eq!(ch.update(1, &[A, B], T).unwrap_err(), ChannelError::AlreadyClosed);
    }

    #[test]
    fn tampered_balance_fails_signature_check() {
        let (mut c, mut ch) = open(10);
        ch.update(3, &[A, B], T).unwrap();
        let mut forged = ch.state().clone();
        forged.balance_a = 0;
        forged.balance_b = 10;
        assert_eq!(c.close_state(&forged, 0, T).unwrap_err(), ChannelError::BadSignature);
    }

    #[test]
    fn stale_state_is_replay() {
        let (_, mut ch) = open(10);
        let first = ch.update(1, &[A, B], T).unwrap().clone();
        ch.update(1, &[A, B], T).unwrap();
        assert_eq!(
            ch.accept(first, T).unwrap_err(),
            ChannelError::Replay { current: 2, got: 1 }
        );
    }

    #[test]
    fn accepts_counterparty_state() {
        let (_, mut ch) = open(10);
        let mut other = ch.clone();
        let next = other.update(4, &[A, B], T).unwrap().clone();
        ch.accept(next, SimTime(7)).unwrap();
        assert_eq!(ch.state().balance_b, 4);
        assert_eq!(ch.history().last().unwrap().time, 7);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let (_, mut ch) = open(10);
        ch.update(2, &[A, B], SimTime(5)).unwrap();
        let mut buf = Vec::new();
        ch.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "seq,balance_a,balance_b,time\n0,10,0,0\n1,8,2,5\n");
    }

    #[test]
    fn payloads_decode() {
        let (mut c, mut ch) = open(10);
        ch.update(2, &[A, B], T).unwrap();
        c.close_channel_tagged(&mut ch, 42, T).unwrap();
        let decoded: Vec<_> = c.ledger().iter().map(|t| ChannelTx::decode(t).unwrap()).collect();
        assert_eq!(
            decoded[1],
            ChannelTx::Close {
                channel_id: ch.id(),
                seq: 1,
                balance_a: 8,
                balance_b: 2,
                memo: 42
            }
        );
    }
}
