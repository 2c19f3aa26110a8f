use serde::{Deserialize, Serialize};

use super::sig::{self, Signature};
use super::Hash;
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    MachinePublish,
    RentalRequest,
    ChannelOpen,
    ChannelClose,
    DataAnchor,
    Transfer,
}

impl TxKind {
    pub const ALL: [TxKind; 6] = [
        TxKind::MachinePublish,
        TxKind::RentalRequest,
        TxKind::ChannelOpen,
        TxKind::ChannelClose,
        TxKind::DataAnchor,
        TxKind::Transfer,
    ];

    pub fn tag(self) -> u8 {
        match self {
            TxKind::MachinePublish => 1,
            TxKind::RentalRequest => 2,
            TxKind::ChannelOpen => 3,
            TxKind::ChannelClose => 4,
            TxKind::DataAnchor => 5,
            TxKind::Transfer => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::MachinePublish => "machine_publish",
            TxKind::RentalRequest => "rental_request",
            TxKind::ChannelOpen => "channel_open",
            TxKind::ChannelClose => "channel_close",
            TxKind::DataAnchor => "data_anchor",
            TxKind::Transfer => "transfer",
        }
    }
}

/// A signed ledger entry.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub tx_id: Hash,
    pub sender: NodeId,
    pub kind: TxKind,
    pub payload: Vec<u8>,
    pub signature: Signature,
    pub created_at: SimTime,
}

impl Transaction {
    /// Builds and signs a transaction on behalf of `sender`.
    pub fn new(sender: NodeId, kind: TxKind, payload: Vec<u8>, created_at: SimTime) -> Self {
        let tx_id = Self::compute_id(sender, kind, &payload, created_at);
        let signature = sig::sign(sender, tx_id.as_bytes());
        Transaction {
            tx_id,
            sender,
            kind,
            payload,
            signature,
            created_at,
        }
    }

    pub fn compute_id(sender: NodeId, kind: TxKind, payload: &[u8], created_at: SimTime) -> Hash {
        Hash::digest_parts(&[
            b"tx",
            &sender.0.to_le_bytes(),
            &[kind.tag()],
            &(payload.len() as u64).to_le_bytes(),
            payload,
            &created_at.0.to_le_bytes(),
        ])
    }

    /// The id recomputes and the signature verifies against the sender.
    pub fn verify(&self) -> bool {
        Self::compute_id(self.sender, self.kind, &self.payload, self.created_at) == self.tx_id
            && sig::verify(self.sender, self.tx_id.as_bytes(), &self.signature)
    }

    /// Canonical byte encoding covering every field.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.tx_id.as_bytes());
        out.extend_from_slice(&self.sender.0.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.signature.0);
        out.extend_from_slice(&self.created_at.0.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_transaction_verifies() {
        let tx = Transaction::new(NodeId(3), TxKind::DataAnchor, vec![1, 2, 3], SimTime(42));
        assert!(tx.verify());
    }

    #[test]
    fn mutated_payload_fails_verification() {
        let mut tx = Transaction::new(NodeId(3), TxKind::Transfer, vec![1, 2, 3], SimTime(42));
        tx.payload[0] ^= 1;
        assert!(!tx.verify());
    }

    #[test]
    fn forged_sender_fails_verification() {
        let mut tx = Transaction::new(NodeId(3), TxKind::Transfer, vec![], SimTime(0));
        tx.sender = NodeId(4);
        tx.tx_id = Transaction::compute_id(tx.sender, tx.kind, &tx.payload, tx.created_at);
        assert!(!tx.verify());
    }
}
