//! Simulated signatures: a 64-byte deterministic MAC keyed by a per-node
//! secret. Any node can "verify" because secrets derive from the identity.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::types::NodeId;

type HmacSha256 = Hmac<Sha256>;

pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub const EMPTY: Signature = Signature([0u8; SIGNATURE_LEN]);
}

impl Default for Signature {
    fn default() -> Self {
        Signature::EMPTY
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

fn node_secret(node: NodeId) -> [u8; 32] {
    let mut input = b"dltsim/node-secret/".to_vec();
    input.extend_from_slice(&node.0.to_le_bytes());
    super::Hash::digest(&input).0
}

fn mac_half(secret: &[u8; 32], domain: u8, message: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(&[domain]);
    mac.update(message);
    mac.finalize().into_bytes().into()
}

pub fn sign(signer: NodeId, message: &[u8]) -> Signature {
    let secret = node_secret(signer);
    let mut out = [0u8; SIGNATURE_LEN];
    out[..32].copy_from_slice(&mac_half(&secret, 1, message));
    out[32..].copy_from_slice(&mac_half(&secret, 2, message));
    Signature(out)
}

pub fn verify(signer: NodeId, message: &[u8], signature: &Signature) -> bool {
    sign(signer, message) == *signature
}
