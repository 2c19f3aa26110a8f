use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Transaction, TxKind};
use crate::types::PlatformId;

/// Per-platform on-the-wire transaction size.
///
/// `size = base + per_kind[kind] + min(payload, cap)`. A cap of zero means the
/// payload travels inside a fixed-size frame and adds nothing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSizeModel {
    pub platform: PlatformId,
    pub base_bytes: u64,
    #[serde(default)]
    pub per_kind_bytes: BTreeMap<TxKind, u64>,
    #[serde(default)]
    pub metadata_cap_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireModelError {
    #[error("{0}: base_bytes must be positive")]
    ZeroBase(PlatformId),
}

impl WireSizeModel {
    pub fn validate(&self) -> Result<(), WireModelError> {
        if self.base_bytes == 0 {
            return Err(WireModelError::ZeroBase(self.platform));
        }
        Ok(())
    }

    pub fn size_for(&self, kind: TxKind, payload_len: usize) -> u64 {
        let payload = payload_len as u64;
        let payload = match self.metadata_cap_bytes {
            Some(cap) => payload.min(cap),
            None => payload,
        };
        self.base_bytes + self.per_kind_bytes.get(&kind).copied().unwrap_or(0) + payload
    }

    pub fn wire_size(&self, tx: &Transaction) -> u64 {
        self.size_for(tx.kind, tx.payload.len())
    }
}

/// Free-function form of [`WireSizeModel::wire_size`].
pub fn wire_size(model: &WireSizeModel, tx: &Transaction) -> u64 {
    model.wire_size(tx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NodeId, SimTime};

    fn model(cap: Option<u64>) -> WireSizeModel {
        WireSizeModel {
            platform: PlatformId::Solana,
            base_bytes: 64,
            per_kind_bytes: BTreeMap::from([(TxKind::Transfer, 10)]),
            metadata_cap_bytes: cap,
        }
    }

    #[test]
    fn payload_is_clamped_to_cap() {
        let m = model(Some(1232));
        let tx = Transaction::new(NodeId(1), TxKind::DataAnchor, vec![0; 2000], SimTime::ZERO);
        assert_eq!(m.wire_size(&tx), 64 + 1232);
        assert_eq!(m.size_for(TxKind::Transfer, 5), 64 + 10 + 5);
    }

    #[test]
    fn uncapped_payload_counts_fully() {
        assert_eq!(model(None).size_for(TxKind::DataAnchor, 5000), 5064);
    }

    #[test]
    fn zero_base_is_invalid() {
        let mut m = model(None);
        m.base_bytes = 0;
        assert!(m.validate().is_err());
    }
}
