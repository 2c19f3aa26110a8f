//! Platform profiles: consensus choice, wire sizes, timing and CPU cost
//! tables. The five built-in profiles are bundled from `profiles/*.toml`;
//! custom profiles load from the same format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::CpuCosts;
use crate::ledger::WireSizeModel;
use crate::types::PlatformId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    Pow,
    Voting,
    EndorseOrderValidate,
    Tangle,
    Poh,
}

/// Timing and ledger-shape parameters. Which fields matter depends on the
/// consensus kind; unused ones keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    /// Voting: pause between a commit and the next proposal.
    /// PoW: mean block interval. EOV: batch timeout. PoH: slot duration.
    pub block_interval_ms: f64,
    pub max_block_txs: usize,
    /// PoW seal difficulty, or Tangle little-PoW difficulty.
    pub difficulty_bits: u32,
    /// PoW: confirmations after which a block is final.
    pub finality_depth: u64,
    /// Tangle: approval weight at which a vertex is confirmed.
    pub confirmation_weight: u64,
    pub ticks_per_slot: u64,
    pub hashes_per_tick: u64,
    pub slots_per_leader: u64,
    /// EOV endorsement policy: 0 means all peers, otherwise k of n.
    pub endorsements_required: usize,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            block_interval_ms: 1000.0,
            max_block_txs: 500,
            difficulty_bits: 8,
            finality_depth: 0,
            confirmation_weight: 1,
            ticks_per_slot: 8,
            hashes_per_tick: 64,
            slots_per_leader: 4,
            endorsements_required: 0,
        }
    }
}

/// Sizes in bytes of the non-transaction protocol messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageSizes {
    pub block_header: u64,
    pub vote: u64,
    pub receipt: u64,
    /// Fabric proposal framing added to the payload.
    pub proposal_overhead: u64,
    /// Fabric proposal response (read/write set, endorsement, framing).
    pub endorsement_response: u64,
    pub tip_request: u64,
    pub tip_response: u64,
    pub entry_header: u64,
    /// Erasure-coding overhead applied to block data (coding / data shreds).
    pub coding_ratio: f64,
}

impl Default for MessageSizes {
    fn default() -> Self {
        MessageSizes {
            block_header: 500,
            vote: 150,
            receipt: 120,
            proposal_overhead: 0,
            endorsement_response: 0,
            tip_request: 0,
            tip_response: 0,
            entry_header: 48,
            coding_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuProfile {
    /// Work units per simulated second.
    pub manager_capacity: f64,
    pub client_capacity: f64,
    /// Share of manager CPU reserved for background mining.
    #[serde(default)]
    pub mining_share: f64,
    pub costs: CpuCosts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformProfile {
    pub platform: PlatformId,
    pub consensus: ConsensusKind,
    pub throughput_target_tps: f64,
    pub latency_target_ms: f64,
    pub wire: WireSizeModel,
    #[serde(default)]
    pub chain: ChainParams,
    #[serde(default)]
    pub messages: MessageSizes,
    pub cpu: CpuProfile,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid profile {platform}: {reason}")]
    Invalid { platform: PlatformId, reason: String },
}

const FABRIC: &str = include_str!("../profiles/fabric.toml");
const QUORUM: &str = include_str!("../profiles/quorum.toml");
const ETHEREUM: &str = include_str!("../profiles/ethereum.toml");
const IOTA: &str = include_str!("../profiles/iota.toml");
const SOLANA: &str = include_str!("../profiles/solana.toml");

impl PlatformProfile {
    /// Bundled profile for `platform`.
    pub fn builtin(platform: PlatformId) -> PlatformProfile {
        let src = match platform {
            PlatformId::Fabric => FABRIC,
            PlatformId::Quorum => QUORUM,
            PlatformId::Ethereum => ETHEREUM,
            PlatformId::Iota => IOTA,
            PlatformId::Solana => SOLANA,
        };
        Self::from_toml(src).expect("bundled profiles are valid")
    }

    /// Looks up a bundled profile by name ("ethereum", "quorum", ...).
    pub fn by_name(name: &str) -> Result<PlatformProfile, crate::types::UnknownPlatform> {
        Ok(Self::builtin(name.parse()?))
    }

    pub fn from_toml(src: &str) -> Result<PlatformProfile, ProfileError> {
        let profile: PlatformProfile = toml::from_str(src)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<PlatformProfile, ProfileError> {
        let src = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&src)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |reason: &str| {
            Err(ProfileError::Invalid {
                platform: self.platform,
                reason: reason.to_string(),
            })
        };
        if self.wire.platform != self.platform {
            return bad("wire model platform differs from profile platform");
        }
        if self.wire.validate().is_err() {
            return bad("wire base_bytes must be positive");
        }
        if !(self.cpu.manager_capacity > 0.0 && self.cpu.client_capacity > 0.0) {
            return bad("cpu capacities must be positive");
        }
        if !(0.0..1.0).contains(&self.cpu.mining_share) {
            return bad("mining_share must be in [0, 1)");
        }
        if self.chain.block_interval_ms <= 0.0 || self.chain.max_block_txs == 0 {
            return bad("block interval and block capacity must be positive");
        }
        if self.chain.difficulty_bits > 64 {
            return bad("difficulty_bits must be at most 64");
        }
        if self.consensus == ConsensusKind::Poh
            && (self.chain.ticks_per_slot == 0
                || self.chain.hashes_per_tick == 0
                || self.chain.slots_per_leader == 0)
        {
            return bad("poh needs positive ticks_per_slot, hashes_per_tick, slots_per_leader");
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        self.platform.name()
    }
}
