use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identifier of a simulated node (manager or client).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Simulated time in microseconds since the start of a run.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> SimTime {
        SimTime(ms * 1_000)
    }

    pub fn from_secs_f64(s: f64) -> SimTime {
        SimTime((s * 1e6).round() as u64)
    }

    pub fn from_ms_f64(ms: f64) -> SimTime {
        SimTime((ms * 1e3).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// The five platform profiles.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlatformId {
    Fabric,
    Quorum,
    Ethereum,
    Iota,
    Solana,
}

impl PlatformId {
    pub const ALL: [PlatformId; 5] = [
        PlatformId::Fabric,
        PlatformId::Quorum,
        PlatformId::Ethereum,
        PlatformId::Iota,
        PlatformId::Solana,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlatformId::Fabric => "fabric",
            PlatformId::Quorum => "quorum",
            PlatformId::Ethereum => "ethereum",
            PlatformId::Iota => "iota",
            PlatformId::Solana => "solana",
        }
    }
}

impl fmt::Display for PlatformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown platform {0:?} (expected one of fabric, quorum, ethereum, iota, solana)")]
pub struct UnknownPlatform(pub String);

impl FromStr for PlatformId {
    type Err = UnknownPlatform;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fabric" | "hyperledger-fabric" => Ok(PlatformId::Fabric),
            "quorum" => Ok(PlatformId::Quorum),
            "ethereum" => Ok(PlatformId::Ethereum),
            "iota" => Ok(PlatformId::Iota),
            "solana" => Ok(PlatformId::Solana),
            _ => Err(UnknownPlatform(s.to_string())),
        }
    }
}
