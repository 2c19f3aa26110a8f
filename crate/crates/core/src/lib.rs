pub mod channel;
pub mod cli;
pub mod consensus;
pub mod ledger;
pub mod marketplace;
pub mod metrics;
pub mod netsim;
pub mod profile;
pub mod types;

pub use types::{NodeId, PlatformId, SimTime};
