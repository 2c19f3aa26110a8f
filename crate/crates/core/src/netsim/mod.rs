//! Deterministic discrete-event simulation of a manager/client network
//! running one platform profile.
//!
//! Managers are nodes `0..managers`, clients follow. Each client submits
//! through the manager `managers[client_index % managers]`, which is also
//! where its transactions' commit times are observed.

pub mod network;
mod protocols;
pub mod queue;
mod scenario;
mod sim;

use serde::{Deserialize, Serialize};

pub use network::{deliver, Delivery, NetError, Network, NodeSpec, Role};
pub use queue::{EventKey, EventQueue};
pub use scenario::{Arrival, CarbonConfig, InvalidScenario, LinkConfig, Scenario};
pub use sim::SimError;

use crate::marketplace::{run_workload, MarketError};
use crate::metrics::MetricsReport;
use crate::profile::ConsensusKind;
use crate::types::PlatformId;
use protocols::{EovProtocol, PohProtocol, PowProtocol, TangleProtocol, VotingProtocol};
use sim::{Protocol, Sim, Topology};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] InvalidScenario),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("marketplace workload: {0}")]
    Market(#[from] MarketError),
}

/// Runs one scenario to its cutoff.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsReport, RunError> {
    scenario.validate()?;
    let profile = scenario.resolve_profile()?;
    let market = match &scenario.market {
        Some(cfg) => run_workload(cfg)?.txs,
        None => Vec::new(),
    };
    let kind = profile.consensus;
    let topo = Topology::new(scenario.managers, scenario.clients, profile, scenario.contention_keys);
    let proto: Box<dyn Protocol> = match kind {
        ConsensusKind::Voting => Box::new(VotingProtocol::new(&topo)),
        ConsensusKind::Pow => Box::new(PowProtocol::new(&topo, scenario.seed)),
        ConsensusKind::EndorseOrderValidate => Box::new(EovProtocol::new(&topo)),
        ConsensusKind::Tangle => Box::new(TangleProtocol::new(&topo)),
        ConsensusKind::Poh => Box::new(PohProtocol::new(&topo)),
    };
    Ok(Sim::new(scenario, topo, proto, market).run()?)
}

/// One cell of a manager-count by load grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub platform: PlatformId,
    pub managers: usize,
    pub clients: usize,
    pub load_tps: f64,
    pub validated_tps: f64,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub manager_bytes_per_tx: Option<f64>,
    pub client_bytes_per_tx: Option<f64>,
}

impl SweepRow {
    pub fn from_report(r: &MetricsReport, load_tps: f64) -> SweepRow {
        let o = r.overhead();
        SweepRow {
            platform: r.platform,
            managers: r.managers,
            clients: r.clients,
            load_tps,
            validated_tps: r.validated_tps,
            mean_latency_ms: r.latency_ms.mean_ms,
            p99_latency_ms: r.latency_ms.p99_ms,
            manager_bytes_per_tx: o.manager,
            client_bytes_per_tx: o.client,
        }
    }
}

/// The scenario for one grid cell: `load` is the aggregate rate.
pub fn sweep_cell(base: &Scenario, managers: usize, load: f64) -> Scenario {
    Scenario {
        name: format!("{}-m{managers}-l{load}", base.name),
        managers,
        input_tps: load,
        load_is_total: true,
        ..base.clone()
    }
}

/// Runs every (managers, load) cell, in parallel, and returns rows sorted by
/// manager count then load.
pub fn sweep_managers(
    base: &Scenario,
    manager_counts: &[usize],
    loads: &[f64],
) -> Result<Vec<SweepRow>, RunError> {
    let cells: Vec<(usize, f64)> = manager_counts
        .iter()
        .flat_map(|&m| loads.iter().map(move |&l| (m, l)))
        .collect();
    let results: Vec<Result<SweepRow, RunError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(m, l)| {
                s.spawn(move || {
                    run_scenario(&sweep_cell(base, m, l)).map(|r| SweepRow::from_report(&r, l))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| (a.managers, a.load_tps).partial_cmp(&(b.managers, b.load_tps)).unwrap());
    Ok(rows)
}
