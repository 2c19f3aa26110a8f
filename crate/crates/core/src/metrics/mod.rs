//! Run metrics: throughput, latency, per-node traffic and CPU, and the
//! energy / carbon pipeline.

mod carbon;

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use carbon::{
    cpu_ppm, energy_for_operation, energy_for_ppm, ghg_emission, CarbonError, CarbonParams,
    Energy, Ghg,
};

use crate::consensus::{NodeWork, WorkLedger};
use crate::netsim::{NodeSpec, Role};
use crate::types::{NodeId, PlatformId, SimTime};

/// CPU share of one node over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpuUsage {
    pub fraction: f64,
    /// Demand exceeded capacity; `fraction` was clamped to 1.
    pub saturated: bool,
}

/// Charged work divided by what the node could have done in `duration`.
pub fn cpu_fraction_from_work(work: &WorkLedger, node: &NodeSpec, duration: SimTime) -> CpuUsage {
    assert!(duration > SimTime::ZERO, "duration must be positive");
    let units = work.node(node.id).work_units;
    let raw = units / (node.cpu_capacity * duration.as_secs_f64());
    CpuUsage {
        fraction: raw.min(1.0),
        saturated: raw > 1.0,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles. Empty input gives all zeros.
    pub fn from_samples(mut ms: Vec<f64>) -> LatencySummary {
        if ms.is_empty() {
            return LatencySummary::default();
        }
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let k = ((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
            ms[k - 1]
        };
        LatencySummary {
            samples: ms.len() as u64,
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: rank(0.50),
            p99_ms: rank(0.99),
        }
    }
}

/// Commit throughput over `[lo, hi)`: the least-squares slope of the
/// cumulative commit count against time. Unlike a plain count divided by the
/// window, it does not jump by a whole block as block boundaries drift
/// across the window edges.
pub fn commit_rate(commits: &[SimTime], lo: SimTime, hi: SimTime) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let w = (hi.0 - lo.0) as f64 / 1e6;
    let mid = (lo.0 as f64 + hi.0 as f64) / 2e6;
    let sum: f64 = commits
        .iter()
        .filter(|t| **t >= lo && **t < hi)
        .map(|t| {
            let u = t.0 as f64 / 1e6 - mid;
            w * w / 4.0 - u * u
        })
        .sum();
    6.0 * sum / (w * w * w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub role: Role,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub work_units: f64,
    pub cpu_fraction: f64,
    pub saturated: bool,
    pub energy: Energy,
    pub ghg: Ghg,
}

impl NodeReport {
    pub fn new(
        spec: &NodeSpec,
        work: &WorkLedger,
        duration: SimTime,
        params: &CarbonParams,
    ) -> Result<NodeReport, CarbonError> {
        let usage = cpu_fraction_from_work(work, spec, duration);
        let NodeWork {
            bytes_sent,
            bytes_received,
            messages_sent,
            messages_received,
            work_units,
            ..
        } = work.node(spec.id);
        let energy = energy_for_operation(params, usage.fraction)?;
        Ok(NodeReport {
            node: spec.id,
            role: spec.role,
            bytes_sent,
            bytes_received,
            messages_sent,
            messages_received,
            work_units,
            cpu_fraction: usage.fraction,
            saturated: usage.saturated,
            energy,
            ghg: ghg_emission(energy, params.intensity_ukg_per_kwh),
        })
    }
}

/// Transaction outcome counts at cutoff. `generated` always equals the
/// sum of the other three.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxCounts {
    pub generated: u64,
    pub finalized: u64,
    pub invalidated: u64,
    pub pending: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub platform: PlatformId,
    pub managers: usize,
    pub clients: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub txs: TxCounts,
    pub validated_tps: f64,
    pub latency_ms: LatencySummary,
    pub nodes: Vec<NodeReport>,
    pub carbon: CarbonParams,
}

/// Bytes sent per finalized transaction, split by role. `None` when
/// nothing was finalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overhead {
    pub manager: Option<f64>,
    pub client: Option<f64>,
}

/// Role-summed bytes sent divided by `finalized`.
pub fn overhead_per_tx(report: &MetricsReport, finalized: u64) -> Overhead {
    let per = |role| {
        (finalized > 0).then(|| report.bytes_sent_by(role) as f64 / finalized as f64)
    };
    Overhead {
        manager: per(Role::Manager),
        client: per(Role::Client),
    }
}

#[derive(Serialize)]
struct CsvRow {
    node: u32,
    role: &'static str,
    bytes_sent: u64,
    bytes_received: u64,
    messages_sent: u64,
    messages_received: u64,
    work_units: f64,
    cpu_fraction: f64,
    saturated: bool,
    energy_kwh: f64,
    ghg_kg: f64,
}

impl MetricsReport {
    pub fn overhead(&self) -> Overhead {
        overhead_per_tx(self, self.txs.finalized)
    }

    pub fn role_nodes(&self, role: Role) -> impl Iterator<Item = &NodeReport> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn bytes_sent_by(&self, role: Role) -> u64 {
        self.role_nodes(role).map(|n| n.bytes_sent).sum()
    }

    pub fn total_bytes_sent(&self) -> u64 {
        self.nodes.iter().map(|n| n.bytes_sent).sum()
    }

    pub fn total_bytes_received(&self) -> u64 {
        self.nodes.iter().map(|n| n.bytes_received).sum()
    }

    pub fn total_energy(&self) -> Energy {
        Energy(self.nodes.iter().map(|n| n.energy.0).sum())
    }

    pub fn total_ghg(&self) -> Ghg {
        Ghg(self.nodes.iter().map(|n| n.ghg.0).sum())
    }

    /// Mean CPU fraction over nodes of `role`, or 0 if there are none.
    pub fn mean_cpu(&self, role: Role) -> f64 {
        let (sum, n) = self
            .role_nodes(role)
            .fold((0.0, 0usize), |(s, n), r| (s + r.cpu_fraction, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Per-node CSV, one row per node in id order.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for n in &self.nodes {
            w.serialize(CsvRow {
                node: n.node.0,
                role: n.role.name(),
                bytes_sent: n.bytes_sent,
                bytes_received: n.bytes_received,
                messages_sent: n.messages_sent,
                messages_received: n.messages_received,
                work_units: n.work_units,
                cpu_fraction: n.cpu_fraction,
                saturated: n.saturated,
                energy_kwh: n.energy.kwh(),
                ghg_kg: n.ghg.kg(),
            })
            .expect("in-memory csv write");
        }
        w.into_inner().expect("in-memory csv flush")
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Plain-text `key = value` summary, grouped in sections.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let o = self.overhead();
        let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.1}"));
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "platform = {}", self.platform);
        let _ = writeln!(s, "managers = {}", self.managers);
        let _ = writeln!(s, "clients = {}", self.clients);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "duration_s = {}", self.duration_s);
        let _ = writeln!(s, "\n[transactions]");
        let _ = writeln!(s, "generated = {}", self.txs.generated);
        let _ = writeln!(s, "finalized = {}", self.txs.finalized);
        let _ = writeln!(s, "invalidated = {}", self.txs.invalidated);
        let _ = writeln!(s, "pending = {}", self.txs.pending);
        let _ = writeln!(s, "validated_tps = {:.3}", self.validated_tps);
        let _ = writeln!(s, "\n[latency_ms]");
        let _ = writeln!(s, "samples = {}", self.latency_ms.samples);
        let _ = writeln!(s, "mean = {:.3}", self.latency_ms.mean_ms);
        let _ = writeln!(s, "p50 = {:.3}", self.latency_ms.p50_ms);
        let _ = writeln!(s, "p99 = {:.3}", self.latency_ms.p99_ms);
        let _ = writeln!(s, "\n[traffic]");
        let _ = writeln!(s, "bytes_sent = {}", self.total_bytes_sent());
        let _ = writeln!(s, "bytes_received = {}", self.total_bytes_received());
        let _ = writeln!(s, "manager_bytes_per_tx = {}", opt(o.manager));
        let _ = writeln!(s, "client_bytes_per_tx = {}", opt(o.client));
        let _ = writeln!(s, "\n[cpu]");
        let _ = writeln!(s, "manager_mean = {:.4}", self.mean_cpu(Role::Manager));
        let _ = writeln!(s, "client_mean = {:.4}", self.mean_cpu(Role::Client));
        let saturated: Vec<String> = self
            .nodes
            .iter()
            .filter(|n| n.saturated)
            .map(|n| n.node.to_string())
            .collect();
        let _ = writeln!(s, "saturated = [{}]", saturated.join(", "));
        let _ = writeln!(s, "\n[carbon]");
        let _ = writeln!(s, "machine_power_kw = {}", self.carbon.power_kw());
        let _ = writeln!(s, "horizon_hours = {}", self.carbon.horizon_hours());
        let _ = writeln!(s, "ghg_intensity = {}", self.carbon.intensity());
        let _ = writeln!(s, "energy_kwh_total = {:.9}", self.total_energy().kwh());
        let _ = writeln!(s, "ghg_ukg_total = {}", self.total_ghg().micro_kg());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{CpuCosts, WorkOp};

    fn spec(id: u32, role: Role, cap: f64) -> NodeSpec {
        NodeSpec::new(NodeId(id), role, 0.0, f64::INFINITY, cap)
    }

    #[test]
    fn zero_work_is_zero_cpu() {
        let w = WorkLedger::default();
        let u = cpu_fraction_from_work(&w, &spec(0, Role::Manager, 100.0), SimTime::from_ms(1000));
        assert_eq!(u, CpuUsage { fraction: 0.0, saturated: false });
    }

    #[test]
    fn overload_clamps_and_flags() {
        let mut w = WorkLedger::new(CpuCosts::default());
        w.charge(NodeId(0), WorkOp::Raw(200));
        let u = cpu_fraction_from_work(&w, &spec(0, Role::Manager, 100.0), SimTime::from_ms(1000));
        assert_eq!(u, CpuUsage { fraction: 1.0, saturated: true });
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let l = LatencySummary::from_samples((1..=100).map(f64::from).collect());
        assert_eq!((l.p50_ms, l.p99_ms, l.mean_ms), (50.0, 99.0, 50.5));
        assert_eq!(LatencySummary::from_samples(vec![]), LatencySummary::default());
    }

    fn report(bytes: &[(Role, u64)], finalized: u64) -> MetricsReport {
        let mut w = WorkLedger::default();
        let specs: Vec<NodeSpec> = bytes
            .iter()
            .enumerate()
            .map(|(i, &(role, b))| {
                w.charge(NodeId(i as u32), WorkOp::Send { bytes: b });
                spec(i as u32, role, 1e6)
            })
            .collect();
        let params = CarbonParams::default();
        let d = SimTime::from_ms(1000);
        MetricsReport {
            scenario: "t".into(),
            platform: PlatformId::Iota,
            managers: 1,
            clients: 1,
            seed: 0,
            duration_s: 1.0,
            txs: TxCounts {
                generated: finalized,
                finalized,
                ..TxCounts::default()
            },
            validated_tps: finalized as f64,
            latency_ms: LatencySummary::default(),
            nodes: specs.iter().map(|s| NodeReport::new(s, &w, d, &params).unwrap()).collect(),
            carbon: params,
        }
    }

    #[test]
    fn single_tx_overhead() {
        let r = report(&[(Role::Manager, 0), (Role::Client, 1589)], 1);
        assert_eq!(r.overhead(), Overhead { manager: Some(0.0), client: Some(1589.0) });
    }

    #[test]
    fn zero_finalized_is_absent() {
        let r = report(&[(Role::Manager, 10), (Role::Client, 10)], 0);
        assert_eq!(r.overhead(), Overhead { manager: None, client: None });
        assert!(r.summary().contains("manager_bytes_per_tx = absent"));
    }

    #[test]
    fn totals_are_sums_and_csv_is_stable() {
        let r = report(&[(Role::Manager, 100), (Role::Manager, 50), (Role::Client, 7)], 3);
        assert_eq!(r.total_bytes_sent(), 157);
        assert_eq!(r.bytes_sent_by(Role::Manager), 150);
        assert_eq!(r.total_ghg().0, r.nodes.iter().map(|n| n.ghg.0).sum::<u128>());
        let csv = String::from_utf8(r.to_csv()).unwrap();
        assert!(csv.starts_with(
            "node,role,bytes_sent,bytes_received,messages_sent,messages_received,work_units,cpu_fraction,saturated,energy_kwh,ghg_kg\n"
        ));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(r.to_csv(), r.to_csv());
    }
    #[test]
    fn commit_rate_of_steady_stream() {
        let lo = SimTime::from_secs_f64(5.0);
        let hi = SimTime::from_secs_f64(50.0);
        let even: Vec<SimTime> = (0..6000).map(|i| SimTime(i * 10_000)).collect();
        assert!((commit_rate(&even, lo, hi) - 100.0).abs() < 0.01);
        // Blocks of 80 every 0.8 s carry the same rate whatever their phase.
        for phase in [0u64, 137_000, 555_000] {
            let blocks: Vec<SimTime> = (0..75)
                .flat_map(|b| std::iter::repeat_n(SimTime(phase + b * 800_000), 80))
                .collect();
            assert!((commit_rate(&blocks, lo, hi) - 100.0).abs() < 0.5, "phase {phase}");
        }
        assert_eq!(commit_rate(&even, hi, lo), 0.0);
    }
}
