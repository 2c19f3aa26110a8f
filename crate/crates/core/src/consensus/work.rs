use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::NodeId;

/// Work-unit cost of each primitive. One work unit is one microsecond of
/// reference manager CPU time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuCosts {
    pub hash: f64,
    pub sign: f64,
    pub verify: f64,
    /// Fixed overhead for handling one inbound or outbound message.
    pub message: f64,
    /// Serialization and I/O per KiB moved.
    pub per_kib: f64,
    /// Contract execution per transaction.
    pub execute: f64,
    /// Endorsement simulation per transaction (on top of `execute`).
    #[serde(default)]
    pub endorse: f64,
    /// Client-side SDK work to build one transaction.
    #[serde(default)]
    pub client_tx: f64,
}

impl Default for CpuCosts {
    /// Unit costs, handy for counting in tests.
    fn default() -> Self {
        CpuCosts {
            hash: 1.0,
            sign: 1.0,
            verify: 1.0,
            message: 1.0,
            per_kib: 0.0,
            execute: 1.0,
            endorse: 1.0,
            client_tx: 1.0,
        }
    }
}

/// A chargeable primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkOp {
    Hash(u64),
    Sign(u64),
    Verify(u64),
    Send { bytes: u64 },
    Receive { bytes: u64 },
    Execute(u64),
    Endorse(u64),
    ClientTx(u64),
    /// Pre-costed work (e.g. background mining) in work units.
    Raw(u64),
}

/// Per-node work counters. All monotone within a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeWork {
    pub hash_attempts: u64,
    pub signatures_created: u64,
    pub signature_verifications: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub endorsements_performed: u64,
    pub txs_executed: u64,
    pub work_units: f64,
}

#[derive(Clone, Debug)]
pub struct WorkLedger {
    costs: CpuCosts,
    nodes: BTreeMap<NodeId, NodeWork>,
}

impl Default for WorkLedger {
    fn default() -> Self {
        Self::new(CpuCosts::default())
    }
}

impl WorkLedger {
    pub fn new(costs: CpuCosts) -> Self {
        WorkLedger {
            costs,
            nodes: BTreeMap::new(),
        }
    }

    pub fn costs(&self) -> &CpuCosts {
        &self.costs
    }

    /// Work units `op` would cost, without charging.
    pub fn cost_of(&self, op: WorkOp) -> f64 {
        let c = &self.costs;
        match op {
            WorkOp::Hash(n) => c.hash * n as f64,
            WorkOp::Sign(n) => c.sign * n as f64,
            WorkOp::Verify(n) => c.verify * n as f64,
            WorkOp::Send { bytes } | WorkOp::Receive { bytes } => {
                c.message + c.per_kib * bytes as f64 / 1024.0
            }
            WorkOp::Execute(n) => c.execute * n as f64,
            WorkOp::Endorse(n) => c.endorse * n as f64,
            WorkOp::ClientTx(n) => c.client_tx * n as f64,
            WorkOp::Raw(units) => units as f64,
        }
    }

    /// Records `op` against `node` and returns its work-unit cost.
    pub fn charge(&mut self, node: NodeId, op: WorkOp) -> f64 {
        let units = self.cost_of(op);
        let w = self.nodes.entry(node).or_default();
        match op {
            WorkOp::Hash(n) => w.hash_attempts += n,
            WorkOp::Sign(n) => w.signatures_created += n,
            WorkOp::Verify(n) => w.signature_verifications += n,
            WorkOp::Send { bytes } => {
                w.messages_sent += 1;
                w.bytes_sent += bytes;
            }
            WorkOp::Receive { bytes } => {
                w.messages_received += 1;
                w.bytes_received += bytes;
            }
            WorkOp::Execute(n) => w.txs_executed += n,
            WorkOp::Endorse(n) => w.endorsements_performed += n,
            WorkOp::ClientTx(_) | WorkOp::Raw(_) => {}
        }
        w.work_units += units;
        units
    }

    pub fn node(&self, node: NodeId) -> NodeWork {
        self.nodes.get(&node).cloned().unwrap_or_default()
    }

    /// Work units charged to `node` so far.
    pub fn units(&self, node: NodeId) -> f64 {
        self.nodes.get(&node).map_or(0.0, |w| w.work_units)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &NodeWork)> {
        self.nodes.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charges_accumulate_counters_and_units() {
        let mut ledger = WorkLedger::new(CpuCosts {
            hash: 2.0,
            per_kib: 1.0,
            ..CpuCosts::default()
        });
        let n = NodeId(1);
        ledger.charge(n, WorkOp::Hash(10));
        ledger.charge(n, WorkOp::Send { bytes: 2048 });
        ledger.charge(n, WorkOp::Endorse(1));
        let w = ledger.node(n);
        assert_eq!(w.hash_attempts, 10);
        assert_eq!(w.messages_sent, 1);
        assert_eq!(w.bytes_sent, 2048);
        assert_eq!(w.endorsements_performed, 1);
        assert_eq!(w.work_units, 20.0 + 1.0 + 2.0 + 1.0);
        assert_eq!(ledger.node(NodeId(9)), NodeWork::default());
    }
}
