//! Link model: per-node latency and bandwidth, bytes charged at both ends.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::{WorkLedger, WorkOp};
use crate::types::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Manager,
    Client,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Manager => "manager",
            Role::Client => "client",
        }
    }
}

/// One simulated machine and its access link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: Role,
    pub latency_ms: f64,
    /// Bytes per second. May be infinite.
    pub bandwidth: f64,
    /// Work units per simulated second.
    pub cpu_capacity: f64,
}

impl NodeSpec {
    pub fn new(id: NodeId, role: Role, latency_ms: f64, bandwidth: f64, cpu_capacity: f64) -> Self {
        assert!(latency_ms >= 0.0, "latency must be non-negative");
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        NodeSpec {
            id,
            role,
            latency_ms,
            bandwidth,
            cpu_capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Result of putting one message on the wire.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delivery {
    pub arrival: SimTime,
    /// Work units charged to the sender and receiver for handling it.
    pub send_cost: f64,
    pub recv_cost: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    nodes: BTreeMap<NodeId, NodeSpec>,
}

impl Network {
    pub fn new(nodes: impl IntoIterator<Item = NodeSpec>) -> Self {
        Network {
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeSpec, NetError> {
        self.nodes.get(&id).ok_or(NetError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    /// Sends `size` bytes from `from` to `to` at `send`. The slower end sets
    /// both the latency and the bandwidth.
    pub fn deliver(
        &self,
        size: u64,
        from: NodeId,
        to: NodeId,
        send: SimTime,
        work: &mut WorkLedger,
    ) -> Result<Delivery, NetError> {
        deliver(size, self.node(from)?, self.node(to)?, send, work)
    }
}

/// Arrival = send + max latency + size / min bandwidth.
pub fn deliver(
    size: u64,
    from: &NodeSpec,
    to: &NodeSpec,
    send: SimTime,
    work: &mut WorkLedger,
) -> Result<Delivery, NetError> {
    let latency_us = from.latency_ms.max(to.latency_ms) * 1e3;
    let transfer_us = size as f64 / from.bandwidth.min(to.bandwidth) * 1e6;
    let send_cost = work.charge(from.id, WorkOp::Send { bytes: size });
    let recv_cost = work.charge(to.id, WorkOp::Receive { bytes: size });
    Ok(Delivery {
        arrival: SimTime(send.0 + (latency_us + transfer_us).round() as u64),
        send_cost,
        recv_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(lat: f64, bw: f64) -> Network {
        Network::new([
            NodeSpec::new(NodeId(0), Role::Manager, lat, bw, 1.0),
            NodeSpec::new(NodeId(1), Role::Client, lat, bw, 1.0),
        ])
    }

    #[test]
    fn ideal_link_is_instant() {
        let mut w = WorkLedger::default();
        let d = net(0.0, f64::INFINITY)
            .deliver(1000, NodeId(0), NodeId(1), SimTime(77), &mut w)
            .unwrap();
        assert_eq!(d.arrival, SimTime(77));
    }

    #[test]
    fn iota_tx_over_wifi() {
        let mut w = WorkLedger::default();
        let d = net(5.0, 1e6)
            .deliver(1589, NodeId(1), NodeId(0), SimTime::ZERO, &mut w)
            .unwrap();
        assert_eq!(d.arrival, SimTime(6589));
        assert_eq!(w.node(NodeId(1)).bytes_sent, 1589);
        assert_eq!(w.node(NodeId(0)).bytes_received, 1589);
    }

    #[test]
    fn broadcast_charges_sender_per_copy() {
        let specs: Vec<_> = (0..5)
            .map(|i| NodeSpec::new(NodeId(i), Role::Manager, 1.0, 1e8, 1.0))
            .collect();
        let n = Network::new(specs);
        let mut w = WorkLedger::default();
        let arrivals: Vec<_> = (1..5)
            .map(|i| n.deliver(300, NodeId(0), NodeId(i), SimTime::ZERO, &mut w).unwrap())
            .collect();
        assert_eq!(arrivals.len(), 4);
        assert_eq!(w.node(NodeId(0)).bytes_sent, 1200);
        assert_eq!(w.node(NodeId(0)).messages_sent, 4);
    }

    #[test]
    fn unknown_node() {
        let mut w = WorkLedger::default();
        assert_eq!(
            net(1.0, 1.0).deliver(1, NodeId(0), NodeId(9), SimTime::ZERO, &mut w),
            Err(NetError::UnknownNode(NodeId(9)))
        );
    }
}
