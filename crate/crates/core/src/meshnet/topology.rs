use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use super::frame::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Probability that one transmission attempt is lost.
    pub loss: f64,
    pub latency: Duration,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            loss: 0.0,
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("loss probability {0} outside [0,1]")]
    BadLoss(f64),
    #[error("node {0} is the broadcast address")]
    Broadcast(NodeId),
}

/// Undirected graph of mesh nodes with per-link loss and latency.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<(NodeId, NodeId), LinkParams>,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, n: NodeId) -> Result<(), TopologyError> {
        if n == super::frame::BROADCAST {
            return Err(TopologyError::Broadcast(n));
        }
        self.nodes.insert(n);
        Ok(())
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, params: LinkParams) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        if !(0.0..=1.0).contains(&params.loss) {
            return Err(TopologyError::BadLoss(params.loss));
        }
        self.add_node(a)?;
        self.add_node(b)?;
        self.links.insert(key(a, b), params);
        Ok(())
    }

    /// Builds a path `nodes[0] - nodes[1] - ...` with identical link parameters.
    pub fn line(nodes: &[NodeId], params: LinkParams) -> Result<Self, TopologyError> {
        let mut t = Topology::new();
        for &n in nodes {
            t.add_node(n)?;
        }
        for w in nodes.windows(2) {
            t.add_link(w[0], w[1], params)?;
        }
        Ok(t)
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<LinkParams> {
        self.links.get(&key(a, b)).copied()
    }

    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId, LinkParams)> + '_ {
        self.links.iter().map(|(&(a, b), &p)| (a, b, p))
    }

    /// Neighbors in ascending node-id order.
    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .links
            .keys()
            .filter_map(|&(a, b)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn set_loss(&mut self, loss: f64) {
        for p in self.links.values_mut() {
            p.loss = loss;
        }
    }
}
