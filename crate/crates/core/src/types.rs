//! Association types shared by the latency, allocation, and matching layers.

use serde::{Deserialize, Serialize};

/// The node a UE uploads its model updates through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServingNode {
    /// A small-cell base station, by index.
    Sbs(usize),
    /// The fallback edge node: unbounded quota, fixed reserved uplink rate.
    Edge,
}

impl ServingNode {
    /// Returns the SBS index, or `None` for the edge node.
    pub fn sbs(&self) -> Option<usize> {
        match self {
            ServingNode::Sbs(s) => Some(*s),
            ServingNode::Edge => None,
        }
    }
}

/// A complete uplink assignment: who serves each UE, which bandwidth
/// fraction it gets inside its cell, and the CPU frequency it runs at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Association {
    /// Serving node per UE.
    pub serving: Vec<ServingNode>,
    /// Bandwidth fraction per UE within its serving cell. Ignored for
    /// edge-served UEs, which get the reserved rate instead.
    pub beta: Vec<f64>,
    /// CPU frequency per UE in Hz.
    pub cpu_freq_hz: Vec<f64>,
}

impl Association {
    /// Number of UEs covered by this association.
    pub fn n_ues(&self) -> usize {
        self.serving.len()
    }

    /// UE indices served by the given SBS, in ascending order.
    pub fn members(&self, sbs: usize) -> Vec<usize> {
        self.serving
            .iter()
            .enumerate()
            .filter(|(_, node)| **node == ServingNode::Sbs(sbs))
            .map(|(n, _)| n)
            .collect()
    }

    /// UE indices served by the edge node, in ascending order.
    pub fn edge_members(&self) -> Vec<usize> {
        self.serving
            .iter()
            .enumerate()
            .filter(|(_, node)| **node == ServingNode::Edge)
            .map(|(n, _)| n)
            .collect()
    }
}
