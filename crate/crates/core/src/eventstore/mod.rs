//! Continuous-time event streams: ingestion, chronological splits, the
//! temporal neighbor index, and negative/task sampling.

mod jodie;
mod neighbors;
mod sampling;
mod split;

pub use jodie::{load_jodie_csv, parse_jodie, write_jodie_csv, write_node_features};
pub use neighbors::{NeighborEntry, NeighborIndex, NeighborStrategy};
pub use sampling::{
    destination_pool, sample_negative, sample_negative_with_fallback, sample_task, Instance, Labeled, NegativeRule,
    Setting, Task, TaskMode, CLASS_COVERAGE_RETRIES, SUPPORT_EVENTS,
};
pub use split::{chronological_split, split_len, SplitIndices};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// One timestamped interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub edge_feat: Vec<f64>,
    /// Class label of `src` at time `t`, if known.
    pub state_label: Option<i64>,
}

impl Event {
    pub fn new(src: NodeId, dst: NodeId, t: f64) -> Self {
        Event {
            src,
            dst,
            t,
            edge_feat: Vec::new(),
            state_label: None,
        }
    }

    pub fn with_label(mut self, label: i64) -> Self {
        self.state_label = Some(label);
        self
    }

    pub fn with_features(mut self, feat: Vec<f64>) -> Self {
        self.edge_feat = feat;
        self
    }
}

/// Chronologically ordered events over a fixed node set.
///
/// Immutable after construction; share it freely across task runners.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    node_feat: Option<Tensor>,
    d_e: usize,
    /// For bipartite streams, ids `< num_sources` are sources (users) and the
    /// rest are destinations (items).
    num_sources: Option<usize>,
}

impl EventStream {
    /// Validate and stably sort `events` by timestamp.
    pub fn new(mut events: Vec<Event>, num_nodes: usize) -> Result<Self> {
        let d_e = events.first().map_or(0, |e| e.edge_feat.len());
        for (i, e) in events.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(Error::Parse {
                    line: i,
                    msg: format!("timestamp {} must be finite and non-negative", e.t),
                });
            }
            if e.edge_feat.len() != d_e {
                return Err(Error::Parse {
                    line: i,
                    msg: format!("edge feature dimension {} != {}", e.edge_feat.len(), d_e),
                });
            }
            for node in [e.src, e.dst] {
                if node >= num_nodes {
                    return Err(Error::UnknownNode { node, num_nodes });
                }
            }
        }
        // stable: ties keep input order
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(EventStream {
            events,
            num_nodes,
            node_feat: None,
            d_e,
            num_sources: None,
        })
    }

    /// Mark the stream bipartite with sources `0..num_sources`.
    pub fn with_bipartite(mut self, num_sources: usize) -> Result<Self> {
        if num_sources > self.num_nodes {
            return Err(Error::config("num_sources", "exceeds node count"));
        }
        self.num_sources = Some(num_sources);
        Ok(self)
    }

    /// Attach static node features, one row per node.
    pub fn with_node_features(mut self, feat: Tensor) -> Result<Self> {
        if feat.rows() != self.num_nodes {
            return Err(Error::Shape {
                op: "node_features",
                lhs: feat.shape(),
                rhs: (self.num_nodes, feat.cols()),
            });
        }
        self.node_feat = Some(feat);
        Ok(self)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    /// Node feature width, or `None` when the stream carries no node features.
    pub fn d_x(&self) -> Option<usize> {
        self.node_feat.as_ref().map(Tensor::cols)
    }

    pub fn node_features(&self) -> Option<&Tensor> {
        self.node_feat.as_ref()
    }

    pub fn num_sources(&self) -> Option<usize> {
        self.num_sources
    }

    pub fn is_bipartite(&self) -> bool {
        self.num_sources.is_some()
    }

    /// Latest minus earliest timestamp (0 for empty or single-instant streams).
    pub fn time_span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Sorted distinct state labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c: Vec<i64> = self.events.iter().filter_map(|e| e.state_label).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        if node < self.num_nodes {
            Ok(())
        } else {
            Err(Error::UnknownNode {
                node,
                num_nodes: self.num_nodes,
            })
        }
    }
}
