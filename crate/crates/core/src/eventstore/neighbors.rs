use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventStream, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub node: NodeId,
    pub t: f64,
    pub event: usize,
}

/// How to cut a node's history down to the neighbor budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NeighborStrategy {
    /// The `k` most recent interactions.
    #[default]
    MostRecent,
    /// `k` interactions drawn uniformly without replacement from the history,
    /// with a generator derived from `(seed, v, t)` so results stay deterministic.
    Uniform { seed: u64 },
}

/// Per-node interaction history sorted by time. Edges are indexed under both
/// endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    lists: Vec<Vec<NeighborEntry>>,
}

impl NeighborIndex {
    pub fn build(stream: &EventStream) -> Self {
        let mut lists = vec![Vec::new(); stream.num_nodes()];
        for (i, e) in stream.events().iter().enumerate() {
            lists[e.src].push(NeighborEntry {
                node: e.dst,
                t: e.t,
                event: i,
            });
            lists[e.dst].push(NeighborEntry {
                node: e.src,
                t: e.t,
                event: i,
            });
        }
        NeighborIndex { lists }
    }

    pub fn history(&self, v: NodeId) -> &[NeighborEntry] {
        self.lists.get(v).map_or(&[], Vec::as_slice)
    }

    /// Entries of `v` with timestamp strictly below `t`.
    pub fn strictly_before(&self, v: NodeId, t: f64) -> &[NeighborEntry] {
        let h = self.history(v);
        &h[..h.partition_point(|e| e.t < t)]
    }

    /// Up to `k` most recent entries strictly before `t`, most recent first.
    pub fn neighbors_before(&self, v: NodeId, t: f64, k: usize) -> Vec<NeighborEntry> {
        let past = self.strictly_before(v, t);
        past.iter().rev().take(k).copied().collect()
    }

    /// Budgeted neighbors under `strategy`, most recent first.
    pub fn sample_neighbors(&self, v: NodeId, t: f64, k: usize, strategy: NeighborStrategy) -> Vec<NeighborEntry> {
        match strategy {
            NeighborStrategy::MostRecent => self.neighbors_before(v, t, k),
            NeighborStrategy::Uniform { seed } => {
                let past = self.strictly_before(v, t);
                if past.len() <= k {
                    return past.iter().rev().copied().collect();
                }
                let mix = seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t.to_bits();
                let mut rng = ChaCha8Rng::seed_from_u64(mix);
                let mut picked: Vec<usize> = sample(&mut rng, past.len(), k).into_vec();
                picked.sort_unstable_by(|a, b| b.cmp(a));
                picked.into_iter().map(|i| past[i]).collect()
            }
        }
    }

    /// Whether `v` and `b` interacted at any time `<= t`.
    pub fn linked_until(&self, v: NodeId, b: NodeId, t: f64) -> bool {
        let h = self.history(v);
        h[..h.partition_point(|e| e.t <= t)].iter().any(|e| e.node == b)
    }

    /// Whether `v` and `b` interacted at exactly time `t`.
    pub fn linked_at(&self, v: NodeId, b: NodeId, t: f64) -> bool {
        let h = self.history(v);
        let lo = h.partition_point(|e| e.t < t);
        let hi = h.partition_point(|e| e.t <= t);
        h[lo..hi].iter().any(|e| e.node == b)
    }
}
