//! Synthetic streams with planted node-time patterns.
//!
//! User `u` has archetype `u mod A`. Time is cyclic with period `P` and split
//! into phase bins. At phase bin `b`, an archetype-`a` user picks an item from
//! its preferred block `(a, b)` with probability `affinity`, otherwise
//! uniformly from all items. Labels couple archetype and phase and are
//! flipped with probability `noise`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::eventstore::{Event, EventStream, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// 1 iff the archetype is 1 and the phase is in the second half-cycle.
    #[default]
    ArchetypeAndLateHalf,
    /// 1 iff the archetype is odd.
    Archetype,
    /// 1 iff the phase is in the second half-cycle.
    LateHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_events: usize,
    pub period: f64,
    /// Stream length in periods.
    pub cycles: f64,
    pub archetypes: usize,
    pub phase_bins: usize,
    /// Probability of drawing from the preferred item block.
    pub affinity: f64,
    pub label_rule: LabelRule,
    pub noise: f64,
    /// Node feature width; users carry a noisy one-hot archetype code, items
    /// a noisy one-hot block code.
    pub d_x: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            n_items: 20,
            n_events: 2000,
            period: 100.0,
            cycles: 100.0,
            archetypes: 2,
            phase_bins: 2,
            affinity: 0.8,
            label_rule: LabelRule::ArchetypeAndLateHalf,
            noise: 0.1,
            d_x: 16,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::config("noise", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.affinity) {
            return Err(Error::config("affinity", "must lie in [0, 1]"));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::config("n_users", "need at least one user and one item"));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::config("period", "must be positive"));
        }
        if !(self.cycles > 0.0 && self.cycles.is_finite()) {
            return Err(Error::config("cycles", "must be positive"));
        }
        if self.archetypes == 0 || self.phase_bins == 0 {
            return Err(Error::config(
                "archetypes",
                "archetypes and phase_bins must be positive",
            ));
        }
        if self.n_items < self.blocks() {
            return Err(Error::config(
                "n_items",
                format!("need at least archetypes x phase_bins = {} items", self.blocks()),
            ));
        }
        if self.d_x < self.archetypes + self.blocks() {
            return Err(Error::config(
                "d_x",
                format!("need at least {} feature columns", self.archetypes + self.blocks()),
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature_noise", "must be non-negative"));
        }
        Ok(())
    }

    fn blocks(&self) -> usize {
        self.archetypes * self.phase_bins
    }

    pub fn archetype(&self, user: NodeId) -> usize {
        user % self.archetypes
    }

    /// Position within the cycle, in `[0, 1)`.
    pub fn phase(&self, t: f64) -> f64 {
        (t / self.period).rem_euclid(1.0)
    }

    pub fn phase_bin(&self, t: f64) -> usize {
        ((self.phase(t) * self.phase_bins as f64) as usize).min(self.phase_bins - 1)
    }

    /// Items (as offsets `0..n_items`) in the preferred block of `(archetype, bin)`.
    pub fn block(&self, archetype: usize, bin: usize) -> std::ops::Range<usize> {
        let b = archetype * self.phase_bins + bin;
        let lo = b * self.n_items / self.blocks();
        let hi = (b + 1) * self.n_items / self.blocks();
        lo..hi
    }

    /// Planted item distribution for `(archetype, bin)`.
    pub fn item_distribution(&self, archetype: usize, bin: usize) -> Vec<f64> {
        let block = self.block(archetype, bin);
        let base = (1.0 - self.affinity) / self.n_items as f64;
        let bonus = self.affinity / block.len() as f64;
        (0..self.n_items)
            .map(|i| base + if block.contains(&i) { bonus } else { 0.0 })
            .collect()
    }

    /// Noise-free label of `user` at time `t`.
    pub fn clean_label(&self, user: NodeId, t: f64) -> i64 {
        let late = self.phase(t) >= 0.5;
        let a = self.archetype(user);
        match self.label_rule {
            LabelRule::ArchetypeAndLateHalf => (a == 1 && late) as i64,
            LabelRule::Archetype => (a % 2 == 1) as i64,
            LabelRule::LateHalf => late as i64,
        }
    }
}

/// Generate a bipartite stream: users are `0..n_users`, items follow.
pub fn generate_synthetic(config: &SynthConfig) -> Result<EventStream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = config.period * config.cycles;
    let mut times: Vec<f64> = (0..config.n_events).map(|_| rng.gen_range(0.0..span)).collect();
    times.sort_by(f64::total_cmp);
    let events = times
        .into_iter()
        .map(|t| {
            let u = rng.gen_range(0..config.n_users);
            let a = config.archetype(u);
            let block = config.block(a, config.phase_bin(t));
            let item = if rng.gen_bool(config.affinity) {
                rng.gen_range(block)
            } else {
                rng.gen_range(0..config.n_items)
            };
            let mut label = config.clean_label(u, t);
            if rng.gen_bool(config.noise) {
                label = 1 - label;
            }
            Event::new(u, config.n_users + item, t).with_label(label)
        })
        .collect();

    let normal = Normal::new(0.0, config.feature_noise).map_err(|e| Error::config("feature_noise", e.to_string()))?;
    let n = config.n_users + config.n_items;
    let mut feat = Tensor::from_fn(n, config.d_x, |_, _| normal.sample(&mut rng));
    for u in 0..config.n_users {
        feat.row_mut(u)[config.archetype(u)] += 1.0;
    }
    for i in 0..config.n_items {
        let b = (0..config.blocks())
            .find(|&b| config.block(b / config.phase_bins, b % config.phase_bins).contains(&i))
            .expect("items are covered by blocks");
        feat.row_mut(config.n_users + i)[config.archetypes + b] += 1.0;
    }
    EventStream::new(events, n)?
        .with_bipartite(config.n_users)?
        .with_node_features(feat)
}
