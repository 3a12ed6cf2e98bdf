//! Dual prompts and dual condition-nets.
//!
//! For every fused item the hook computes
//! `x_node = p_node ⊙ x`, `f_time = p_time ⊙ f`,
//! `x̃ = TCN(f_time) ⊙ x_node`, `f̃ = NCN(x_node) ⊙ f_time`,
//! where each condition-net is `1 + W₂·σ(W₁·z + b₁) + b₂` with a bottleneck
//! hidden layer. `W₂` and `b₂` start at zero and the prompts at one, so a fresh
//! state leaves the encoder's features unchanged.

mod tune;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use tune::{
    class_log_probs, downstream_nc_loss, link_tuples, prototypes, tune_prompts, Prototypes, TuneReport, TunedModel,
};

use crate::diffcore::{Graph, ParamId, ParamRegistry, Snapshot, Tensor, Var};
use crate::encoder::FeatureHook;
use crate::error::{Error, Result};
use crate::pretrain::Similarity;

/// Prefix of every prompt-side parameter name.
pub const PROMPT_PREFIX: &str = "prompt.";

/// Which prompt components are trained. A disabled prompt stays at `1⃗` and a
/// disabled condition-net stays at its identity output; neither is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub node_prompt: bool,
    pub time_prompt: bool,
    pub ncn: bool,
    pub tcn: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const NONE: Self = Self::new(false, false, false, false);
    pub const FULL: Self = Self::new(true, true, true, true);

    pub const fn new(node_prompt: bool, time_prompt: bool, ncn: bool, tcn: bool) -> Self {
        AblationFlags {
            node_prompt,
            time_prompt,
            ncn,
            tcn,
        }
    }

    /// The seven standard ablation variants, in table order.
    pub fn variants() -> [(&'static str, AblationFlags); 7] {
        [
            ("variant1", Self::NONE),
            ("variant2", Self::new(true, false, false, false)),
            ("variant3", Self::new(false, true, false, false)),
            ("variant4", Self::new(true, true, false, false)),
            ("variant5", Self::new(true, false, true, false)),
            ("variant6", Self::new(false, true, false, true)),
            ("full", Self::FULL),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.node_prompt, "node"),
            (self.time_prompt, "time"),
            (self.ncn, "ncn"),
            (self.tcn, "tcn"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// `max(1, ⌊d/α⌋)`.
pub fn bottleneck(d: usize, alpha: usize) -> usize {
    (d / alpha.max(1)).max(1)
}

/// Trainable entries of a full state: both prompts and both condition-nets.
pub fn closed_form_count(d_x: usize, d_t: usize, hidden_tcn: usize, hidden_ncn: usize) -> usize {
    let tcn = d_t * hidden_tcn + hidden_tcn + hidden_tcn * d_x + d_x;
    let ncn = d_x * hidden_ncn + hidden_ncn + hidden_ncn * d_t + d_t;
    d_x + d_t + tcn + ncn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Bottleneck divisor: each condition-net's hidden width is `max(1, ⌊d_in/α⌋)`.
    pub alpha: usize,
    /// Explicit hidden width for both condition-nets; overrides `alpha`.
    pub hidden: Option<usize>,
    pub flags: AblationFlags,
    pub lr: f64,
    pub epochs: usize,
    /// Early-stopping patience on the validation metric; `None` runs every epoch.
    pub patience: Option<usize>,
    pub tau: f64,
    pub similarity: Similarity,
    /// Embed support nodes at each query's time when scoring, rather than at
    /// their own event times.
    pub support_at_query_time: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            alpha: 2,
            hidden: None,
            flags: AblationFlags::FULL,
            lr: 1e-2,
            epochs: 200,
            patience: Some(20),
            tau: 0.1,
            similarity: Similarity::Cosine,
            support_at_query_time: false,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::config("alpha", "must be at least 1"));
        }
        if self.hidden == Some(0) {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive and finite"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be at least 1"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, d_in: usize) -> usize {
        self.hidden.unwrap_or_else(|| bottleneck(d_in, self.alpha))
    }
}

/// Handles to one condition-net's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondNet {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl CondNet {
    fn register(
        registry: &mut ParamRegistry,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w1 = Tensor::from_fn(d_in, hidden, |_, _| rng.gen_range(-bound..bound));
        Ok(CondNet {
            w1: registry.register(format!("{PROMPT_PREFIX}{name}.w1"), w1)?,
            b1: registry.register(format!("{PROMPT_PREFIX}{name}.b1"), Tensor::zeros(1, hidden))?,
            w2: registry.register(format!("{PROMPT_PREFIX}{name}.w2"), Tensor::zeros(hidden, d_out))?,
            b2: registry.register(format!("{PROMPT_PREFIX}{name}.b2"), Tensor::zeros(1, d_out))?,
        })
    }

    fn bind(registry: &ParamRegistry, name: &str) -> Result<Self> {
        let id = |part: &str| registry.id(&format!("{PROMPT_PREFIX}{name}.{part}"));
        Ok(CondNet {
            w1: id("w1")?,
            b1: id("b1")?,
            w2: id("w2")?,
            b2: id("b2")?,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `1 + W₂·σ(W₁·z + b₁) + b₂`, row-wise.
    pub fn generate(&self, g: &mut Graph, registry: &ParamRegistry, z: Var) -> Result<Var> {
        let w1 = g.param(registry, self.w1);
        let b1 = g.param(registry, self.b1);
        let w2 = g.param(registry, self.w2);
        let b2 = g.param(registry, self.b2);
        let pre = g.matmul(z, w1)?;
        let pre = g.add_row(pre, b1)?;
        let hidden = g.sigmoid(pre);
        let out = g.matmul(hidden, w2)?;
        let out = g.add_row(out, b2)?;
        Ok(g.add_scalar(out, 1.0))
    }
}

/// Prompt vectors and condition-nets registered under [`PROMPT_PREFIX`].
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub d_x: usize,
    pub d_t: usize,
    pub flags: AblationFlags,
    pub p_node: ParamId,
    pub p_time: ParamId,
    /// Time condition-net: `d_t → d̃ → d_x`, generates node prompts.
    pub tcn: CondNet,
    /// Node condition-net: `d_x → d̃ → d_t`, generates time prompts.
    pub ncn: CondNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCounts {
    pub p_node: usize,
    pub p_time: usize,
    pub tcn: usize,
    pub ncn: usize,
    pub total: usize,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    d_x: usize,
    d_t: usize,
    flags: AblationFlags,
}

impl PromptState {
    /// Register an identity state: prompts at `1⃗`, condition-nets with a
    /// random first layer and a zero second layer. Disabled components are
    /// frozen.
    pub fn init(
        registry: &mut ParamRegistry,
        d_x: usize,
        d_t: usize,
        config: &PromptConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let p_node = registry.register(format!("{PROMPT_PREFIX}p_node"), Tensor::filled(1, d_x, 1.0))?;
        let p_time = registry.register(format!("{PROMPT_PREFIX}p_time"), Tensor::filled(1, d_t, 1.0))?;
        let tcn = CondNet::register(registry, "tcn", d_t, config.hidden_for(d_t), d_x, rng)?;
        let ncn = CondNet::register(registry, "ncn", d_x, config.hidden_for(d_x), d_t, rng)?;
        let state = PromptState {
            d_x,
            d_t,
            flags: config.flags,
            p_node,
            p_time,
            tcn,
            ncn,
        };
        state.apply_freeze(registry);
        Ok(state)
    }

    fn apply_freeze(&self, registry: &mut ParamRegistry) {
        let f = self.flags;
        registry.set_frozen(self.p_node, !f.node_prompt);
        registry.set_frozen(self.p_time, !f.time_prompt);
        for id in self.tcn.ids() {
            registry.set_frozen(id, !f.tcn);
        }
        for id in self.ncn.ids() {
            registry.set_frozen(id, !f.ncn);
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.p_node, self.p_time];
        ids.extend(self.tcn.ids());
        ids.extend(self.ncn.ids());
        ids
    }

    pub fn count_trainable(&self, registry: &ParamRegistry) -> PromptCounts {
        let count = |ids: &[ParamId]| -> usize {
            ids.iter()
                .filter(|&&id| !registry.is_frozen(id))
                .map(|&id| registry.value(id).len())
                .sum()
        };
        let p_node = count(&[self.p_node]);
        let p_time = count(&[self.p_time]);
        let tcn = count(&self.tcn.ids());
        let ncn = count(&self.ncn.ids());
        PromptCounts {
            p_node,
            p_time,
            tcn,
            ncn,
            total: p_node + p_time + tcn + ncn,
        }
    }

    /// Current values of every state array, in [`PromptState::param_ids`] order.
    pub fn values(&self, registry: &ParamRegistry) -> Vec<Tensor> {
        self.param_ids()
            .into_iter()
            .map(|id| registry.value(id).clone())
            .collect()
    }

    pub fn set_values(&self, registry: &mut ParamRegistry, values: &[Tensor]) {
        for (id, v) in self.param_ids().into_iter().zip(values) {
            *registry.value_mut(id) = v.clone();
        }
    }

    pub fn snapshot(&self, registry: &ParamRegistry) -> Snapshot {
        let meta = StateMeta {
            d_x: self.d_x,
            d_t: self.d_t,
            flags: self.flags,
        };
        Snapshot::capture(
            registry,
            PROMPT_PREFIX,
            serde_json::to_value(meta).expect("meta serializes"),
        )
    }

    /// Register a saved state into `registry` (which must not already hold one).
    pub fn restore(snapshot: &Snapshot, registry: &mut ParamRegistry) -> Result<Self> {
        let meta: StateMeta = serde_json::from_value(snapshot.config.clone()).map_err(|e| Error::Checkpoint {
            field: "config".to_string(),
            msg: e.to_string(),
        })?;
        snapshot.register_into(registry)?;
        let state = PromptState {
            d_x: meta.d_x,
            d_t: meta.d_t,
            flags: meta.flags,
            p_node: registry.id(&format!("{PROMPT_PREFIX}p_node"))?,
            p_time: registry.id(&format!("{PROMPT_PREFIX}p_time"))?,
            tcn: CondNet::bind(registry, "tcn")?,
            ncn: CondNet::bind(registry, "ncn")?,
        };
        state.check_shapes(registry)?;
        state.apply_freeze(registry);
        Ok(state)
    }

    fn check_shapes(&self, registry: &ParamRegistry) -> Result<()> {
        let h_t = registry.value(self.tcn.w1).cols();
        let h_x = registry.value(self.ncn.w1).cols();
        let want = [
            (self.p_node, (1, self.d_x)),
            (self.p_time, (1, self.d_t)),
            (self.tcn.w1, (self.d_t, h_t)),
            (self.tcn.b1, (1, h_t)),
            (self.tcn.w2, (h_t, self.d_x)),
            (self.tcn.b2, (1, self.d_x)),
            (self.ncn.w1, (self.d_x, h_x)),
            (self.ncn.b1, (1, h_x)),
            (self.ncn.w2, (h_x, self.d_t)),
            (self.ncn.b2, (1, self.d_t)),
        ];
        for (id, shape) in want {
            if registry.value(id).shape() != shape {
                return Err(Error::Checkpoint {
                    field: registry.name(id).to_string(),
                    msg: format!("shape {:?}, expected {shape:?}", registry.value(id).shape()),
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, registry: &ParamRegistry, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.snapshot(registry).save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>, registry: &mut ParamRegistry) -> Result<Self> {
        Self::restore(&Snapshot::load(path)?, registry)
    }

    pub fn hook(&self) -> PromptHook<'_> {
        PromptHook { state: self }
    }
}

/// `p_node ⊙ x`, with `p_node` broadcast over rows.
pub fn apply_node_prompt(g: &mut Graph, p_node: Var, x: Var) -> Result<Var> {
    g.mul_row(x, p_node)
}

/// `p_time ⊙ f`, with `p_time` broadcast over rows.
pub fn apply_time_prompt(g: &mut Graph, p_time: Var, f: Var) -> Result<Var> {
    g.mul_row(f, p_time)
}

/// Time-conditioned node prompts from prompted time features.
pub fn tcn_generate(g: &mut Graph, registry: &ParamRegistry, state: &PromptState, f_time: Var) -> Result<Var> {
    state.tcn.generate(g, registry, f_time)
}

/// Node-conditioned time prompts from prompted node features.
pub fn ncn_generate(g: &mut Graph, registry: &ParamRegistry, state: &PromptState, x_node: Var) -> Result<Var> {
    state.ncn.generate(g, registry, x_node)
}

/// `(x̃, f̃)` for rows of raw node features `x` and time features `f`.
/// Disabled components are skipped, which is exactly their identity value.
pub fn prompted_features(
    g: &mut Graph,
    registry: &ParamRegistry,
    state: &PromptState,
    x: Var,
    f: Var,
) -> Result<(Var, Var)> {
    let flags = state.flags;
    let x_node = if flags.node_prompt {
        let p = g.param(registry, state.p_node);
        apply_node_prompt(g, p, x)?
    } else {
        x
    };
    let f_time = if flags.time_prompt {
        let p = g.param(registry, state.p_time);
        apply_time_prompt(g, p, f)?
    } else {
        f
    };
    let x_tilde = if flags.tcn {
        let p = tcn_generate(g, registry, state, f_time)?;
        g.mul(p, x_node)?
    } else {
        x_node
    };
    let f_tilde = if flags.ncn {
        let p = ncn_generate(g, registry, state, x_node)?;
        g.mul(p, f_time)?
    } else {
        f_time
    };
    Ok((x_tilde, f_tilde))
}

/// Feature hook running [`prompted_features`] on every item at every layer.
#[derive(Debug, Clone, Copy)]
pub struct PromptHook<'a> {
    pub state: &'a PromptState,
}

impl FeatureHook for PromptHook<'_> {
    fn apply(&self, g: &mut Graph, registry: &ParamRegistry, x: Var, f: Var) -> Result<(Var, Var)> {
        prompted_features(g, registry, self.state, x, f)
    }
}

#[cfg(test)]
mod tests;
