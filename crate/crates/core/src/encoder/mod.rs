//! The backbone: sinusoidal time encoder, concatenation fuse, and stacked
//! temporal attention over each node's historical neighbors.
//!
//! Embeddings are computed in batches. For a set of `(node, time)` targets a
//! layer gathers one *item* per target (its self entry, elapsed time 0) plus
//! one item per budgeted neighbor (elapsed time `t - t'`). Each item fuses
//! `[node part ‖ time features ‖ edge features]`; the node part is the raw
//! (possibly prompted) node features at the first layer and the previous
//! layer's embedding of the item at its own time above that. The target's
//! self item queries all of its items with scaled dot-product attention.

mod checkpoint;
mod time;

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use time::{time_encode, time_features};

use crate::diffcore::{Graph, ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};
use crate::eventstore::{EventStream, NeighborIndex, NeighborStrategy, NodeId};

/// Prefix of every backbone parameter name in a registry.
pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Encode `t - t'` for neighbors and 0 for the anchor.
    #[default]
    Elapsed,
    /// Encode the interaction's absolute timestamp.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_x: usize,
    pub d_t: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub layers: usize,
    /// Neighbor budget per node per layer.
    pub k: usize,
    #[serde(default)]
    pub time_mode: TimeMode,
    #[serde(default)]
    pub neighbors: NeighborStrategy,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_x: 16,
            d_t: 16,
            d_h: 16,
            d_e: 0,
            layers: 2,
            k: 20,
            time_mode: TimeMode::Elapsed,
            neighbors: NeighborStrategy::MostRecent,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_t == 0 || !self.d_t.is_multiple_of(2) {
            return Err(Error::config("d_t", "must be even and positive"));
        }
        if self.d_h == 0 {
            return Err(Error::config("d_h", "must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::config("layers", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        Ok(())
    }

    /// Width of the node part of layer `l` (1-based) items.
    fn node_width(&self, layer: usize) -> usize {
        if layer == 1 {
            self.d_x
        } else {
            self.d_h
        }
    }

    /// Width of a fused item at layer `l`.
    pub fn fused_width(&self, layer: usize) -> usize {
        self.node_width(layer) + self.d_t + self.d_e
    }
}

/// Rewrites raw node features `x` (`n × d_x`) and time features `f`
/// (`n × d_t`) row by row before they enter the encoder.
pub trait FeatureHook {
    fn apply(&self, g: &mut Graph, registry: &ParamRegistry, x: Var, f: Var) -> Result<(Var, Var)>;
}

/// Leaves features untouched; the pre-training path.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl FeatureHook for IdentityHook {
    fn apply(&self, _: &mut Graph, _: &ParamRegistry, x: Var, f: Var) -> Result<(Var, Var)> {
        Ok((x, f))
    }
}

/// `[x ‖ f]`, row-wise.
pub fn fuse(g: &mut Graph, x: Var, f: Var) -> Result<Var> {
    if g.shape(x).1 == 0 {
        return Ok(f);
    }
    g.concat(&[x, f])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

/// Single-head scaled dot-product attention over grouped items.
///
/// `items` holds all fused items; group `i` spans `offsets[i]..offsets[i+1]`
/// and its first row is the group's self item, which supplies the query.
/// With no neighbors the output is `W_o · (W_v · self) + b_o`.
pub fn attend(
    g: &mut Graph,
    registry: &ParamRegistry,
    params: &AttentionParams,
    items: Var,
    offsets: &Rc<[usize]>,
) -> Result<Var> {
    let groups = offsets.len() - 1;
    let self_rows: Rc<[usize]> = offsets[..groups].into();
    let group_of: Rc<[usize]> = (0..groups)
        .flat_map(|i| std::iter::repeat_n(i, offsets[i + 1] - offsets[i]))
        .collect();
    let w_q = g.param(registry, params.w_q);
    let w_k = g.param(registry, params.w_k);
    let w_v = g.param(registry, params.w_v);
    let w_o = g.param(registry, params.w_o);
    let b_o = g.param(registry, params.b_o);
    let d_h = g.shape(w_q).1;

    let selves = g.gather_rows(items, self_rows)?;
    let q = g.matmul(selves, w_q)?;
    let k = g.matmul(items, w_k)?;
    let v = g.matmul(items, w_v)?;
    let q_items = g.gather_rows(q, group_of)?;
    let dots = g.row_dot(q_items, k)?;
    let scores = g.scale(dots, 1.0 / (d_h as f64).sqrt());
    let weights = g.segment_softmax(scores, offsets.clone())?;
    let weighted = g.mul_col(v, weights)?;
    let agg = g.segment_sum(weighted, offsets.clone())?;
    let out = g.matmul(agg, w_o)?;
    g.add_row(out, b_o)
}

/// Handles to the backbone's parameters in a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub omega: ParamId,
    pub layers: Vec<AttentionParams>,
}

fn layer_name(l: usize, part: &str) -> String {
    format!("{BACKBONE_PREFIX}layer{l}.{part}")
}

const OMEGA: &str = "backbone.time.omega";

impl Encoder {
    /// Register freshly initialized backbone parameters.
    ///
    /// Projections are uniform in `±1/√fan_in`; output biases start at zero;
    /// frequencies are log-uniform over `[1/time_span, 10]`.
    pub fn init(
        config: EncoderConfig,
        registry: &mut ParamRegistry,
        time_span: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let half = config.d_t / 2;
        let lo = (1.0 / time_span.max(1e-6)).min(10.0).ln();
        let hi = 10f64.ln();
        let omega: Vec<f64> = (0..half)
            .map(|_| if hi > lo { rng.gen_range(lo..hi).exp() } else { hi.exp() })
            .collect();
        let omega = registry.register(OMEGA, Tensor::vector(omega))?;
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let width = config.fused_width(l);
            let d_h = config.d_h;
            layers.push(AttentionParams {
                w_q: registry.register(layer_name(l, "w_q"), uniform(width, d_h))?,
                w_k: registry.register(layer_name(l, "w_k"), uniform(width, d_h))?,
                w_v: registry.register(layer_name(l, "w_v"), uniform(width, d_h))?,
                w_o: registry.register(layer_name(l, "w_o"), uniform(d_h, d_h))?,
                b_o: registry.register(layer_name(l, "b_o"), Tensor::zeros(1, d_h))?,
            });
        }
        Ok(Encoder { config, omega, layers })
    }

    /// Look up an already-registered backbone (e.g. restored from a checkpoint).
    pub fn bind(config: EncoderConfig, registry: &ParamRegistry) -> Result<Self> {
        config.validate()?;
        let omega = registry.id(OMEGA)?;
        if registry.value(omega).shape() != (1, config.d_t / 2) {
            return Err(Error::Checkpoint {
                field: OMEGA.to_string(),
                msg: format!("shape {:?} does not match d_t", registry.value(omega).shape()),
            });
        }
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let get = |part: &str, shape: (usize, usize)| -> Result<ParamId> {
                let name = layer_name(l, part);
                let id = registry.id(&name)?;
                if registry.value(id).shape() != shape {
                    return Err(Error::Checkpoint {
                        field: name,
                        msg: format!("shape {:?}, expected {shape:?}", registry.value(id).shape()),
                    });
                }
                Ok(id)
            };
            let (w, h) = (config.fused_width(l), config.d_h);
            layers.push(AttentionParams {
                w_q: get("w_q", (w, h))?,
                w_k: get("w_k", (w, h))?,
                w_v: get("w_v", (w, h))?,
                w_o: get("w_o", (h, h))?,
                b_o: get("b_o", (1, h))?,
            });
        }
        Ok(Encoder { config, omega, layers })
    }

    /// Parameter ids owned by the backbone.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.omega];
        for l in &self.layers {
            ids.extend([l.w_q, l.w_k, l.w_v, l.w_o, l.b_o]);
        }
        ids
    }

    pub fn check_stream(&self, stream: &EventStream) -> Result<()> {
        if stream.d_e() != self.config.d_e {
            return Err(Error::config(
                "d_e",
                format!(
                    "stream has {} edge features, encoder expects {}",
                    stream.d_e(),
                    self.config.d_e
                ),
            ));
        }
        if let Some(d_x) = stream.d_x() {
            if d_x != self.config.d_x {
                return Err(Error::config(
                    "d_x",
                    format!("stream has {d_x} node features, encoder expects {}", self.config.d_x),
                ));
            }
        }
        Ok(())
    }

    /// Embeddings `h_{t,v}` for every `(v, t)` in `targets`, one row each (`n × d_h`).
    pub fn embed(
        &self,
        g: &mut Graph,
        registry: &ParamRegistry,
        stream: &EventStream,
        index: &NeighborIndex,
        targets: &[(NodeId, f64)],
        hook: &dyn FeatureHook,
    ) -> Result<Var> {
        self.check_stream(stream)?;
        for &(v, _) in targets {
            stream.check_node(v)?;
        }
        self.layer_output(g, registry, stream, index, targets, self.config.layers, hook)
    }

    /// Single-node convenience wrapper around [`Encoder::embed`].
    #[allow(clippy::too_many_arguments)]
    pub fn encode_node(
        &self,
        g: &mut Graph,
        registry: &ParamRegistry,
        stream: &EventStream,
        index: &NeighborIndex,
        v: NodeId,
        t: f64,
        hook: &dyn FeatureHook,
    ) -> Result<Var> {
        self.embed(g, registry, stream, index, &[(v, t)], hook)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_output(
        &self,
        g: &mut Graph,
        registry: &ParamRegistry,
        stream: &EventStream,
        index: &NeighborIndex,
        targets: &[(NodeId, f64)],
        layer: usize,
        hook: &dyn FeatureHook,
    ) -> Result<Var> {
        let cfg = &self.config;
        let mut item_nodes: Vec<(NodeId, f64)> = Vec::new();
        let mut time_inputs = Vec::new();
        let mut edges: Vec<Option<usize>> = Vec::new();
        let mut offsets = Vec::with_capacity(targets.len() + 1);
        offsets.push(0);
        for &(v, t) in targets {
            item_nodes.push((v, t));
            time_inputs.push(match cfg.time_mode {
                TimeMode::Elapsed => 0.0,
                TimeMode::Absolute => t,
            });
            edges.push(None);
            for nb in index.sample_neighbors(v, t, cfg.k, cfg.neighbors) {
                item_nodes.push((nb.node, nb.t));
                time_inputs.push(match cfg.time_mode {
                    TimeMode::Elapsed => t - nb.t,
                    TimeMode::Absolute => nb.t,
                });
                edges.push(Some(nb.event));
            }
            offsets.push(item_nodes.len());
        }
        let offsets: Rc<[usize]> = offsets.into();
        let n = item_nodes.len();

        let x = g.constant(match stream.node_features() {
            Some(feat) => {
                let mut data = Vec::with_capacity(n * cfg.d_x);
                for &(u, _) in &item_nodes {
                    data.extend_from_slice(feat.row(u));
                }
                Tensor::new(n, cfg.d_x, data)?
            }
            None => Tensor::zeros(n, cfg.d_x),
        });
        let omega = g.param(registry, self.omega);
        let f = time_features(g, omega, &time_inputs)?;
        let (x_prompted, f_prompted) = hook.apply(g, registry, x, f)?;

        let node_part = if layer == 1 {
            x_prompted
        } else {
            self.layer_output(g, registry, stream, index, &item_nodes, layer - 1, hook)?
        };
        let mut parts = vec![node_part, f_prompted];
        if cfg.d_e > 0 {
            let mut data = Vec::with_capacity(n * cfg.d_e);
            for e in &edges {
                match e {
                    Some(i) => data.extend_from_slice(&stream.events()[*i].edge_feat),
                    None => data.extend(std::iter::repeat_n(0.0, cfg.d_e)),
                }
            }
            parts.push(g.constant(Tensor::new(n, cfg.d_e, data)?));
        }
        let parts: Vec<Var> = parts.into_iter().filter(|p| g.shape(*p).1 > 0).collect();
        let items = g.concat(&parts)?;
        let out = attend(g, registry, &self.layers[layer - 1], items, &offsets)?;
        Ok(if layer < cfg.layers { g.tanh(out) } else { out })
    }

    /// Plain (non-differentiable) embeddings, computed in chunks to bound memory.
    pub fn embed_values(
        &self,
        registry: &ParamRegistry,
        stream: &EventStream,
        index: &NeighborIndex,
        targets: &[(NodeId, f64)],
        hook: &dyn FeatureHook,
    ) -> Result<Tensor> {
        let d_h = self.config.d_h;
        let mut data = Vec::with_capacity(targets.len() * d_h);
        let chunk = match self.config.layers {
            1 => 512,
            2 => 64,
            _ => 8,
        };
        for part in targets.chunks(chunk) {
            let mut g = Graph::new();
            let h = self.embed(&mut g, registry, stream, index, part, hook)?;
            data.extend_from_slice(g.value(h).data());
        }
        Tensor::new(targets.len(), d_h, data)
    }
}
