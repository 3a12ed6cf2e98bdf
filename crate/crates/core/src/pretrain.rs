//! Contrastive temporal link-prediction pre-training of the backbone.
//!
//! Each pre-training event `(v, a, t)` yields a tuple `(v, a, b, t)` with a
//! sampled negative `b`. The per-tuple loss is
//! `-ln(exp(sim(h_v, h_a)/τ) / exp(sim(h_v, h_b)/τ)) = -(sim(h_v, h_a) - sim(h_v, h_b))/τ`,
//! averaged over a batch.

use std::ops::Range;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, AdamConfig, Graph, ParamRegistry, Var};
use crate::encoder::{Checkpoint, Encoder, EncoderConfig, FeatureHook, IdentityHook};
use crate::error::{Error, Result};
use crate::eventstore::{
    chronological_split, destination_pool, sample_negative_with_fallback, EventStream, NeighborIndex, NodeId,
};

/// Similarity used by both the pre-training and downstream objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

impl Similarity {
    /// Row-wise similarity of two `n×d` arrays, giving `n×1`.
    pub fn rows(self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        match self {
            Similarity::Cosine => g.row_cosine(a, b),
            Similarity::Dot => g.row_dot(a, b),
        }
    }

    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        match self {
            Similarity::Dot => dot,
            Similarity::Cosine => {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                dot / (na * nb)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveTuple {
    pub v: NodeId,
    pub a: NodeId,
    pub b: NodeId,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub seed: u64,
    pub similarity: Similarity,
    /// Caps the batches per epoch; each epoch then sees a fresh random subset.
    pub max_batches_per_epoch: Option<usize>,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            tau: 0.1,
            seed: 0,
            similarity: Similarity::Cosine,
            max_batches_per_epoch: None,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive and finite"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_batches_per_epoch == Some(0) {
            return Err(Error::config("max_batches_per_epoch", "must be at least 1"));
        }
        self.encoder.validate()
    }
}

/// One tuple per event in `range`; negatives come from the destination pool.
pub fn build_tuples(
    stream: &EventStream,
    index: &NeighborIndex,
    range: Range<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<ContrastiveTuple>> {
    if range.is_empty() {
        return Err(Error::Sampling("empty pre-training range".to_string()));
    }
    let pool = destination_pool(stream, None);
    stream.events()[range]
        .iter()
        .map(|e| {
            let b = sample_negative_with_fallback(index, e.src, e.t, &pool, rng)?;
            Ok(ContrastiveTuple {
                v: e.src,
                a: e.dst,
                b,
                t: e.t,
            })
        })
        .collect()
}

/// Per-tuple losses `-(sim(v, a) - sim(v, b))/τ` as an `n×1` column.
pub fn tuple_losses(g: &mut Graph, h_v: Var, h_a: Var, h_b: Var, tau: f64, sim: Similarity) -> Result<Var> {
    let pos = sim.rows(g, h_v, h_a)?;
    let neg = sim.rows(g, h_v, h_b)?;
    let diff = g.sub(neg, pos)?;
    Ok(g.scale(diff, 1.0 / tau))
}

/// Batch mean of [`tuple_losses`].
pub fn pretrain_loss(g: &mut Graph, h_v: Var, h_a: Var, h_b: Var, tau: f64, sim: Similarity) -> Result<Var> {
    let per = tuple_losses(g, h_v, h_a, h_b, tau, sim)?;
    Ok(g.mean(per))
}

/// Embed `(v, a, b)` of every tuple at its time in a single pass and return
/// the mean contrastive loss.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    g: &mut Graph,
    registry: &ParamRegistry,
    encoder: &Encoder,
    stream: &EventStream,
    index: &NeighborIndex,
    tuples: &[ContrastiveTuple],
    tau: f64,
    sim: Similarity,
    hook: &dyn FeatureHook,
) -> Result<Var> {
    let n = tuples.len();
    let mut targets = Vec::with_capacity(3 * n);
    targets.extend(tuples.iter().map(|c| (c.v, c.t)));
    targets.extend(tuples.iter().map(|c| (c.a, c.t)));
    targets.extend(tuples.iter().map(|c| (c.b, c.t)));
    let h = encoder.embed(g, registry, stream, index, &targets, hook)?;
    let rows = |k: usize| -> Rc<[usize]> { (k * n..(k + 1) * n).collect() };
    let h_v = g.gather_rows(h, rows(0))?;
    let h_a = g.gather_rows(h, rows(1))?;
    let h_b = g.gather_rows(h, rows(2))?;
    pretrain_loss(g, h_v, h_a, h_b, tau, sim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn run_pretraining(stream: &EventStream, config: &PretrainConfig) -> Result<PretrainOutcome> {
    run_pretraining_with(stream, config, |_| {})
}

/// [`run_pretraining`] with a callback after every epoch.
pub fn run_pretraining_with(
    stream: &EventStream,
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<PretrainOutcome> {
    config.validate()?;
    let split = chronological_split(stream)?;
    let index = NeighborIndex::build(stream);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut registry = ParamRegistry::new();
    let encoder = Encoder::init(config.encoder.clone(), &mut registry, stream.time_span(), &mut rng)?;
    encoder.check_stream(stream)?;
    let tuples = build_tuples(stream, &index, split.pretrain, &mut rng)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let batches = order.chunks(config.batch_size);
        let limit = config.max_batches_per_epoch.unwrap_or(usize::MAX);
        let (mut total, mut count) = (0.0, 0usize);
        for (b, chunk) in batches.take(limit).enumerate() {
            let batch: Vec<ContrastiveTuple> = chunk.iter().map(|&i| tuples[i]).collect();
            let mut g = Graph::new();
            let loss = batch_loss(
                &mut g,
                &registry,
                &encoder,
                stream,
                &index,
                &batch,
                config.tau,
                config.similarity,
                &IdentityHook,
            )?;
            let value = g.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    value,
                    context: format!("pre-training epoch {epoch}, batch {b}"),
                });
            }
            g.backward(loss, &mut registry)?;
            adam.step(&mut registry);
            total += value * batch.len() as f64;
            count += batch.len();
        }
        let entry = EpochLog {
            epoch,
            mean_loss: total / count as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::capture(&encoder, &registry),
        log,
    })
}
