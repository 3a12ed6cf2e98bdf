//! Prototypes, downstream losses and the frozen-backbone tuning loop.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PromptConfig, PromptState};
use crate::diffcore::{Adam, AdamConfig, Graph, ParamRegistry, Tensor, Var};
use crate::encoder::{Checkpoint, Encoder, BACKBONE_PREFIX};
use crate::error::{Error, Result};
use crate::evalbench::{auc_roc, macro_auc};
use crate::eventstore::{EventStream, Instance, Labeled, NeighborIndex, NodeId, Task, TaskMode};
use crate::pretrain::{pretrain_loss, ContrastiveTuple, Similarity};

/// Per-class mean embeddings, one row per class in `classes` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub classes: Vec<i64>,
    pub rows: Tensor,
}

impl Prototypes {
    /// Value-only version of [`prototypes`].
    pub fn compute(embeddings: &Tensor, labels: &[i64], classes: &[i64]) -> Result<Self> {
        let mut g = Graph::new();
        let h = g.constant(embeddings.clone());
        let p = prototypes(&mut g, h, labels, classes)?;
        Ok(Prototypes {
            classes: classes.to_vec(),
            rows: g.value(p).clone(),
        })
    }

    /// Class probabilities for each embedding row (`n × |classes|`).
    pub fn probabilities(&self, embeddings: &Tensor, tau: f64, sim: Similarity) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = g.constant(embeddings.clone());
        let p = g.constant(self.rows.clone());
        let lp = class_log_probs(&mut g, h, p, tau, sim)?;
        let probs = g.exp(lp);
        Ok(g.value(probs).clone())
    }
}

/// Mean of the rows of `h` per class (`|classes| × d`).
pub fn prototypes(g: &mut Graph, h: Var, labels: &[i64], classes: &[i64]) -> Result<Var> {
    if g.shape(h).0 != labels.len() {
        return Err(Error::Shape {
            op: "prototypes",
            lhs: g.shape(h),
            rhs: (labels.len(), g.shape(h).1),
        });
    }
    let mut order = Vec::with_capacity(labels.len());
    let mut offsets = vec![0];
    let mut inv = Vec::with_capacity(classes.len());
    for &c in classes {
        let before = order.len();
        order.extend(labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i));
        let n = order.len() - before;
        if n == 0 {
            return Err(Error::EmptyClass(c));
        }
        offsets.push(order.len());
        inv.push(1.0 / n as f64);
    }
    let grouped = g.gather_rows(h, order.into())?;
    let sums = g.segment_sum(grouped, offsets.into())?;
    let inv = g.constant(Tensor::new(classes.len(), 1, inv)?);
    g.mul_col(sums, inv)
}

/// Row-wise log-softmax over classes of `sim(h, prototype)/τ` (`n × c`).
pub fn class_log_probs(g: &mut Graph, h: Var, protos: Var, tau: f64, sim: Similarity) -> Result<Var> {
    let n = g.shape(h).0;
    let c = g.shape(protos).0;
    let mut cols = Vec::with_capacity(c);
    for k in 0..c {
        let rep = g.gather_rows(protos, vec![k; n].into())?;
        cols.push(sim.rows(g, h, rep)?);
    }
    let sims = g.concat(&cols)?;
    let scaled = g.scale(sims, 1.0 / tau);
    Ok(g.log_softmax_rows(scaled))
}

/// Mean over rows of `-ln softmax(sim(h, ·)/τ)` at each row's true class index.
pub fn downstream_nc_loss(
    g: &mut Graph,
    h: Var,
    class_index: &[usize],
    protos: Var,
    tau: f64,
    sim: Similarity,
) -> Result<Var> {
    let lp = class_log_probs(g, h, protos, tau, sim)?;
    let (n, c) = g.shape(lp);
    if class_index.len() != n || class_index.iter().any(|&k| k >= c) {
        return Err(Error::Shape {
            op: "downstream_nc_loss",
            lhs: (n, c),
            rhs: (class_index.len(), 1),
        });
    }
    let onehot = g.constant(Tensor::from_fn(n, c, |r, k| (class_index[r] == k) as u8 as f64));
    let picked = g.mul(lp, onehot)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// Pair each positive link instance with the negative that follows it.
pub fn link_tuples(instances: &[Labeled]) -> Result<Vec<ContrastiveTuple>> {
    if !instances.len().is_multiple_of(2) {
        return Err(Error::Sampling("link instances must come in pairs".to_string()));
    }
    instances
        .chunks(2)
        .map(
            |pair| match (pair[0].instance, pair[0].label, pair[1].instance, pair[1].label) {
                (Instance::Link { src, dst, t }, 1, Instance::Link { src: s2, dst: b, t: t2 }, 0)
                    if s2 == src && t2 == t =>
                {
                    Ok(ContrastiveTuple { v: src, a: dst, b, t })
                }
                _ => Err(Error::Sampling(
                    "expected (positive, negative) pairs sharing source and time".to_string(),
                )),
            },
        )
        .collect()
}

/// Frozen backbone plus a prompt state in one registry.
#[derive(Debug, Clone)]
pub struct TunedModel {
    pub registry: ParamRegistry,
    pub encoder: Encoder,
    pub state: PromptState,
    pub config: PromptConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TuneReport {
    /// Optimizer steps taken.
    pub steps: usize,
    /// Steps taken by the returned (best-validation) state.
    pub best_step: usize,
    pub best_valid_auc: Option<f64>,
    pub train_losses: Vec<f64>,
}

fn class_indices(labels: &[i64], classes: &[i64]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::Sampling(format!("label {l} not in task classes")))
        })
        .collect()
}

fn node_targets(items: &[Labeled]) -> Vec<(NodeId, f64)> {
    items.iter().map(|q| (q.instance.anchor(), q.instance.time())).collect()
}

fn rows(range: std::ops::Range<usize>) -> Rc<[usize]> {
    range.collect()
}

impl TunedModel {
    /// Restore the backbone, freeze it, and attach an identity prompt state.
    pub fn new(checkpoint: &Checkpoint, config: &PromptConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut registry = ParamRegistry::new();
        let encoder = checkpoint.restore(&mut registry)?;
        registry.freeze_prefix(BACKBONE_PREFIX);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = PromptState::init(&mut registry, encoder.config.d_x, encoder.config.d_t, config, &mut rng)?;
        Ok(TunedModel {
            registry,
            encoder,
            state,
            config: config.clone(),
        })
    }

    /// Prompted embeddings (values only).
    pub fn embed(&self, stream: &EventStream, index: &NeighborIndex, targets: &[(NodeId, f64)]) -> Result<Tensor> {
        self.encoder
            .embed_values(&self.registry, stream, index, targets, &self.state.hook())
    }

    /// Prototypes from the task's support set. With `at = Some(t)` every
    /// support node is embedded at `t` instead of its own event time.
    pub fn prototypes(
        &self,
        stream: &EventStream,
        index: &NeighborIndex,
        task: &Task,
        at: Option<f64>,
    ) -> Result<Prototypes> {
        let mut targets = node_targets(&task.support);
        if let Some(t) = at {
            targets.iter_mut().for_each(|p| p.1 = t);
        }
        let h = self.embed(stream, index, &targets)?;
        let labels: Vec<i64> = task.support.iter().map(|s| s.label).collect();
        Prototypes::compute(&h, &labels, &task.classes)
    }

    pub fn tune(&mut self, stream: &EventStream, index: &NeighborIndex, task: &Task) -> Result<TuneReport> {
        self.tune_with(stream, index, task, |_| {})
    }

    /// Tune the prompt state on `task`, calling `after_backward` with the
    /// registry after every gradient computation (before the optimizer step).
    pub fn tune_with(
        &mut self,
        stream: &EventStream,
        index: &NeighborIndex,
        task: &Task,
        mut after_backward: impl FnMut(&ParamRegistry),
    ) -> Result<TuneReport> {
        let mut report = TuneReport::default();
        if self.state.count_trainable(&self.registry).total == 0 {
            return Ok(report);
        }
        let cfg = self.config.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
        let mut best: Option<(f64, f64, Vec<Tensor>)> = None;
        let mut since_best = 0;

        for step in 0..=cfg.epochs {
            let mut g = Graph::new();
            let (loss, valid) = match task.mode {
                TaskMode::NodeClassification => self.nc_objective(&mut g, stream, index, task)?,
                TaskMode::LinkPrediction => self.lp_objective(&mut g, stream, index, task)?,
            };
            let value = g.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    value,
                    context: format!("prompt tuning step {step}"),
                });
            }
            report.train_losses.push(value);

            if let Some((auc, vloss)) = valid {
                let better = match &best {
                    None => true,
                    Some((b_auc, b_loss, _)) => auc > *b_auc || (auc == *b_auc && vloss < *b_loss),
                };
                if better {
                    best = Some((auc, vloss, self.state.values(&self.registry)));
                    report.best_step = step;
                    report.best_valid_auc = Some(auc);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            if step == cfg.epochs || cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
            g.backward(loss, &mut self.registry)?;
            after_backward(&self.registry);
            adam.step(&mut self.registry);
            report.steps += 1;
        }
        match best {
            Some((_, _, values)) => self.state.set_values(&mut self.registry, &values),
            None => report.best_step = report.steps,
        }
        Ok(report)
    }

    /// Training loss on the support set, plus `(AUC, loss)` on the validation
    /// set when it has both classes.
    fn nc_objective(
        &self,
        g: &mut Graph,
        stream: &EventStream,
        index: &NeighborIndex,
        task: &Task,
    ) -> Result<(Var, Option<(f64, f64)>)> {
        let cfg = &self.config;
        let ns = task.support.len();
        let mut targets = node_targets(&task.support);
        targets.extend(node_targets(&task.validation));
        let h = self
            .encoder
            .embed(g, &self.registry, stream, index, &targets, &self.state.hook())?;
        let h_s = g.gather_rows(h, rows(0..ns))?;
        let labels: Vec<i64> = task.support.iter().map(|s| s.label).collect();
        let protos = prototypes(g, h_s, &labels, &task.classes)?;
        let idx = class_indices(&labels, &task.classes)?;
        let loss = downstream_nc_loss(g, h_s, &idx, protos, cfg.tau, cfg.similarity)?;

        let v_labels: Vec<i64> = task.validation.iter().map(|s| s.label).collect();
        let v_idx = class_indices(&v_labels, &task.classes)?;
        let valid = if task.validation.is_empty() {
            None
        } else {
            let h_v = g.gather_rows(h, rows(ns..targets.len()))?;
            let lp = class_log_probs(g, h_v, protos, cfg.tau, cfg.similarity)?;
            let lp = g.value(lp);
            let probs = lp.map(f64::exp);
            let vloss = -v_idx.iter().enumerate().map(|(r, &k)| lp.get(r, k)).sum::<f64>() / v_idx.len() as f64;
            macro_auc(&probs, &v_idx).map(|auc| (auc, vloss))
        };
        Ok((loss, valid))
    }

    fn lp_objective(
        &self,
        g: &mut Graph,
        stream: &EventStream,
        index: &NeighborIndex,
        task: &Task,
    ) -> Result<(Var, Option<(f64, f64)>)> {
        let cfg = &self.config;
        let tuples = link_tuples(&task.support)?;
        let n = tuples.len();
        let mut targets = Vec::with_capacity(3 * n + 2 * task.validation.len());
        targets.extend(tuples.iter().map(|c| (c.v, c.t)));
        targets.extend(tuples.iter().map(|c| (c.a, c.t)));
        targets.extend(tuples.iter().map(|c| (c.b, c.t)));
        let m = task.validation.len();
        for q in &task.validation {
            if let Instance::Link { src, t, .. } = q.instance {
                targets.push((src, t));
            }
        }
        for q in &task.validation {
            if let Instance::Link { dst, t, .. } = q.instance {
                targets.push((dst, t));
            }
        }
        let h = self
            .encoder
            .embed(g, &self.registry, stream, index, &targets, &self.state.hook())?;
        let h_v = g.gather_rows(h, rows(0..n))?;
        let h_a = g.gather_rows(h, rows(n..2 * n))?;
        let h_b = g.gather_rows(h, rows(2 * n..3 * n))?;
        let loss = pretrain_loss(g, h_v, h_a, h_b, cfg.tau, cfg.similarity)?;

        let valid = if m == 0 || targets.len() != 3 * n + 2 * m {
            None
        } else {
            let hv = g.value(h);
            let scores: Vec<f64> = (0..m)
                .map(|i| cfg.similarity.eval(hv.row(3 * n + i), hv.row(3 * n + m + i)))
                .collect();
            let pos: Vec<f64> = scores
                .iter()
                .zip(&task.validation)
                .filter(|(_, q)| q.label == 1)
                .map(|(s, _)| *s)
                .collect();
            let neg: Vec<f64> = scores
                .iter()
                .zip(&task.validation)
                .filter(|(_, q)| q.label != 1)
                .map(|(s, _)| *s)
                .collect();
            auc_roc(&pos, &neg).ok().map(|auc| {
                let vloss = neg.iter().sum::<f64>() / neg.len() as f64 - pos.iter().sum::<f64>() / pos.len() as f64;
                (auc, vloss)
            })
        };
        Ok((loss, valid))
    }
}

/// Restore `checkpoint`, tune a fresh prompt state on `task`, and return the
/// best-validation model.
pub fn tune_prompts(
    checkpoint: &Checkpoint,
    stream: &EventStream,
    index: &NeighborIndex,
    task: &Task,
    config: &PromptConfig,
    seed: u64,
) -> Result<(TunedModel, TuneReport)> {
    let mut model = TunedModel::new(checkpoint, config, seed)?;
    let report = model.tune(stream, index, task)?;
    Ok((model, report))
}
