//! AUC metrics, task runners, the ablation matrix, synthetic data and reports.

mod metrics;
mod report;
mod synth;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{aggregate, auc_roc, macro_auc, Aggregate};
pub use report::{results_csv, write_embeddings_csv, AblationReport, ModeSummary, TuneEvalReport, VariantSummary};
pub use synth::{generate_synthetic, LabelRule, SynthConfig};

pub use crate::prompts::AblationFlags;

use crate::encoder::Checkpoint;
use crate::error::{Error, Result};
use crate::eventstore::{
    sample_task, EventStream, Instance, NeighborIndex, NodeId, Setting, SplitIndices, Task, TaskMode,
};
use crate::prompts::{PromptConfig, TunedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    NodeClassification,
    LinkTransductive,
    LinkInductive,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [
        EvalMode::NodeClassification,
        EvalMode::LinkTransductive,
        EvalMode::LinkInductive,
    ];

    pub fn task_mode(self) -> TaskMode {
        match self {
            EvalMode::NodeClassification => TaskMode::NodeClassification,
            _ => TaskMode::LinkPrediction,
        }
    }

    pub fn setting(self) -> Setting {
        match self {
            EvalMode::LinkInductive => Setting::Inductive,
            _ => Setting::Transductive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::NodeClassification => "node_classification",
            EvalMode::LinkTransductive => "link_transductive",
            EvalMode::LinkInductive => "link_inductive",
        }
    }
}

/// `seed + task_index·10007 + seed_index`.
pub fn task_seed(seed: u64, task_index: usize, seed_index: usize) -> u64 {
    seed.wrapping_add(task_index as u64 * 10007)
        .wrapping_add(seed_index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub task: usize,
    pub seed_index: usize,
    pub seed: u64,
}

/// AUC over one task's queries; `None` when the query set lacks a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub auc: Option<f64>,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub variant: String,
    pub task: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub mode: EvalMode,
    pub auc: Option<f64>,
    pub n_queries: usize,
    pub steps: usize,
    pub wall_ms: u64,
}

/// Embed each distinct `(node, time)` once and return row indices per target.
fn embed_unique(
    model: &TunedModel,
    stream: &EventStream,
    index: &NeighborIndex,
    targets: &[(NodeId, f64)],
) -> Result<(crate::diffcore::Tensor, Vec<usize>)> {
    let mut seen: HashMap<(NodeId, u64), usize> = HashMap::new();
    let mut unique = Vec::new();
    let rows = targets
        .iter()
        .map(|&(v, t)| {
            *seen.entry((v, t.to_bits())).or_insert_with(|| {
                unique.push((v, t));
                unique.len() - 1
            })
        })
        .collect();
    Ok((model.embed(stream, index, &unique)?, rows))
}

/// Score each query node by its softmax probability per class under the
/// prototype template, then take the (macro one-vs-rest) AUC.
pub fn run_node_classification(
    model: &TunedModel,
    stream: &EventStream,
    index: &NeighborIndex,
    task: &Task,
) -> Result<Evaluation> {
    let n = task.queries.len();
    let labels: Vec<usize> = task
        .queries
        .iter()
        .map(|q| {
            task.classes
                .iter()
                .position(|&c| c == q.label)
                .ok_or_else(|| Error::Sampling(format!("query label {} not in task classes", q.label)))
        })
        .collect::<Result<_>>()?;
    if n == 0 {
        return Ok(Evaluation {
            auc: None,
            n_queries: 0,
        });
    }
    let cfg = &model.config;
    let targets: Vec<(NodeId, f64)> = task
        .queries
        .iter()
        .map(|q| (q.instance.anchor(), q.instance.time()))
        .collect();
    let (h, rows) = embed_unique(model, stream, index, &targets)?;
    let probs = if cfg.support_at_query_time {
        let mut out = crate::diffcore::Tensor::zeros(n, task.classes.len());
        for (r, &(_, t)) in targets.iter().enumerate() {
            let protos = model.prototypes(stream, index, task, Some(t))?;
            let one = crate::diffcore::Tensor::new(1, h.cols(), h.row(rows[r]).to_vec())?;
            let p = protos.probabilities(&one, cfg.tau, cfg.similarity)?;
            out.row_mut(r).copy_from_slice(p.row(0));
        }
        out
    } else {
        let protos = model.prototypes(stream, index, task, None)?;
        let ordered = crate::diffcore::Tensor::from_fn(n, h.cols(), |r, c| h.get(rows[r], c));
        protos.probabilities(&ordered, cfg.tau, cfg.similarity)?
    };
    Ok(Evaluation {
        auc: macro_auc(&probs, &labels),
        n_queries: n,
    })
}

/// Score each link query by `sim(h_src, h_dst)` at the query time.
pub fn run_link_prediction(
    model: &TunedModel,
    stream: &EventStream,
    index: &NeighborIndex,
    task: &Task,
) -> Result<Evaluation> {
    let mut targets = Vec::with_capacity(2 * task.queries.len());
    for q in &task.queries {
        match q.instance {
            Instance::Link { src, dst, t } => targets.extend([(src, t), (dst, t)]),
            Instance::Node { .. } => return Err(Error::Sampling("node query in a link-prediction task".to_string())),
        }
    }
    let n = task.queries.len();
    if n == 0 {
        return Ok(Evaluation {
            auc: None,
            n_queries: 0,
        });
    }
    let (h, rows) = embed_unique(model, stream, index, &targets)?;
    let sim = model.config.similarity;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, q) in task.queries.iter().enumerate() {
        let s = sim.eval(h.row(rows[2 * i]), h.row(rows[2 * i + 1]));
        if q.label == 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    Ok(Evaluation {
        auc: auc_roc(&pos, &neg).ok(),
        n_queries: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub tasks: usize,
    pub seeds: usize,
    /// Keep at most this many queries per task (a seeded subset); `None` keeps all.
    pub max_queries: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            tasks: 20,
            seeds: 3,
            max_queries: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::config("tasks", "must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if self.max_queries == Some(0) {
            return Err(Error::config("max_queries", "must be at least 1"));
        }
        Ok(())
    }
}

/// Shared, read-only inputs of every task run.
#[derive(Debug, Clone, Copy)]
pub struct Workload<'a> {
    pub checkpoint: &'a Checkpoint,
    pub stream: &'a EventStream,
    pub index: &'a NeighborIndex,
    pub split: &'a SplitIndices,
}

fn subsample_queries(task: &mut Task, max: usize, rng: &mut ChaCha8Rng) {
    // Link queries come in (positive, negative) pairs; keep pairs together.
    let unit = if task.mode == TaskMode::LinkPrediction { 2 } else { 1 };
    let groups = task.queries.len() / unit;
    let keep = (max / unit).max(1);
    if groups <= keep {
        return;
    }
    let mut picked = sample(rng, groups, keep).into_vec();
    picked.sort_unstable();
    task.queries = picked
        .into_iter()
        .flat_map(|g| task.queries[g * unit..(g + 1) * unit].to_vec())
        .collect();
}

/// Sample `tasks × seeds` tasks, each from its own derived seed.
pub fn sample_tasks(
    work: &Workload,
    mode: EvalMode,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<Vec<(TaskKey, Task)>> {
    protocol.validate()?;
    let mut out = Vec::with_capacity(protocol.tasks * protocol.seeds);
    for task in 0..protocol.tasks {
        for seed_index in 0..protocol.seeds {
            let s = task_seed(seed, task, seed_index);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut t = sample_task(
                work.stream,
                work.index,
                work.split,
                mode.task_mode(),
                mode.setting(),
                &mut rng,
            )?;
            if let Some(max) = protocol.max_queries {
                subsample_queries(&mut t, max, &mut rng);
            }
            out.push((
                TaskKey {
                    task,
                    seed_index,
                    seed: s,
                },
                t,
            ));
        }
    }
    Ok(out)
}

/// Tune a fresh prompt state on `task` and evaluate it on the task's queries.
pub fn tune_and_evaluate(
    work: &Workload,
    key: TaskKey,
    task: &Task,
    mode: EvalMode,
    variant: &str,
    config: &PromptConfig,
) -> Result<TaskResult> {
    let start = Instant::now();
    let mut model = TunedModel::new(work.checkpoint, config, key.seed)?;
    let report = model.tune(work.stream, work.index, task)?;
    let eval = match mode.task_mode() {
        TaskMode::NodeClassification => run_node_classification(&model, work.stream, work.index, task)?,
        TaskMode::LinkPrediction => run_link_prediction(&model, work.stream, work.index, task)?,
    };
    Ok(TaskResult {
        variant: variant.to_string(),
        task: key.task,
        seed_index: key.seed_index,
        seed: key.seed,
        mode,
        auc: eval.auc,
        n_queries: eval.n_queries,
        steps: report.steps,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Map `f` over `items` on a pool of `jobs` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Tune and evaluate every variant on the same tasks.
pub fn run_ablation(
    work: &Workload,
    tasks: &[(TaskKey, Task)],
    mode: EvalMode,
    variants: &[(String, AblationFlags)],
    config: &PromptConfig,
    jobs: usize,
) -> Result<AblationReport> {
    let runs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..tasks.len()).map(move |t| (v, t)))
        .collect();
    let results = parallel_map(jobs, &runs, |&(v, t)| {
        let (name, flags) = &variants[v];
        let cfg = PromptConfig {
            flags: *flags,
            ..config.clone()
        };
        let (key, task) = &tasks[t];
        tune_and_evaluate(work, *key, task, mode, name, &cfg)
    })?;
    AblationReport::build(work, variants, config, results)
}

/// Tune the configured variant per task and evaluate every mode in `modes`.
pub fn run_tune_eval(
    work: &Workload,
    modes: &[EvalMode],
    protocol: &ProtocolConfig,
    config: &PromptConfig,
    seed: u64,
    jobs: usize,
) -> Result<TuneEvalReport> {
    let mut runs = Vec::new();
    for &mode in modes {
        for (key, task) in sample_tasks(work, mode, protocol, seed)? {
            runs.push((mode, key, task));
        }
    }
    let label = config.flags.label();
    let results = parallel_map(jobs, &runs, |(mode, key, task)| {
        tune_and_evaluate(work, *key, task, *mode, &label, config)
    })?;
    TuneEvalReport::build(modes, results)
}

#[cfg(test)]
mod tests;
