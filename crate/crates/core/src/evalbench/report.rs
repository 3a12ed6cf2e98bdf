use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{aggregate, EvalMode, TaskResult, Workload};
use crate::diffcore::{ParamRegistry, Tensor};
use crate::error::{Error, Result};
use crate::eventstore::NodeId;
use crate::prompts::{AblationFlags, PromptConfig, PromptState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub flags: AblationFlags,
    pub trainable: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    /// Runs whose AUC was undefined (single-class or empty query sets).
    pub excluded: usize,
}

fn summarize(results: &[&TaskResult]) -> (Option<f64>, Option<f64>, usize, usize) {
    let aucs: Vec<f64> = results.iter().filter_map(|r| r.auc).collect();
    let excluded = results.len() - aucs.len();
    match aggregate(&aucs) {
        Ok(a) => (Some(a.mean), Some(a.std), a.n, excluded),
        Err(_) => (None, None, 0, excluded),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub config: Value,
    pub variants: Vec<VariantSummary>,
    pub results: Vec<TaskResult>,
}

impl AblationReport {
    pub(crate) fn build(
        work: &Workload,
        variants: &[(String, AblationFlags)],
        config: &PromptConfig,
        results: Vec<TaskResult>,
    ) -> Result<Self> {
        let enc = &work.checkpoint.config;
        let summaries = variants
            .iter()
            .map(|(name, flags)| {
                let cfg = PromptConfig {
                    flags: *flags,
                    ..config.clone()
                };
                let mut reg = ParamRegistry::new();
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                let state = PromptState::init(&mut reg, enc.d_x, enc.d_t, &cfg, &mut rng)?;
                let mine: Vec<&TaskResult> = results.iter().filter(|r| &r.variant == name).collect();
                let (mean, std, n, excluded) = summarize(&mine);
                Ok(VariantSummary {
                    name: name.clone(),
                    flags: *flags,
                    trainable: state.count_trainable(&reg).total,
                    mean,
                    std,
                    n,
                    excluded,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AblationReport {
            config: serde_json::to_value(config)?,
            variants: summaries,
            results,
        })
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// `{config, per_variant: {name: {flags, trainable, mean, std, n, excluded}}}`.
    pub fn to_json(&self, run_config: &Value) -> String {
        let per: Map<String, Value> = self
            .variants
            .iter()
            .map(|v| {
                (
                    v.name.clone(),
                    json!({
                        "flags": v.flags,
                        "trainable": v.trainable,
                        "mean": v.mean,
                        "std": v.std,
                        "n": v.n,
                        "excluded": v.excluded,
                    }),
                )
            })
            .collect();
        let doc = json!({ "config": run_config, "per_variant": per });
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    /// One row per variant, in the order of the ablation matrix.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,node_prompt,time_prompt,ncn,tcn,trainable,mean,std,n,excluded\n");
        for v in &self.variants {
            let f = v.flags;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                v.name,
                f.node_prompt as u8,
                f.time_prompt as u8,
                f.ncn as u8,
                f.tcn as u8,
                v.trainable,
                fmt_opt(v.mean),
                fmt_opt(v.std),
                v.n,
                v.excluded
            );
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Per-run table shared by both report kinds.
pub fn results_csv(results: &[TaskResult]) -> String {
    let mut out = String::from("variant,mode,task,seed_index,seed,auc,n_queries,steps,wall_ms\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.mode.name(),
            r.task,
            r.seed_index,
            r.seed,
            fmt_opt(r.auc),
            r.n_queries,
            r.steps,
            r.wall_ms
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: EvalMode,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneEvalReport {
    pub modes: Vec<ModeSummary>,
    pub results: Vec<TaskResult>,
}

impl TuneEvalReport {
    pub(crate) fn build(modes: &[EvalMode], results: Vec<TaskResult>) -> Result<Self> {
        let modes = modes
            .iter()
            .map(|&mode| {
                let mine: Vec<&TaskResult> = results.iter().filter(|r| r.mode == mode).collect();
                let (mean, std, n, excluded) = summarize(&mine);
                ModeSummary {
                    mode,
                    mean,
                    std,
                    n,
                    excluded,
                }
            })
            .collect();
        Ok(TuneEvalReport { modes, results })
    }

    pub fn mode(&self, mode: EvalMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// `{config, per_mode: {mode: {mean, std, n, excluded}}}`.
    pub fn to_json(&self, run_config: &Value) -> String {
        let per: Map<String, Value> = self
            .modes
            .iter()
            .map(|m| {
                (
                    m.mode.name().to_string(),
                    json!({ "mean": m.mean, "std": m.std, "n": m.n, "excluded": m.excluded }),
                )
            })
            .collect();
        let doc = json!({ "config": run_config, "per_mode": per });
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// `node,label,dim0..dim{h-1}` with one row per embedding.
pub fn write_embeddings_csv(
    path: impl AsRef<Path>,
    nodes: &[(NodeId, Option<i64>)],
    embeddings: &Tensor,
) -> Result<()> {
    if nodes.len() != embeddings.rows() {
        return Err(Error::Shape {
            op: "write_embeddings_csv",
            lhs: embeddings.shape(),
            rhs: (nodes.len(), embeddings.cols()),
        });
    }
    let mut out = String::from("node,label");
    for d in 0..embeddings.cols() {
        let _ = write!(out, ",dim{d}");
    }
    out.push('\n');
    for (r, (node, label)) in nodes.iter().enumerate() {
        let _ = write!(out, "{node},{}", label.map_or_else(String::new, |l| l.to_string()));
        for v in embeddings.row(r) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
