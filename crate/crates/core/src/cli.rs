//! Config files and the command-line pipeline.
//!
//! A run is described by one TOML file whose sections mirror [`RunConfig`].
//! Every key is optional:
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! source = "synthetic"          # or "jodie", with `path = "data/stream.csv"`
//! [data.synth]
//! n_events = 20000
//!
//! [encoder]
//! layers = 1
//! k = 20
//!
//! [pretrain]
//! epochs = 20
//!
//! [prompt]
//! alpha = 2
//!
//! [protocol]
//! tasks = 20
//! seeds = 3
//! modes = ["node_classification", "link_transductive", "link_inductive"]
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::encoder::{Checkpoint, EncoderConfig, TimeMode};
use crate::error::{Error, Result};
use crate::evalbench::{
    generate_synthetic, results_csv, run_ablation, run_tune_eval, sample_tasks, write_embeddings_csv, AblationFlags,
    EvalMode, ProtocolConfig, SynthConfig, TaskKey, Workload,
};
use crate::eventstore::{
    chronological_split, load_jodie_csv, write_jodie_csv, EventStream, NeighborIndex, NeighborStrategy, NodeId,
};
use crate::pretrain::{run_pretraining_with, PretrainConfig, Similarity};
use crate::prompts::{PromptConfig, TunedModel};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Jodie,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// JODIE CSV; required when `source = "jodie"`.
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Node feature width; taken from the data when omitted.
    pub d_x: Option<usize>,
    pub d_t: usize,
    pub d_h: usize,
    pub layers: usize,
    pub k: usize,
    pub time_mode: TimeMode,
    pub neighbors: NeighborStrategy,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSection {
            d_x: None,
            d_t: e.d_t,
            d_h: e.d_h,
            layers: e.layers,
            k: e.k,
            time_mode: e.time_mode,
            neighbors: e.neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub similarity: Similarity,
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        PretrainSection {
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            tau: p.tau,
            similarity: p.similarity,
            max_batches_per_epoch: p.max_batches_per_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub tasks: usize,
    pub seeds: usize,
    pub max_queries: Option<usize>,
    /// Modes evaluated by `tune-eval`.
    pub modes: Vec<EvalMode>,
    /// Mode used by `ablate`.
    pub ablation_mode: EvalMode,
    /// Also write `embeddings.csv` for the first node-classification task.
    pub embeddings: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        ProtocolSection {
            tasks: p.tasks,
            seeds: p.seeds,
            max_queries: p.max_queries,
            modes: EvalMode::ALL.to_vec(),
            ablation_mode: EvalMode::NodeClassification,
            embeddings: false,
        }
    }
}

impl ProtocolSection {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            tasks: self.tasks,
            seeds: self.seeds,
            max_queries: self.max_queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the synthetic stream, pre-training, and the per-task seeds.
    pub seed: u64,
    /// Checkpoint read by `tune-eval` and `ablate`; defaults to
    /// `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub pretrain: PretrainSection,
    pub prompt: PromptConfig,
    pub protocol: ProtocolSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Jodie {
            match &self.data.path {
                None => return Err(Error::config("data.path", "required when data.source = \"jodie\"")),
                Some(p) if !p.is_file() => {
                    return Err(Error::config("data.path", format!("{} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        self.synth_config().validate()?;
        self.pretrain_config(self.encoder.d_x.unwrap_or(self.data.synth.d_x), 0)
            .validate()?;
        if self.encoder.d_x == Some(0) {
            return Err(Error::config("encoder.d_x", "must be positive"));
        }
        self.prompt.validate()?;
        self.protocol.protocol().validate()?;
        if self.protocol.modes.is_empty() {
            return Err(Error::config("protocol.modes", "need at least one mode"));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.data.synth.clone()
        }
    }

    pub fn pretrain_config(&self, d_x: usize, d_e: usize) -> PretrainConfig {
        let p = &self.pretrain;
        let e = &self.encoder;
        PretrainConfig {
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            tau: p.tau,
            seed: self.seed,
            similarity: p.similarity,
            max_batches_per_epoch: p.max_batches_per_epoch,
            encoder: EncoderConfig {
                d_x,
                d_t: e.d_t,
                d_h: e.d_h,
                d_e,
                layers: e.layers,
                k: e.k,
                time_mode: e.time_mode,
                neighbors: e.neighbors,
            },
        }
    }

    /// The configured stream: generated, or loaded from JODIE CSV.
    pub fn load_stream(&self) -> Result<EventStream> {
        match self.data.source {
            DataSource::Synthetic => generate_synthetic(&self.synth_config()),
            DataSource::Jodie => {
                let path = self
                    .data
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("data.path", "missing"))?;
                load_jodie_csv(path)
            }
        }
    }

    /// Node feature width for `stream`, checking any explicit setting.
    pub fn resolve_d_x(&self, stream: &EventStream) -> Result<usize> {
        match (self.encoder.d_x, stream.d_x()) {
            (Some(want), Some(have)) if want != have => Err(Error::config(
                "encoder.d_x",
                format!("set to {want} but the data has {have} node features"),
            )),
            (_, Some(have)) => Ok(have),
            (Some(want), None) => Ok(want),
            (None, None) => Ok(EncoderConfig::default().d_x),
        }
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dynprompt",
    version,
    about = "Pre-train a temporal graph encoder and tune dual prompts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic stream as JODIE CSV.
    Synth(CommonArgs),
    /// Pre-train the backbone and save a checkpoint.
    Pretrain(CommonArgs),
    /// Tune prompts per task and evaluate every configured mode.
    TuneEval(CommonArgs),
    /// Run the seven-variant ablation.
    Ablate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for per-task runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Files a command wrote.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

fn prepare(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.data.synth.seed = cfg.seed;
    if args.jobs == 0 {
        return Err(Error::config("--jobs", "must be at least 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

pub fn cmd_synth(args: &CommonArgs) -> Result<Outcome> {
    let cfg = prepare(args)?;
    out_dir(&args.out)?;
    let stream = generate_synthetic(&cfg.synth_config())?;
    let path = args.out.join("synthetic.csv");
    write_jodie_csv(&stream, &path)?;
    let users = stream.num_sources().unwrap_or(0);
    let positives = stream.events().iter().filter(|e| e.state_label == Some(1)).count();
    println!(
        "wrote {} events, {} users, {} items, {} positive labels to {}",
        stream.len(),
        users,
        stream.num_nodes() - users,
        positives,
        path.display()
    );
    let side = args.out.join("synthetic.nodes.csv");
    Ok(Outcome {
        files: vec![path, side],
    })
}

pub fn cmd_pretrain(args: &CommonArgs) -> Result<Outcome> {
    let cfg = prepare(args)?;
    let stream = cfg.load_stream()?;
    let pcfg = cfg.pretrain_config(cfg.resolve_d_x(&stream)?, stream.d_e());
    pcfg.validate()?;
    out_dir(&args.out)?;
    let start = Instant::now();
    let outcome = run_pretraining_with(&stream, &pcfg, |log| {
        println!("epoch {:>3}  loss {:.6}  {} ms", log.epoch, log.mean_loss, log.wall_ms);
    })?;
    let mut files = Vec::new();
    let path = args.out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&path)?;
    files.push(path.clone());
    let mut log = String::new();
    for entry in &outcome.log {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
    }
    write(args.out.join("pretrain_log.jsonl"), &log, &mut files)?;
    println!("saved {} after {:.1?}", path.display(), start.elapsed());
    Ok(Outcome { files })
}

struct Loaded {
    stream: EventStream,
    checkpoint: Checkpoint,
}

fn load_for_tuning(cfg: &RunConfig, out: &Path) -> Result<Loaded> {
    let ckpt_path = cfg.checkpoint_path(out);
    if !ckpt_path.is_file() {
        return Err(Error::config(
            "checkpoint",
            format!("{} does not exist; run `pretrain` first", ckpt_path.display()),
        ));
    }
    let checkpoint = Checkpoint::load(&ckpt_path)?;
    let stream = cfg.load_stream()?;
    Ok(Loaded { stream, checkpoint })
}

pub fn cmd_tune_eval(args: &CommonArgs) -> Result<Outcome> {
    let cfg = prepare(args)?;
    let data = load_for_tuning(&cfg, &args.out)?;
    out_dir(&args.out)?;
    let index = NeighborIndex::build(&data.stream);
    let split = chronological_split(&data.stream)?;
    let work = Workload {
        checkpoint: &data.checkpoint,
        stream: &data.stream,
        index: &index,
        split: &split,
    };
    let report = run_tune_eval(
        &work,
        &cfg.protocol.modes,
        &cfg.protocol.protocol(),
        &cfg.prompt,
        cfg.seed,
        args.jobs,
    )?;
    for m in &report.modes {
        match (m.mean, m.std) {
            (Some(mean), Some(std)) => {
                println!(
                    "{:<20} AUC {:.4} ± {:.4}  (n={}, excluded={})",
                    m.mode.name(),
                    mean,
                    std,
                    m.n,
                    m.excluded
                )
            }
            _ => println!("{:<20} no valid tasks (excluded={})", m.mode.name(), m.excluded),
        }
    }
    let mut files = Vec::new();
    write(
        args.out.join("tune_eval.json"),
        &report.to_json(&config_value(&cfg)),
        &mut files,
    )?;
    write(
        args.out.join("tune_eval_results.csv"),
        &results_csv(&report.results),
        &mut files,
    )?;
    if cfg.protocol.embeddings {
        files.push(dump_embeddings(&cfg, &work, &args.out)?);
    }
    Ok(Outcome { files })
}

/// Embeddings of the first node-classification task's queries under prompts
/// tuned on that task.
fn dump_embeddings(cfg: &RunConfig, work: &Workload, out: &Path) -> Result<PathBuf> {
    let one = ProtocolConfig {
        tasks: 1,
        seeds: 1,
        ..cfg.protocol.protocol()
    };
    let (key, task): (TaskKey, _) = sample_tasks(work, EvalMode::NodeClassification, &one, cfg.seed)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Sampling("no task".to_string()))?;
    let mut model = TunedModel::new(work.checkpoint, &cfg.prompt, key.seed)?;
    model.tune(work.stream, work.index, &task)?;
    let targets: Vec<(NodeId, f64)> = task
        .queries
        .iter()
        .map(|q| (q.instance.anchor(), q.instance.time()))
        .collect();
    let h = model.embed(work.stream, work.index, &targets)?;
    let nodes: Vec<(NodeId, Option<i64>)> = task
        .queries
        .iter()
        .map(|q| (q.instance.anchor(), Some(q.label)))
        .collect();
    let path = out.join("embeddings.csv");
    write_embeddings_csv(&path, &nodes, &h)?;
    Ok(path)
}

pub fn cmd_ablate(args: &CommonArgs) -> Result<Outcome> {
    let cfg = prepare(args)?;
    let data = load_for_tuning(&cfg, &args.out)?;
    out_dir(&args.out)?;
    let index = NeighborIndex::build(&data.stream);
    let split = chronological_split(&data.stream)?;
    let work = Workload {
        checkpoint: &data.checkpoint,
        stream: &data.stream,
        index: &index,
        split: &split,
    };
    let mode = cfg.protocol.ablation_mode;
    let tasks = sample_tasks(&work, mode, &cfg.protocol.protocol(), cfg.seed)?;
    let variants: Vec<(String, AblationFlags)> = AblationFlags::variants()
        .iter()
        .map(|(n, f)| (n.to_string(), *f))
        .collect();
    let report = run_ablation(&work, &tasks, mode, &variants, &cfg.prompt, args.jobs)?;
    println!(
        "{:<10} {:<20} {:>9} {:>8} {:>8}",
        "variant", "components", "trainable", "mean", "std"
    );
    for v in &report.variants {
        println!(
            "{:<10} {:<20} {:>9} {:>8} {:>8}",
            v.name,
            v.flags.label(),
            v.trainable,
            v.mean.map_or("-".to_string(), |m| format!("{m:.4}")),
            v.std.map_or("-".to_string(), |s| format!("{s:.4}")),
        );
    }
    let mut files = Vec::new();
    write(
        args.out.join("ablation.json"),
        &report.to_json(&config_value(&cfg)),
        &mut files,
    )?;
    write(args.out.join("ablation.csv"), &report.to_csv(), &mut files)?;
    write(
        args.out.join("ablation_results.csv"),
        &results_csv(&report.results),
        &mut files,
    )?;
    Ok(Outcome { files })
}

/// Exit code for an error: 1 for configuration problems, 2 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::TuneEval(a) => cmd_tune_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parse `argv`, run the command, and return the process exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
