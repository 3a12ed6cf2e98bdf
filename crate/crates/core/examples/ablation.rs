//! Compare all prompt-component variants on the same node-classification tasks.
//!
//! `cargo run --release --example ablation`

use dynprompt::encoder::EncoderConfig;
use dynprompt::evalbench::{
    generate_synthetic, run_ablation, sample_tasks, AblationFlags, EvalMode, ProtocolConfig, SynthConfig, Workload,
};
use dynprompt::eventstore::{chronological_split, NeighborIndex};
use dynprompt::pretrain::{run_pretraining, PretrainConfig};
use dynprompt::prompts::PromptConfig;

fn main() -> dynprompt::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        n_events: 4000,
        ..SynthConfig::default()
    })?;
    let pcfg = PretrainConfig {
        epochs: 3,
        max_batches_per_epoch: Some(30),
        encoder: EncoderConfig {
            layers: 1,
            k: 10,
            ..EncoderConfig::default()
        },
        ..PretrainConfig::default()
    };
    let checkpoint = run_pretraining(&stream, &pcfg)?.checkpoint;
    let index = NeighborIndex::build(&stream);
    let split = chronological_split(&stream)?;
    let work = Workload {
        checkpoint: &checkpoint,
        stream: &stream,
        index: &index,
        split: &split,
    };
    let protocol = ProtocolConfig {
        tasks: 3,
        seeds: 1,
        max_queries: Some(200),
    };
    let mode = EvalMode::NodeClassification;
    let tasks = sample_tasks(&work, mode, &protocol, 11)?;
    let variants: Vec<(String, AblationFlags)> = AblationFlags::variants()
        .iter()
        .map(|(n, f)| (n.to_string(), *f))
        .collect();
    let config = PromptConfig {
        epochs: 50,
        ..PromptConfig::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = run_ablation(&work, &tasks, mode, &variants, &config, jobs)?;
    print!("{}", report.to_csv());
    Ok(())
}
