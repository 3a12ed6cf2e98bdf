//! Tune dual prompts on one few-shot node-classification task with the
//! backbone frozen, then score the task's queries.
//!
//! `cargo run --release --example tune_prompts`

use dynprompt::encoder::EncoderConfig;
use dynprompt::evalbench::{
    generate_synthetic, run_node_classification, sample_tasks, EvalMode, ProtocolConfig, SynthConfig, Workload,
};
use dynprompt::eventstore::{chronological_split, NeighborIndex};
use dynprompt::pretrain::{run_pretraining, PretrainConfig};
use dynprompt::prompts::{PromptConfig, TunedModel};

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
        tasks: 1,
        seeds: 1,
        max_queries: Some(300),
    };
    let (key, task) = sample_tasks(&work, EvalMode::NodeClassification, &protocol, 7)?.remove(0);
    println!(
        "task: {} support, {} validation, {} queries",
        task.support.len(),
        task.validation.len(),
        task.queries.len()
    );

    let config = PromptConfig::default();
    let mut model = TunedModel::new(&checkpoint, &config, key.seed)?;
    let before = run_node_classification(&model, &stream, &index, &task)?;
    let report = model.tune(&stream, &index, &task)?;
    let after = run_node_classification(&model, &stream, &index, &task)?;
    println!(
        "tuned {} trainable values for {} steps (best at step {})",
        model.state.count_trainable(&model.registry).total,
        report.steps,
        report.best_step
    );
    println!("query AUC before tuning {:?}", before.auc);
    println!("query AUC after tuning  {:?}", after.auc);
    Ok(())
}
