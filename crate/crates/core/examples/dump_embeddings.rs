//! Embed nodes with a pre-trained backbone at chosen times and write them as CSV.
//!
//! `cargo run --release --example dump_embeddings`

use dynprompt::encoder::EncoderConfig;
use dynprompt::evalbench::{generate_synthetic, write_embeddings_csv, SynthConfig};
use dynprompt::eventstore::{NeighborIndex, NodeId};
use dynprompt::pretrain::{run_pretraining, PretrainConfig};
use dynprompt::prompts::{PromptConfig, TunedModel};

fn main() -> dynprompt::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        n_events: 2000,
        ..SynthConfig::default()
    })?;
    let pcfg = PretrainConfig {
        epochs: 2,
        max_batches_per_epoch: Some(20),
        encoder: EncoderConfig {
            layers: 1,
            k: 10,
            ..EncoderConfig::default()
        },
        ..PretrainConfig::default()
    };
    let checkpoint = run_pretraining(&stream, &pcfg)?.checkpoint;
    let index = NeighborIndex::build(&stream);
    // A fresh prompt state is the identity, so these are plain backbone embeddings.
    let model = TunedModel::new(&checkpoint, &PromptConfig::default(), 0)?;

    let last = stream.events().last().map_or(0.0, |e| e.t);
    let events = &stream.events()[stream.len() - 20..];
    let targets: Vec<(NodeId, f64)> = events.iter().map(|e| (e.src, last)).collect();
    let nodes: Vec<(NodeId, Option<i64>)> = events.iter().map(|e| (e.src, e.state_label)).collect();
    let h = model.embed(&stream, &index, &targets)?;

    let path = std::env::temp_dir().join("dynprompt-embeddings.csv");
    write_embeddings_csv(&path, &nodes, &h)?;
    println!("wrote {} x {} embeddings to {}", h.rows(), h.cols(), path.display());
    Ok(())
}
