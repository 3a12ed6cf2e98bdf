//! Pre-train the temporal attention backbone on a synthetic stream and save it.
//!
//! `cargo run --release --example pretrain_backbone`

use dynprompt::encoder::EncoderConfig;
use dynprompt::evalbench::{generate_synthetic, SynthConfig};
use dynprompt::pretrain::{run_pretraining_with, PretrainConfig};

fn main() -> dynprompt::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        n_events: 3000,
        ..SynthConfig::default()
    })?;
    let cfg = PretrainConfig {
        epochs: 5,
        max_batches_per_epoch: Some(30),
        encoder: EncoderConfig {
            layers: 1,
            k: 10,
            ..EncoderConfig::default()
        },
        ..PretrainConfig::default()
    };
    let outcome = run_pretraining_with(&stream, &cfg, |log| {
        println!("epoch {} loss {:.4} ({} ms)", log.epoch, log.mean_loss, log.wall_ms);
    })?;
    let path = std::env::temp_dir().join("dynprompt-backbone.json");
    outcome.checkpoint.save(&path)?;
    println!("checkpoint saved to {}", path.display());
    Ok(())
}
