//! Generate a planted-pattern interaction stream and inspect its splits.
//!
//! `cargo run --example synth_stream`

use dynprompt::evalbench::{generate_synthetic, SynthConfig};
use dynprompt::eventstore::chronological_split;

fn main() -> dynprompt::Result<()> {
    let cfg = SynthConfig {
        n_events: 5000,
        ..SynthConfig::default()
    };
    let stream = generate_synthetic(&cfg)?;
    let split = chronological_split(&stream)?;
    let positives = stream.events().iter().filter(|e| e.state_label == Some(1)).count();
    println!("events      {}", stream.len());
    println!(
        "nodes       {} ({} users)",
        stream.num_nodes(),
        stream.num_sources().unwrap_or(0)
    );
    println!("positives   {positives}");
    println!("split sizes {:?} (pretrain, tune, valid, test)", split.sizes());
    for e in &stream.events()[..5] {
        println!("  t={:>8.3} {} -> {} label {:?}", e.t, e.src, e.dst, e.state_label);
    }
    Ok(())
}
