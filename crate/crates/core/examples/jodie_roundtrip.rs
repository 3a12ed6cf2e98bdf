//! Write a stream in JODIE CSV format and load it back.
//!
//! `cargo run --example jodie_roundtrip`

use dynprompt::evalbench::{generate_synthetic, SynthConfig};
use dynprompt::eventstore::{load_jodie_csv, write_jodie_csv};

fn main() -> dynprompt::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        n_events: 1000,
        ..SynthConfig::default()
    })?;
    let path = std::env::temp_dir().join("dynprompt-stream.csv");
    write_jodie_csv(&stream, &path)?;
    let loaded = load_jodie_csv(&path)?;
    println!("wrote {} events to {}", stream.len(), path.display());
    println!("loaded {} events, identical: {}", loaded.len(), loaded == stream);
    Ok(())
}
