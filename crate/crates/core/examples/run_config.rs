//! Parse and validate a run configuration, and derive the stage configs from it.
//!
//! `cargo run --example run_config`

use dynprompt::cli::RunConfig;
use dynprompt::prompts::closed_form_count;

const TEXT: &str = r#"
seed = 3

[data.synth]
n_events = 3000

[encoder]
layers = 2
k = 15

[prompt]
alpha = 4

[protocol]
tasks = 10
modes = ["node_classification", "link_inductive"]
"#;

fn main() -> dynprompt::Result<()> {
    let cfg = RunConfig::from_toml(TEXT)?;
    cfg.validate()?;
    let stream = cfg.load_stream()?;
    let d_x = cfg.resolve_d_x(&stream)?;
    let pre = cfg.pretrain_config(d_x, stream.d_e());
    println!("stream: {} events, d_x {d_x}", stream.len());
    println!("encoder: {:?}", pre.encoder);
    println!(
        "prompt parameters at alpha {}: {}",
        cfg.prompt.alpha,
        closed_form_count(
            d_x,
            pre.encoder.d_t,
            cfg.prompt.hidden_for(pre.encoder.d_t),
            cfg.prompt.hidden_for(d_x)
        )
    );

    match RunConfig::from_toml("[prompt]\nalpha = 0\n").and_then(|c| c.validate()) {
        Ok(()) => println!("unexpectedly valid"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
