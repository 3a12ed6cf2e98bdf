//! Check reverse-mode gradients of a small network against finite differences.
//!
//! `cargo run --example gradcheck`

use dynprompt::diffcore::{check_gradients, Adam, AdamConfig, Graph, ParamRegistry, Tensor};

fn main() -> dynprompt::Result<()> {
    let mut reg = ParamRegistry::new();
    let w = reg.register("w", Tensor::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.1))?;
    let b = reg.register("b", Tensor::vector(vec![0.05, -0.1]))?;
    let x = Tensor::from_fn(4, 3, |r, c| ((r * 3 + c) as f64).sin());

    let loss = |g: &mut Graph, reg: &ParamRegistry| {
        let xv = g.constant(x.clone());
        let (wv, bv) = (g.param(reg, w), g.param(reg, b));
        let h = g.matmul(xv, wv)?;
        let h = g.add_row(h, bv)?;
        let h = g.tanh(h);
        let sq = g.mul(h, h)?;
        Ok(g.mean(sq))
    };

    let report = check_gradients(loss, &mut reg, 1e-6)?;
    println!(
        "checked {} entries, max relative error {:.2e}",
        report.entries_checked, report.max_rel_error
    );

    let mut adam = Adam::new(AdamConfig::with_lr(0.05));
    for step in 0..=100 {
        let mut g = Graph::new();
        let l = loss(&mut g, &reg)?;
        if step % 25 == 0 {
            println!("step {step:>3} loss {:.6}", g.scalar(l)?);
        }
        g.backward(l, &mut reg)?;
        adam.step(&mut reg);
    }
    Ok(())
}
