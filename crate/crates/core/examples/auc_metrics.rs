//! Compute AUC scores and aggregate them across runs.
//!
//! `cargo run --example auc_metrics`

use dynprompt::diffcore::Tensor;
use dynprompt::evalbench::{aggregate, auc_roc, macro_auc};

fn main() -> dynprompt::Result<()> {
    let pos = [0.9, 0.8, 0.55, 0.4];
    let neg = [0.7, 0.3, 0.2, 0.4];
    println!("binary AUC      {:.4}", auc_roc(&pos, &neg)?);

    let probs = Tensor::new(4, 3, vec![0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6, 0.5, 0.3, 0.2])?;
    let labels = [0, 1, 2, 1];
    println!("macro AUC       {:?}", macro_auc(&probs, &labels));

    let runs = [0.71, 0.74, 0.69, 0.77, 0.73];
    let agg = aggregate(&runs)?;
    println!("aggregate       {:.4} ± {:.4} over {} runs", agg.mean, agg.std, agg.n);
    Ok(())
}
