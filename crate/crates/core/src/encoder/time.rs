use std::rc::Rc;

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::Result;

/// `(1/√d)·[cos(ω₁t), sin(ω₁t), …, cos(ω_{d/2}t), sin(ω_{d/2}t)]` with `d = 2·|ω|`.
pub fn time_encode(omega: &[f64], t: f64) -> Vec<f64> {
    let scale = 1.0 / ((2 * omega.len()) as f64).sqrt();
    omega
        .iter()
        .flat_map(|w| [(w * t).cos() * scale, (w * t).sin() * scale])
        .collect()
}

/// Batched, differentiable time encoding: one row per entry of `times`.
pub fn time_features(g: &mut Graph, omega: Var, times: &[f64]) -> Result<Var> {
    let half = g.shape(omega).1;
    let d_t = 2 * half;
    let t = g.constant(Tensor::new(times.len(), 1, times.to_vec())?);
    let angles = g.matmul(t, omega)?;
    let c = g.cos(angles);
    let s = g.sin(angles);
    let both = g.concat(&[c, s])?;
    // [c1..cm, s1..sm] -> [c1, s1, c2, s2, ...]
    let perm: Rc<[usize]> = (0..d_t)
        .map(|j| if j % 2 == 0 { j / 2 } else { half + j / 2 })
        .collect();
    let inter = g.select_cols(both, perm)?;
    Ok(g.scale(inter, 1.0 / (d_t as f64).sqrt()))
}
