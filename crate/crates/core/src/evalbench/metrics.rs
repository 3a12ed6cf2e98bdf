use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann-Whitney statistic over average ranks).
pub fn auc_roc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::EmptyScores("positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyScores("negative scores"));
    }
    if let Some(&bad) = pos.iter().chain(neg).find(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            value: bad,
            context: "auc_roc".to_string(),
        });
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    // Twice the rank sum of positives, so tied (half-integer) ranks stay exact.
    let mut rank_sum2 = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as f64;
        let n_pos = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum2 += twice_avg * n_pos as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let u2 = rank_sum2 - np * (np + 1.0);
    Ok(u2 / 2.0 / (np * nn))
}

/// One-vs-rest AUC per class averaged over classes whose query set has both
/// positives and negatives. `probs` is `n × c`; `labels` holds class indices.
pub fn macro_auc(probs: &Tensor, labels: &[usize]) -> Option<f64> {
    let mut aucs = Vec::new();
    for c in 0..probs.cols() {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (r, &l) in labels.iter().enumerate() {
            if l == c {
                pos.push(probs.get(r, c));
            } else {
                neg.push(probs.get(r, c));
            }
        }
        if let Ok(a) = auc_roc(&pos, &neg) {
            aucs.push(a);
        }
        if probs.cols() == 2 {
            // Both one-vs-rest curves coincide for two classes.
            break;
        }
    }
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptyScores("aggregate"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate { mean, std, n })
}
