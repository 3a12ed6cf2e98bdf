use std::ops::Range;

use super::EventStream;
use crate::error::{Error, Result};

/// Chronological 80/1/1/18 partition of an event sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub pretrain: Range<usize>,
    pub tune_pool: Range<usize>,
    pub valid_pool: Range<usize>,
    pub test: Range<usize>,
}

impl SplitIndices {
    pub fn sizes(&self) -> [usize; 4] {
        [
            self.pretrain.len(),
            self.tune_pool.len(),
            self.valid_pool.len(),
            self.test.len(),
        ]
    }
}

/// `round(pct/100 · n)` with halves rounded up, in exact integer arithmetic.
fn percent_of(n: usize, pct: usize) -> usize {
    (n * pct + 50) / 100
}

pub fn split_len(n: usize) -> Result<SplitIndices> {
    if n < 100 {
        return Err(Error::SplitTooSmall(n));
    }
    let (a, b, c) = (percent_of(n, 80), percent_of(n, 81), percent_of(n, 82));
    Ok(SplitIndices {
        pretrain: 0..a,
        tune_pool: a..b,
        valid_pool: b..c,
        test: c..n,
    })
}

pub fn chronological_split(stream: &EventStream) -> Result<SplitIndices> {
    split_len(stream.len())
}
