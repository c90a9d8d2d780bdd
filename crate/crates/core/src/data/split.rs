use serde::Serialize;

use crate::error::{invalid, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub test: Vec<String>,
    /// Complement of `test`, in the original id order.
    pub train: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

/// Shuffles `ids` with `seed`, then cuts the shuffled list into `k`
/// contiguous test blocks. The first `n mod k` blocks hold one extra id.
pub fn kfold(ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    let n = ids.len();
    if k < 2 {
        return Err(invalid("kfold", format!("need k >= 2, got {k}")));
    }
    if k > n {
        return Err(invalid("kfold", format!("k = {k} exceeds the number of ids ({n})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut in_test = vec![false; n];
        for &i in &order[start..start + len] {
            in_test[i] = true;
        }
        folds.push(Fold {
            test: order[start..start + len].iter().map(|&i| ids[i].clone()).collect(),
            train: (0..n).filter(|&i| !in_test[i]).map(|i| ids[i].clone()).collect(),
        });
        start += len;
    }
    Ok(FoldSplit { folds })
}
