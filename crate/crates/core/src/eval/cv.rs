//! Stratified fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Fold index per sample. Each class is shuffled and dealt round-robin,
/// starting where the previous class stopped, so per-class counts across
/// folds differ by at most one and fold sizes stay balanced.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut folds = vec![0; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class: format!("#{c}"),
                size: members.len(),
                k,
            });
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64])));
        for (j, &i) in members.iter().enumerate() {
            folds[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(folds)
}

/// `(train, test)` sample indices for fold `f`, both ascending.
pub fn split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}
