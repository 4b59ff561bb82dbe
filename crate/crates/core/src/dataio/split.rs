//! Seeded train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `0..n` with `seed` and cuts it into train, val, test.
/// Val and test sizes are `floor(n * fraction)`; train takes the remainder.
/// A partition may be empty only when its fraction is zero.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices, DataError> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!(
            "split fractions ({tr}, {va}, {te}) must lie in [0, 1] and sum to 1"
        )));
    }
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;
    for (name, size, frac) in [("train", n_train, tr), ("val", n_val, va), ("test", n_test, te)] {
        if size == 0 && frac > 0.0 {
            return Err(DataError::Invalid(format!(
                "{n} samples leave the {name} partition empty at fraction {frac}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
        seed,
    })
}

/// Moves `floor(len * fraction)` seeded-random entries of `indices` into a
/// second list, keeping at least one entry in each. Returns (rest, carved).
pub fn carve(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let k = (indices.len() as f64 * fraction).floor() as usize;
    if !(0.0..1.0).contains(&fraction) || k == 0 || k >= indices.len() {
        return Err(DataError::Invalid(format!(
            "cannot carve {fraction} of {} indices into two non-empty parts",
            indices.len()
        )));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let carved = order.split_off(order.len() - k);
    Ok((order, carved))
}
