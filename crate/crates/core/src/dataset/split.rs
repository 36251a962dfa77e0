use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Positions of each piece's records in the input dataset.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded shuffle, then a train/validation/test cut.
///
/// Validation and test receive `⌊ratio·N⌋` records each; the remainder goes
/// to train. Records keep their shuffled order within each piece.
pub fn split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive: {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // the epsilon keeps e.g. 0.29·100 from flooring to 28
    let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios[2] * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;

    Ok(Splits {
        train: ds.subset(&order[..n_train]),
        validation: ds.subset(&order[n_train..n_train + n_val]),
        test: ds.subset(&order[n_train + n_val..]),
        train_indices: order[..n_train].to_vec(),
        validation_indices: order[n_train..n_train + n_val].to_vec(),
        test_indices: order[n_train + n_val..].to_vec(),
    })
}
