//! Deterministic k-fold partition of shape ids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `ids` with `seed` and cuts them into `folds` contiguous test
/// sets whose sizes differ by at most one. Ids within each list are sorted.
pub fn kfold_split(ids: &[usize], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds == 0 || folds > ids.len() {
        return Err(CliError::config(format!(
            "cannot split {} shapes into {folds} folds",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::config("duplicate shape ids"));
    }
    let mut order = sorted.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / folds, ids.len() % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let len = base + usize::from(k < extra);
        let mut test = order[start..start + len].to_vec();
        test.sort_unstable();
        let train = sorted
            .iter()
            .copied()
            .filter(|id| test.binary_search(id).is_err())
            .collect();
        out.push(Fold { train, test });
        start += len;
    }
    Ok(out)
}

/// The fold at `index`, with a configuration error when out of range.
pub fn fold(ids: &[usize], folds: usize, seed: u64, index: usize) -> Result<Fold> {
    if index >= folds {
        return Err(CliError::config(format!(
            "fold {index} out of range for {folds} folds"
        )));
    }
    Ok(kfold_split(ids, folds, seed)?.swap_remove(index))
}
