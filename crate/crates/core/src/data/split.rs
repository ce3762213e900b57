use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::scenario::ColdMaps;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train_users: BTreeSet<u64>,
    pub test_users: BTreeSet<u64>,
    /// Filled by [`super::label_scenarios`].
    pub cold: ColdMaps,
}

/// Seeded shuffle of the (sorted, de-duplicated) ids, then the first
/// `round(ratio · n)` go to training.
pub fn split_users(user_ids: &[u64], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut ids: Vec<u64> = user_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.is_empty() {
        return Err(Error::Config("cannot split an empty user set".into()));
    }
    Rng::new(seed).shuffle(&mut ids);
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let test = ids.split_off(n_train);
    Ok(DatasetSplit {
        train_users: ids.into_iter().collect(),
        test_users: test.into_iter().collect(),
        cold: ColdMaps::default(),
    })
}
