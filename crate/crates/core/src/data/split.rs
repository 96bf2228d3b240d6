use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Case-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn partition_of(&self, case_id: &str) -> Option<&'static str> {
        if self.train.iter().any(|c| c == case_id) {
            Some("train")
        } else if self.test.iter().any(|c| c == case_id) {
            Some("test")
        } else {
            None
        }
    }
}

/// Shuffles cases with a seeded generator and cuts them into train/test.
///
/// The train count is `round(n * train_fraction)` clamped so that both
/// partitions are non-empty. Partitions are returned sorted.
pub fn make_split(case_ids: &[String], train_fraction: f64, seed: u64) -> Result<SplitManifest> {
    if case_ids.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 cases to split, got {}", case_ids.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut unique = case_ids.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != case_ids.len() {
        return Err(Error::InvalidArgument("case ids are not unique".into()));
    }
    let n = unique.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = unique[..n_train].to_vec();
    let mut test = unique[n_train..].to_vec();
    train.sort();
    test.sort();
    Ok(SplitManifest { train, test, seed })
}
