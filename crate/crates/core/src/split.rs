//! Seeded stratified train/test splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class with a seeded RNG and sends `round(fraction * n_c)`
/// of it, clamped to `1..n_c`, to the training side. Indices come back
/// sorted.
pub fn stratified_split<L: Ord + Clone>(labels: &[L], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return precondition(format!("split fraction must lie in (0, 1), got {fraction}"));
    }
    let mut classes: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        classes.entry(l.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for members in classes.values_mut() {
        if members.len() < 2 {
            return precondition(format!(
                "class containing item {} has a single member and cannot be split",
                members[0]
            ));
        }
        members.shuffle(&mut rng);
        let n_train = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
