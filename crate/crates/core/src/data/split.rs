use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use ssgan_tensor::Prng;

use crate::error::{Error, Result};

/// Image-level partition into labeled, unlabeled and held-out ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub labeled_train: Vec<String>,
    pub unlabeled_train: Vec<String>,
    pub test: Vec<String>,
    pub labeled_fraction: f64,
    pub seed: u64,
}

/// Round half up, never below 1.
pub fn labeled_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, total)
}

/// Shuffles `ids` by `seed`, carves the test pool first, then labels
/// `max(1, round(fraction * remaining))` of the rest.
pub fn make_split(ids: &[String], labeled_fraction: f64, test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::Config(format!("labeled_fraction {labeled_fraction} outside (0, 1]")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut sorted: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if sorted.len() != ids.len() {
        return Err(Error::Data("duplicate image ids".into()));
    }
    if sorted.len() < 3 {
        return Err(Error::Data(format!("need at least 3 images to split, got {}", sorted.len())));
    }
    Prng::new(seed).shuffle(&mut sorted);
    let n = sorted.len();
    let n_test = labeled_count(test_fraction, n).min(n - 1);
    let train = sorted.split_off(n_test);
    let test = sorted;
    let n_labeled = labeled_count(labeled_fraction, train.len());
    let mut labeled_train = train;
    let unlabeled_train = labeled_train.split_off(n_labeled);
    Ok(DatasetSplit {
        labeled_train,
        unlabeled_train,
        test,
        labeled_fraction,
        seed,
    })
}

impl DatasetSplit {
    /// Checks disjointness and that every id is known.
    pub fn validate(&self, known: &BTreeSet<String>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.labeled_train.iter().chain(&self.unlabeled_train).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Data(format!("split lists `{id}` twice")));
            }
            if !known.contains(id) {
                return Err(Error::Data(format!("split references unknown image `{id}`")));
            }
        }
        if self.labeled_train.is_empty() {
            return Err(Error::Data("split has no labeled images".into()));
        }
        if self.test.is_empty() {
            return Err(Error::Data("split has no test images".into()));
        }
        Ok(())
    }

    /// Same test pool, relabeled at `fraction`. The training ids are taken in
    /// the seed's shuffle order, so for a split made by [`make_split`] the
    /// labeled sets at different fractions are nested and the split's own
    /// fraction reproduces it exactly.
    pub fn with_labeled_fraction(&self, fraction: f64) -> Result<DatasetSplit> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("labeled_fraction {fraction} outside (0, 1]")));
        }
        let mut all: Vec<String> = self.train_ids().chain(&self.test).cloned().collect::<BTreeSet<_>>().into_iter().collect();
        Prng::new(self.seed).shuffle(&mut all);
        let test: BTreeSet<&String> = self.test.iter().collect();
        let mut labeled_train: Vec<String> = all.iter().filter(|id| !test.contains(id)).cloned().collect();
        if labeled_train.is_empty() {
            return Err(Error::Data("split has no training images".into()));
        }
        let unlabeled_train = labeled_train.split_off(labeled_count(fraction, labeled_train.len()));
        Ok(DatasetSplit {
            labeled_train,
            unlabeled_train,
            test: self.test.clone(),
            labeled_fraction: fraction,
            seed: self.seed,
        })
    }

    pub fn train_ids(&self) -> impl Iterator<Item = &String> {
        self.labeled_train.iter().chain(&self.unlabeled_train)
    }
}
