use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BundleCatalog, BundleMask, Split};
use crate::error::{Error, Result};

/// Train/valid/test proportions. Each component must be positive and the
/// three must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatio {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!(
                "split ratio components must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratio {parts:?} does not sum to 1")));
        }
        Ok(())
    }

    /// Per-class bundle counts for `n` bundles: valid and test are rounded
    /// (at least one each), train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let valid = ((self.valid * n as f64).round() as usize).max(1);
        let test = ((self.test * n as f64).round() as usize).max(1);
        (n - valid - test, valid, test)
    }
}

/// Assigns every bundle to train/valid/test and masks the held-out bundles.
/// Deterministic in `rng_seed`.
pub fn split_bundles(
    catalog: BundleCatalog,
    ratio: SplitRatio,
    mask_fraction: f64,
    rng_seed: u64,
) -> Result<BundleCatalog> {
    ratio.validate()?;
    let n = catalog.n_bundles();
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 bundles to split, got {n}")));
    }
    let (n_train, n_valid, _) = ratio.counts(n);
    if n_train == 0 {
        return Err(Error::Input(format!("ratio leaves no training bundles for {n} bundles")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![Split::Train; n];
    for (pos, &b) in order.iter().enumerate() {
        labels[b] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    let mut masks = BTreeMap::new();
    for (b, &label) in labels.iter().enumerate() {
        if label != Split::Train {
            let (seed, target) = mask_bundle(catalog.items(b), mask_fraction, rng.gen())?;
            masks.insert(b, BundleMask { seed, target });
        }
    }
    catalog.with_split(labels, masks)
}

/// Number of targets drawn from a bundle of `size` items.
pub fn target_count(size: usize, mask_fraction: f64) -> usize {
    ((mask_fraction * size as f64).round() as usize)
        .max(1)
        .min(size.saturating_sub(1))
}

/// Randomly splits a bundle into (seed, target) sets, both sorted and
/// non-empty.
pub fn mask_bundle(
    bundle_items: &[usize],
    mask_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(mask_fraction > 0.0 && mask_fraction < 1.0) {
        return Err(Error::Config(format!(
            "mask_fraction must lie in (0, 1), got {mask_fraction}"
        )));
    }
    if bundle_items.len() < 2 {
        return Err(Error::Input(format!(
            "cannot mask a bundle of {} item(s)",
            bundle_items.len()
        )));
    }
    let k = target_count(bundle_items.len(), mask_fraction);
    let mut shuffled = bundle_items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut target = shuffled[..k].to_vec();
    let mut seed = shuffled[k..].to_vec();
    target.sort_unstable();
    seed.sort_unstable();
    Ok((seed, target))
}
