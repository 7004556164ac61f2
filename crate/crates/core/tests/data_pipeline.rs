use std::collections::BTreeSet;

use bundlekit::data::io::{load_dataset, load_prepared, save_prepared, DatasetPaths};
use bundlekit::data::split::target_count;
use bundlekit::data::{split_bundles, BundleCatalog, MemberView, Split, SplitRatio};
use bundlekit::synthetic::{planted, write_raw, PlantedConfig};
use proptest::prelude::*;

#[test]
fn raw_files_prepare_and_reload_bit_exact() {
    let fx = planted(&PlantedConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let raw = write_raw(&fx.dataset, dir.path()).unwrap();
    let loaded = load_dataset(&raw.interactions, &raw.affiliations, &raw.features).unwrap();
    assert_eq!(loaded.interactions, fx.dataset.interactions);
    assert_eq!(loaded.features, fx.dataset.features);
    assert_eq!(loaded.stats(), fx.dataset.stats());

    let store = DatasetPaths::new(dir.path().join("store"));
    std::fs::create_dir_all(&store.root).unwrap();
    save_prepared(&store, &fx.dataset).unwrap();
    let back = load_prepared(&store).unwrap();
    assert_eq!(back, fx.dataset);
    assert_eq!(back.item_vocab().ids(), fx.dataset.item_vocab().ids());
}

#[test]
fn held_out_masks_reconstruct_bundles() {
    let fx = planted(&PlantedConfig::default()).unwrap();
    let c = &fx.dataset.catalog;
    let mut seen = BTreeSet::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        for b in c.bundles_in(split) {
            assert!(seen.insert(b), "bundle {b} in two splits");
            if split != Split::Train {
                let seed = c.members(b, MemberView::Seed).unwrap();
                let target = &c.mask(b).unwrap().target;
                assert!(!seed.is_empty() && !target.is_empty());
                let mut union: Vec<usize> = seed.iter().chain(target).copied().collect();
                union.sort_unstable();
                assert_eq!(union, c.items(b));
            }
        }
    }
    assert_eq!(seen.len(), c.n_bundles());
}

fn catalog(sizes: &[usize]) -> BundleCatalog {
    let bundles = sizes.iter().enumerate().map(|(b, &s)| (b..b + s).collect()).collect();
    BundleCatalog::from_members(sizes.len() + 10, bundles).unwrap()
}

proptest! {
    #[test]
    fn split_is_partition_within_ratio(
        sizes in proptest::collection::vec(2usize..8, 3..80),
        seed in any::<u64>(),
        fraction in 0.05f64..0.95,
    ) {
        let n = sizes.len();
        let ratio = SplitRatio::default();
        let c = split_bundles(catalog(&sizes), ratio, fraction, seed).unwrap();
        let counts = [Split::Train, Split::Valid, Split::Test].map(|s| c.bundles_in(s).len());
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        if n > 3 {
            for (got, share) in counts.iter().zip([ratio.train, ratio.valid, ratio.test]) {
                prop_assert!((*got as f64 - share * n as f64).abs() <= 1.0 + 1e-9, "{counts:?}");
            }
        }
        for b in c.bundles_in(Split::Valid).into_iter().chain(c.bundles_in(Split::Test)) {
            let m = c.mask(b).unwrap();
            prop_assert_eq!(m.target.len(), target_count(c.items(b).len(), fraction));
            prop_assert!(!m.seed.is_empty());
        }
        let again = split_bundles(catalog(&sizes), ratio, fraction, seed).unwrap();
        prop_assert_eq!(again, c);
    }
}
