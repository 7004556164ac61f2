//! Planted datasets with known cluster structure, used by tests, examples
//! and the acceptance suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::io::{write_features, write_pairs};
use crate::data::{split_bundles, BundleCatalog, Dataset, InteractionMatrix, Modality, ModalityBank, SplitRatio, Vocab};
use crate::error::Result;
use crate::graph::{build_copurchase, threshold_graph, ItemGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub bundles: usize,
    pub min_bundle: usize,
    pub max_bundle: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    /// Standard deviation of per-item noise around unit-variance centroids.
    pub feature_noise: f64,
    /// Fraction of bundles that are also bought together by users.
    pub copurchase_coverage: f64,
    pub users_per_bundle: usize,
    pub mask_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            clusters: 6,
            items_per_cluster: 10,
            bundles: 30,
            min_bundle: 3,
            max_bundle: 5,
            text_dim: 12,
            visual_dim: 8,
            feature_noise: 1.0,
            copurchase_coverage: 0.8,
            users_per_bundle: 2,
            mask_fraction: 0.5,
            seed: 7,
        }
    }
}

/// A split dataset, its `ε = 1` co-purchase graph and the planted cluster of
/// every item.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub dataset: Dataset,
    pub graph: ItemGraph,
    pub clusters: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Items are numbered cluster by cluster; bundles are drawn uniformly inside
/// one cluster (clusters visited round-robin); features are the cluster
/// centroid plus Gaussian noise, stored at `f32` precision.
pub fn planted(cfg: &PlantedConfig) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.clusters * cfg.items_per_cluster;
    let clusters: Vec<usize> = (0..n).map(|i| i / cfg.items_per_cluster).collect();

    let mut features = BTreeMap::new();
    for (m, dim) in [(Modality::Text, cfg.text_dim), (Modality::Visual, cfg.visual_dim)] {
        let centroids = gaussian(&mut rng, cfg.clusters, dim, 1.0);
        let noise = gaussian(&mut rng, n, dim, cfg.feature_noise);
        let f = Array2::from_shape_fn((n, dim), |(i, k)| {
            (centroids[[clusters[i], k]] + noise[[i, k]]) as f32 as f64
        });
        features.insert(m, f);
    }

    let mut bundles = Vec::with_capacity(cfg.bundles);
    for b in 0..cfg.bundles {
        let c = b % cfg.clusters;
        let size = rng.gen_range(cfg.min_bundle..=cfg.max_bundle);
        let mut pool: Vec<usize> = (c * cfg.items_per_cluster..(c + 1) * cfg.items_per_cluster).collect();
        pool.shuffle(&mut rng);
        pool.truncate(size);
        pool.sort_unstable();
        bundles.push(pool);
    }

    let mut order: Vec<usize> = (0..cfg.bundles).collect();
    order.shuffle(&mut rng);
    let covered = (cfg.copurchase_coverage * cfg.bundles as f64).round() as usize;
    let mut users = Vec::new();
    for &b in order.iter().take(covered) {
        for _ in 0..cfg.users_per_bundle {
            users.push(bundles[b].clone());
        }
    }
    if users.is_empty() {
        users.push(Vec::new());
    }

    assemble(
        users,
        bundles,
        features,
        clusters,
        SplitRatio::default(),
        cfg.mask_fraction,
        cfg.seed,
    )
}

/// 12 items in 3 clusters of 4, four 3-item bundles, two users, 5-dim text
/// and 4-dim visual features.
pub fn tiny_fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 12;
    let clusters: Vec<usize> = (0..n).map(|i| i / 4).collect();
    let mut features = BTreeMap::new();
    for (m, dim) in [(Modality::Text, 5), (Modality::Visual, 4)] {
        let centroids = gaussian(&mut rng, 3, dim, 1.0);
        let noise = gaussian(&mut rng, n, dim, 0.3);
        features.insert(
            m,
            Array2::from_shape_fn((n, dim), |(i, k)| (centroids[[clusters[i], k]] + noise[[i, k]]) as f32 as f64),
        );
    }
    let bundles = vec![vec![0, 1, 2], vec![4, 5, 6], vec![8, 9, 10], vec![1, 3, 7]];
    let users = vec![vec![0, 1, 2, 4, 5, 6], vec![8, 9, 10, 11, 3]];
    assemble(users, bundles, features, clusters, SplitRatio::default(), 0.5, 3).expect("tiny fixture is valid")
}

fn assemble(
    users: Vec<Vec<usize>>,
    bundles: Vec<Vec<usize>>,
    features: BTreeMap<Modality, Array2<f64>>,
    clusters: Vec<usize>,
    ratio: SplitRatio,
    mask_fraction: f64,
    seed: u64,
) -> Result<Fixture> {
    let n = clusters.len();
    let item_vocab: Vocab = (0..n).map(|i| format!("i{i:03}")).collect();
    let user_vocab: Vocab = (0..users.len()).map(|u| format!("u{u:03}")).collect();
    let bundle_vocab: Vocab = (0..bundles.len()).map(|b| format!("b{b:03}")).collect();
    let interactions = InteractionMatrix::new(user_vocab, item_vocab, users);
    let catalog = BundleCatalog::new(bundle_vocab, n, bundles)?;
    let catalog = split_bundles(catalog, ratio, mask_fraction, seed)?;
    let graph = threshold_graph(&build_copurchase(&interactions), 1)?;
    Ok(Fixture {
        dataset: Dataset {
            interactions,
            catalog,
            features: ModalityBank::new(features)?,
        },
        graph,
        clusters,
    })
}

/// Raw input files of a dataset, as consumed by `prepare`.
#[derive(Debug, Clone)]
pub struct RawFiles {
    pub interactions: PathBuf,
    pub affiliations: PathBuf,
    pub features: BTreeMap<Modality, PathBuf>,
}

pub fn write_raw(data: &Dataset, dir: &Path) -> Result<RawFiles> {
    let x = &data.interactions;
    let items = &x.item_vocab;
    let files = RawFiles {
        interactions: dir.join("interactions.tsv"),
        affiliations: dir.join("affiliations.tsv"),
        features: data
            .features
            .modalities()
            .map(|m| (m, dir.join(format!("{m}.rmfb"))))
            .collect(),
    };
    write_pairs(
        &files.interactions,
        (0..x.n_users()).flat_map(|u| x.user_items(u).iter().map(move |&i| (x.user_vocab.id(u), items.id(i)))),
    )?;
    let y = &data.catalog;
    write_pairs(
        &files.affiliations,
        (0..y.n_bundles()).flat_map(|b| y.items(b).iter().map(move |&i| (y.bundle_vocab.id(b), items.id(i)))),
    )?;
    for (&m, path) in &files.features {
        write_features(path, items.ids(), data.features.get(m).expect("listed modality"))?;
    }
    Ok(files)
}
