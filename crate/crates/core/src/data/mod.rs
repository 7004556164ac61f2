//! Canonical in-memory dataset: user–item interactions, bundle–item
//! affiliations with their split and seed/target masks, and per-item
//! modality features.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;
pub mod split;

pub use io::{load_dataset, load_prepared, save_prepared, DatasetPaths};
pub use split::{mask_bundle, split_bundles, SplitRatio};

/// Bidirectional map between external string IDs and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, inserting it at the end when unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        let mut v = Vocab::new();
        for id in iter {
            v.intern(&id);
        }
        v
    }
}

/// Binary user–item matrix `X`, stored as sorted item lists per user.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub user_vocab: Vocab,
    pub item_vocab: Vocab,
    rows: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    /// Builds `X` from per-user item lists; duplicates collapse to one entry.
    pub fn new(user_vocab: Vocab, item_vocab: Vocab, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(user_vocab.len(), rows.len());
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            assert!(r.iter().all(|&i| i < item_vocab.len()));
        }
        InteractionMatrix {
            user_vocab,
            item_vocab,
            rows,
        }
    }

    /// Dense 0/1 rows with anonymous vocabularies, mostly for tests.
    pub fn from_dense(x: &Array2<u8>) -> Self {
        let (u, i) = x.dim();
        let rows = x
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0).map(|(j, _)| j).collect())
            .collect();
        InteractionMatrix::new(
            (0..u).map(|k| format!("u{k}")).collect(),
            (0..i).map(|k| format!("i{k}")).collect(),
            rows,
        )
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }

    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.rows[user]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Array2<u8> {
        let mut x = Array2::zeros((self.n_users(), self.n_items()));
        for (u, r) in self.rows.iter().enumerate() {
            for &i in r {
                x[[u, i]] = 1;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// Partition of a held-out bundle into the observed seed items and the
/// target items to be completed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleMask {
    pub seed: Vec<usize>,
    pub target: Vec<usize>,
}

/// Which members of a bundle an encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberView {
    Full,
    Seed,
}

/// Bundle–item matrix `Y` plus split labels and seed/target masks.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleCatalog {
    pub bundle_vocab: Vocab,
    n_items: usize,
    bundles: Vec<Vec<usize>>,
    split: Vec<Option<Split>>,
    masks: Vec<Option<BundleMask>>,
}

impl BundleCatalog {
    /// Member lists are sorted and deduplicated; every bundle needs at least
    /// two distinct items.
    pub fn new(bundle_vocab: Vocab, n_items: usize, mut bundles: Vec<Vec<usize>>) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::NoBundles);
        }
        assert_eq!(bundle_vocab.len(), bundles.len());
        for (b, items) in bundles.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            if items.len() < 2 {
                return Err(Error::Input(format!(
                    "bundle `{}` has fewer than 2 items",
                    bundle_vocab.id(b)
                )));
            }
            if let Some(&i) = items.iter().find(|&&i| i >= n_items) {
                return Err(Error::Shape(format!("item index {i} >= {n_items}")));
            }
        }
        let n = bundles.len();
        Ok(BundleCatalog {
            bundle_vocab,
            n_items,
            bundles,
            split: vec![None; n],
            masks: vec![None; n],
        })
    }

    /// Anonymous bundle IDs `b0, b1, …`.
    pub fn from_members(n_items: usize, bundles: Vec<Vec<usize>>) -> Result<Self> {
        let vocab = (0..bundles.len()).map(|k| format!("b{k}")).collect();
        BundleCatalog::new(vocab, n_items, bundles)
    }

    pub fn n_bundles(&self) -> usize {
        self.bundles.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn items(&self, bundle: usize) -> &[usize] {
        &self.bundles[bundle]
    }

    pub fn nnz(&self) -> usize {
        self.bundles.iter().map(Vec::len).sum()
    }

    pub fn split_of(&self, bundle: usize) -> Option<Split> {
        self.split[bundle]
    }

    pub fn mask(&self, bundle: usize) -> Option<&BundleMask> {
        self.masks[bundle].as_ref()
    }

    pub fn is_split(&self) -> bool {
        self.split.iter().all(Option::is_some)
    }

    pub fn bundles_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_bundles())
            .filter(|&b| self.split[b] == Some(split))
            .collect()
    }

    /// Members visible under `view`: the full bundle, or only the seed items
    /// of a masked bundle.
    pub fn members(&self, bundle: usize, view: MemberView) -> Result<&[usize]> {
        match view {
            MemberView::Full => Ok(&self.bundles[bundle]),
            MemberView::Seed => self.masks[bundle]
                .as_ref()
                .map(|m| m.seed.as_slice())
                .ok_or_else(|| {
                    Error::Input(format!(
                        "bundle `{}` has no seed/target mask",
                        self.bundle_vocab.id(bundle)
                    ))
                }),
        }
    }

    /// Installs a split and masks; masks must cover exactly the non-train
    /// bundles and partition their members.
    pub fn with_split(
        mut self,
        split: Vec<Split>,
        masks: BTreeMap<usize, BundleMask>,
    ) -> Result<Self> {
        if split.len() != self.n_bundles() {
            return Err(Error::Shape(format!(
                "{} split labels for {} bundles",
                split.len(),
                self.n_bundles()
            )));
        }
        let mut slots = vec![None; self.n_bundles()];
        for (b, m) in masks {
            if b >= self.n_bundles() {
                return Err(Error::Shape(format!("mask for bundle index {b}")));
            }
            let mut all: Vec<usize> = m.seed.iter().chain(&m.target).copied().collect();
            all.sort_unstable();
            let disjoint = all.windows(2).all(|w| w[0] != w[1]);
            if m.seed.is_empty() || m.target.is_empty() || !disjoint || all != self.bundles[b] {
                return Err(Error::Input(format!(
                    "mask of bundle `{}` is not a seed/target partition",
                    self.bundle_vocab.id(b)
                )));
            }
            slots[b] = Some(m);
        }
        for (b, s) in split.iter().enumerate() {
            let needs = *s != Split::Train;
            if needs != slots[b].is_some() {
                return Err(Error::Input(format!(
                    "bundle `{}` ({s}) {} a mask",
                    self.bundle_vocab.id(b),
                    if needs { "lacks" } else { "must not carry" }
                )));
            }
        }
        self.split = split.into_iter().map(Some).collect();
        self.masks = slots;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Text, Modality::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "t" => Ok(Modality::Text),
            "visual" | "v" => Ok(Modality::Visual),
            other => Err(Error::Input(format!("unknown modality `{other}`"))),
        }
    }
}

/// Raw per-item features for each available modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBank {
    features: BTreeMap<Modality, Array2<f64>>,
}

impl ModalityBank {
    pub fn new(features: BTreeMap<Modality, Array2<f64>>) -> Result<Self> {
        let mut rows = None;
        for (m, f) in &features {
            if f.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite(format!("{m} features")));
            }
            match rows {
                None => rows = Some(f.nrows()),
                Some(r) if r != f.nrows() => {
                    return Err(Error::Shape(format!(
                        "{m} features have {} rows, expected {r}",
                        f.nrows()
                    )))
                }
                _ => {}
            }
        }
        Ok(ModalityBank { features })
    }

    pub fn get(&self, m: Modality) -> Option<&Array2<f64>> {
        self.features.get(&m)
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.features.keys().copied()
    }

    pub fn dim(&self, m: Modality) -> Option<usize> {
        self.get(m).map(|f| f.ncols())
    }

    pub fn n_items(&self) -> usize {
        self.features.values().next().map_or(0, |f| f.nrows())
    }
}

/// Summary row in the layout of a dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_bundles: usize,
    pub n_bundle_item_pairs: usize,
    pub n_user_item_pairs: usize,
    pub avg_items_per_bundle: f64,
    pub avg_items_per_user: f64,
    pub density: f64,
}

impl DatasetStats {
    pub fn compute(x: &InteractionMatrix, y: &BundleCatalog) -> Self {
        let n_users = x.n_users();
        let n_items = y.n_items();
        let ui = x.nnz();
        let bi = y.nnz();
        DatasetStats {
            n_users,
            n_items,
            n_bundles: y.n_bundles(),
            n_bundle_item_pairs: bi,
            n_user_item_pairs: ui,
            avg_items_per_bundle: bi as f64 / y.n_bundles() as f64,
            avg_items_per_user: if n_users == 0 { 0.0 } else { ui as f64 / n_users as f64 },
            density: if n_users == 0 || n_items == 0 {
                0.0
            } else {
                ui as f64 / (n_users as f64 * n_items as f64)
            },
        }
    }

    pub fn table_header() -> &'static str {
        "#U\t#I\t#B\t#B-I\t#U-I\tAvg.I/B\tAvg.I/U\tU-I Dens."
    }

    pub fn table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.4}%",
            self.n_users,
            self.n_items,
            self.n_bundles,
            self.n_bundle_item_pairs,
            self.n_user_item_pairs,
            self.avg_items_per_bundle,
            self.avg_items_per_user,
            self.density * 100.0
        )
    }
}

/// Everything a training or evaluation run consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: InteractionMatrix,
    pub catalog: BundleCatalog,
    pub features: ModalityBank,
}

impl Dataset {
    pub fn n_items(&self) -> usize {
        self.catalog.n_items()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::compute(&self.interactions, &self.catalog)
    }

    pub fn item_vocab(&self) -> &Vocab {
        &self.interactions.item_vocab
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_average_is_exact() {
        let x = InteractionMatrix::from_dense(&ndarray::array![[1, 1, 0], [0, 1, 1]]);
        let y = BundleCatalog::from_members(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        let s = DatasetStats::compute(&x, &y);
        assert_eq!(s.avg_items_per_bundle, 2.0);
        assert_eq!(s.n_bundle_item_pairs, 4);
        assert_eq!(s.avg_items_per_user, 2.0);
    }

    #[test]
    fn catalog_rejects_singletons_and_empty() {
        assert!(matches!(
            BundleCatalog::from_members(3, vec![]),
            Err(Error::NoBundles)
        ));
        assert!(BundleCatalog::from_members(3, vec![vec![1, 1]]).is_err());
    }

    #[test]
    fn with_split_validates_masks() {
        let y = BundleCatalog::from_members(4, vec![vec![0, 1], vec![2, 3, 1]]).unwrap();
        let bad = BTreeMap::from([(
            1,
            BundleMask {
                seed: vec![2],
                target: vec![3],
            },
        )]);
        assert!(y.clone().with_split(vec![Split::Train, Split::Test], bad).is_err());
        let good = BTreeMap::from([(
            1,
            BundleMask {
                seed: vec![1, 2],
                target: vec![3],
            },
        )]);
        let y = y.with_split(vec![Split::Train, Split::Test], good).unwrap();
        assert_eq!(y.members(1, MemberView::Seed).unwrap(), &[1, 2]);
        assert!(y.members(0, MemberView::Seed).is_err());
    }

    #[test]
    fn nan_features_rejected() {
        let f = ndarray::array![[1.0, f64::NAN]];
        assert!(ModalityBank::new(BTreeMap::from([(Modality::Text, f)])).is_err());
    }
}
