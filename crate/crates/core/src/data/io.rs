//! Text and binary file formats for the raw inputs and the prepared store.
//!
//! * interactions / affiliations: `left_id<TAB>item_id` per line
//! * features: `RMFB`, `u64` rows, `u64` cols (little endian), then
//!   `rows × cols` little-endian `f32` row-major; item IDs for each row live
//!   in a sidecar text file `<feature path>.ids`
//! * split manifest: `bundle_id<TAB>{train|valid|test}`
//! * masks: `bundle_id<TAB>item_id<TAB>{seed|target}`

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;

use super::{
    BundleCatalog, BundleMask, Dataset, InteractionMatrix, Modality, ModalityBank, Split, Vocab,
};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"RMFB";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Tab-separated records with a fixed field count. Blank lines are skipped;
/// line numbers are 1-based.
pub fn read_tsv(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if parts.len() != fields || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected {fields} non-empty tab-separated fields"),
            ));
        }
        out.push((n + 1, parts));
    }
    Ok(out)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Reads a feature file and its ID sidecar.
pub fn read_features(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = BufReader::new(open(path)?);
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|_| Error::parse(path, 0, "truncated feature header"))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected RMFB"));
    }
    let rows = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != rows * cols * 4 {
        return Err(Error::Shape(format!(
            "{}: header declares {rows}x{cols} floats but body holds {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("{} contains NaN", path.display())));
    }
    let ids_path = sidecar(path);
    let ids: Vec<String> = BufReader::new(open(&ids_path)?)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&ids_path, e))?
        .into_iter()
        .map(|l| l.trim_end_matches('\r').to_owned())
        .filter(|l| !l.is_empty())
        .collect();
    if ids.len() != rows {
        return Err(Error::Shape(format!(
            "{}: header declares {rows} rows but sidecar lists {} ids",
            path.display(),
            ids.len()
        )));
    }
    let m = Array2::from_shape_vec((rows, cols), data).expect("checked length");
    Ok((ids, m))
}

pub fn write_features(path: &Path, ids: &[String], features: &Array2<f64>) -> Result<()> {
    assert_eq!(ids.len(), features.nrows());
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(features.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(features.ncols() as u64).to_le_bytes()).map_err(io)?;
    for v in features.iter() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let ids_path = sidecar(path);
    let mut s = create(&ids_path)?;
    for id in ids {
        writeln!(s, "{id}").map_err(|e| Error::io(&ids_path, e))?;
    }
    s.flush().map_err(|e| Error::io(&ids_path, e))
}

/// Loads the three raw inputs into one canonical dataset sharing a single
/// item vocabulary.
///
/// The vocabulary follows the row order of the first modality's sidecar (in
/// `text`, `visual` order). Every item referenced by interactions or
/// affiliations must have a feature row in every modality; items that only
/// appear in the features are kept as cold candidates. Bundles with fewer
/// than two distinct items are dropped with a warning.
pub fn load_dataset(
    interactions_path: &Path,
    affiliations_path: &Path,
    feature_paths: &BTreeMap<Modality, PathBuf>,
) -> Result<Dataset> {
    if feature_paths.is_empty() {
        return Err(Error::Config("at least one modality feature file is required".into()));
    }
    let mut item_vocab: Option<Vocab> = None;
    let mut features = BTreeMap::new();
    for (&m, path) in feature_paths {
        let (ids, raw) = read_features(path)?;
        match &item_vocab {
            None => {
                let vocab: Vocab = ids.iter().cloned().collect();
                if vocab.len() != ids.len() {
                    return Err(Error::Input(format!(
                        "{}: duplicate item ids in sidecar",
                        path.display()
                    )));
                }
                item_vocab = Some(vocab);
                features.insert(m, raw);
            }
            Some(vocab) => {
                if ids.len() != vocab.len() {
                    return Err(Error::Shape(format!(
                        "{m} features cover {} items, expected {}",
                        ids.len(),
                        vocab.len()
                    )));
                }
                let mut ordered = Array2::zeros((vocab.len(), raw.ncols()));
                let mut seen = vec![false; vocab.len()];
                for (row, id) in ids.iter().enumerate() {
                    let i = vocab.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))?;
                    seen[i] = true;
                    ordered.row_mut(i).assign(&raw.row(row));
                }
                if let Some(i) = seen.iter().position(|s| !s) {
                    return Err(Error::Input(format!(
                        "item `{}` has no {m} features",
                        vocab.id(i)
                    )));
                }
                features.insert(m, ordered);
            }
        }
    }
    let item_vocab = item_vocab.expect("non-empty feature map");
    let lookup = |id: &str| item_vocab.get(id).ok_or_else(|| Error::UnknownItem(id.to_owned()));

    let mut user_vocab = Vocab::new();
    let mut user_rows: Vec<Vec<usize>> = Vec::new();
    for (_, rec) in read_tsv(interactions_path, 2)? {
        let u = user_vocab.intern(&rec[0]);
        if u == user_rows.len() {
            user_rows.push(Vec::new());
        }
        user_rows[u].push(lookup(&rec[1])?);
    }

    let mut bundle_vocab = Vocab::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (_, rec) in read_tsv(affiliations_path, 2)? {
        let b = bundle_vocab.intern(&rec[0]);
        if b == members.len() {
            members.push(Vec::new());
        }
        members[b].push(lookup(&rec[1])?);
    }
    let mut kept_vocab = Vocab::new();
    let mut kept = Vec::new();
    for (b, mut items) in members.into_iter().enumerate() {
        items.sort_unstable();
        items.dedup();
        if items.len() < 2 {
            warn!("dropping bundle `{}` with a single item", bundle_vocab.id(b));
            continue;
        }
        kept_vocab.intern(bundle_vocab.id(b));
        kept.push(items);
    }
    if kept.is_empty() {
        return Err(Error::NoBundles);
    }

    let n_items = item_vocab.len();
    let interactions = InteractionMatrix::new(user_vocab, item_vocab, user_rows);
    let catalog = BundleCatalog::new(kept_vocab, n_items, kept)?;
    let features = ModalityBank::new(features)?;
    Ok(Dataset {
        interactions,
        catalog,
        features,
    })
}

/// File layout of a prepared dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetPaths { root: root.into() }
    }

    pub fn interactions(&self) -> PathBuf {
        self.root.join("interactions.tsv")
    }

    pub fn affiliations(&self) -> PathBuf {
        self.root.join("affiliations.tsv")
    }

    pub fn features(&self, m: Modality) -> PathBuf {
        self.root.join(format!("features.{}.rmfb", m.name()))
    }

    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("split.tsv")
    }

    pub fn masks(&self) -> PathBuf {
        self.root.join("masks.tsv")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    /// Every data file of the store, in a fixed order.
    pub fn files(&self, modalities: impl Iterator<Item = Modality>) -> Vec<PathBuf> {
        let mut v = vec![self.interactions(), self.affiliations()];
        for m in modalities {
            v.push(self.features(m));
            v.push(sidecar(&self.features(m)));
        }
        v.push(self.split_manifest());
        v.push(self.masks());
        v
    }
}

pub fn write_pairs<'a>(
    path: &Path,
    pairs: impl Iterator<Item = (&'a str, &'a str)>,
) -> Result<()> {
    let mut w = create(path)?;
    for (a, b) in pairs {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_split_manifest(path: &Path, catalog: &BundleCatalog) -> Result<()> {
    let mut w = create(path)?;
    for b in 0..catalog.n_bundles() {
        let s = catalog
            .split_of(b)
            .ok_or_else(|| Error::Input("catalog has not been split".into()))?;
        writeln!(w, "{}\t{s}", catalog.bundle_vocab.id(b)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_masks(path: &Path, catalog: &BundleCatalog, items: &Vocab) -> Result<()> {
    let mut w = create(path)?;
    for b in 0..catalog.n_bundles() {
        if let Some(m) = catalog.mask(b) {
            let id = catalog.bundle_vocab.id(b);
            for (set, name) in [(&m.seed, "seed"), (&m.target, "target")] {
                for &i in set {
                    writeln!(w, "{id}\t{}\t{name}", items.id(i)).map_err(|e| Error::io(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Applies a persisted split manifest and mask file to `catalog`.
pub fn read_split(
    catalog: BundleCatalog,
    manifest: &Path,
    masks_path: &Path,
    items: &Vocab,
) -> Result<BundleCatalog> {
    let mut labels = vec![None; catalog.n_bundles()];
    for (line, rec) in read_tsv(manifest, 2)? {
        let b = catalog
            .bundle_vocab
            .get(&rec[0])
            .ok_or_else(|| Error::parse(manifest, line, format!("unknown bundle `{}`", rec[0])))?;
        labels[b] = Some(rec[1].parse::<Split>().map_err(|e| Error::parse(manifest, line, e.to_string()))?);
    }
    let labels: Vec<Split> = labels
        .into_iter()
        .enumerate()
        .map(|(b, s)| {
            s.ok_or_else(|| {
                Error::Input(format!(
                    "bundle `{}` missing from split manifest",
                    catalog.bundle_vocab.id(b)
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut masks: BTreeMap<usize, BundleMask> = BTreeMap::new();
    for (line, rec) in read_tsv(masks_path, 3)? {
        let b = catalog
            .bundle_vocab
            .get(&rec[0])
            .ok_or_else(|| Error::parse(masks_path, line, format!("unknown bundle `{}`", rec[0])))?;
        let i = items.get(&rec[1]).ok_or_else(|| Error::UnknownItem(rec[1].clone()))?;
        let m = masks.entry(b).or_insert_with(|| BundleMask {
            seed: Vec::new(),
            target: Vec::new(),
        });
        match rec[2].as_str() {
            "seed" => m.seed.push(i),
            "target" => m.target.push(i),
            other => {
                return Err(Error::parse(masks_path, line, format!("unknown mask side `{other}`")))
            }
        }
    }
    for m in masks.values_mut() {
        m.seed.sort_unstable();
        m.target.sort_unstable();
    }
    catalog.with_split(labels, masks)
}

/// Writes a split dataset as a prepared store under `paths.root`.
pub fn save_prepared(paths: &DatasetPaths, data: &Dataset) -> Result<()> {
    let x = &data.interactions;
    let items = &x.item_vocab;
    write_pairs(
        &paths.interactions(),
        (0..x.n_users()).flat_map(|u| {
            x.user_items(u)
                .iter()
                .map(move |&i| (x.user_vocab.id(u), items.id(i)))
        }),
    )?;
    let y = &data.catalog;
    write_pairs(
        &paths.affiliations(),
        (0..y.n_bundles())
            .flat_map(|b| y.items(b).iter().map(move |&i| (y.bundle_vocab.id(b), items.id(i)))),
    )?;
    for m in data.features.modalities() {
        write_features(&paths.features(m), items.ids(), data.features.get(m).unwrap())?;
    }
    write_split_manifest(&paths.split_manifest(), y)?;
    write_masks(&paths.masks(), y, items)?;
    let stats = serde_json::to_string_pretty(&data.stats()).expect("stats serialise");
    fs::write(paths.stats(), stats + "\n").map_err(|e| Error::io(paths.stats(), e))
}

/// Loads a prepared store, including its fixed split and masks.
pub fn load_prepared(paths: &DatasetPaths) -> Result<Dataset> {
    let feature_paths: BTreeMap<Modality, PathBuf> = Modality::ALL
        .iter()
        .map(|&m| (m, paths.features(m)))
        .filter(|(_, p)| p.exists())
        .collect();
    let mut data = load_dataset(&paths.interactions(), &paths.affiliations(), &feature_paths)?;
    data.catalog = read_split(
        data.catalog,
        &paths.split_manifest(),
        &paths.masks(),
        &data.interactions.item_vocab,
    )?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn toy(dir: &Path) -> (PathBuf, PathBuf, BTreeMap<Modality, PathBuf>) {
        let x = write(dir, "x.tsv", "u1\ta\nu1\tb\nu2\tc\n");
        let y = write(dir, "y.tsv", "B1\ta\nB1\tb\nB2\tb\nB2\tc\n");
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let f = dir.join("t.rmfb");
        write_features(&f, &ids, &ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
        (x, y, BTreeMap::from([(Modality::Text, f)]))
    }

    #[test]
    fn toy_files_give_expected_stats() {
        let dir = tempfile::tempdir().unwrap();
        let (x, y, f) = toy(dir.path());
        let d = load_dataset(&x, &y, &f).unwrap();
        let s = d.stats();
        assert_eq!(s.n_items, 3);
        assert_eq!(s.n_bundles, 2);
        assert_eq!(s.avg_items_per_bundle, 2.0);
    }

    #[test]
    fn empty_affiliations_is_no_bundles() {
        let dir = tempfile::tempdir().unwrap();
        let (x, _, f) = toy(dir.path());
        let y = write(dir.path(), "empty.tsv", "");
        let err = load_dataset(&x, &y, &f).unwrap_err();
        assert_eq!(err.to_string(), "no bundles");
    }

    #[test]
    fn unknown_item_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (x, _, f) = toy(dir.path());
        let y = write(dir.path(), "y2.tsv", "B1\ta\nB1\tzzz\n");
        match load_dataset(&x, &y, &f) {
            Err(Error::UnknownItem(id)) => assert_eq!(id, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn singleton_bundles_dropped_and_duplicates_merged() {
        let dir = tempfile::tempdir().unwrap();
        let (x, _, f) = toy(dir.path());
        let y = write(dir.path(), "y3.tsv", "B1\ta\nB1\ta\nB2\tb\nB2\tc\nB2\tc\n");
        let d = load_dataset(&x, &y, &f).unwrap();
        assert_eq!(d.catalog.n_bundles(), 1);
        assert_eq!(d.catalog.bundle_vocab.id(0), "B2");
        assert_eq!(d.catalog.items(0), &[1, 2]);
    }

    #[test]
    fn header_row_mismatch_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let (x, y, f) = toy(dir.path());
        let p = &f[&Modality::Text];
        fs::write(sidecar(p), "a\nb\n").unwrap();
        assert!(matches!(load_dataset(&x, &y, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let (_, y, f) = toy(dir.path());
        let x = write(dir.path(), "bad.tsv", "u1\ta\nu2 b\n");
        match load_dataset(&x, &y, &f) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
