//! Versioned binary checkpoints.
//!
//! Layout: magic `BKCP`, `u32` format version, `u64` header length, a JSON
//! header, then a blob section. Parameters are stored as little-endian
//! `f32` (training keeps them `f32`-exact, so the round trip is bit-exact);
//! optimizer moments are little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{Adam, AdamHyper};
use crate::train::BestRecord;

pub const MAGIC: &[u8; 4] = b"BKCP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the blob section.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    hyper: AdamHyper,
    step: u64,
    /// `f64` offsets of the first and second moments, one per parameter.
    m: Vec<usize>,
    v: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: BTreeMap<Modality, usize>,
    n_items: usize,
    params: Vec<BlobEntry>,
    optimizer: Option<OptimizerHeader>,
    epoch: usize,
    best: Option<BestRecord>,
    data_checksum: Option<String>,
    blob_len: usize,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub best: Option<BestRecord>,
    /// Checksum of the dataset the model was trained on.
    pub data_checksum: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = &self.model.params;
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(params.len());
        for (name, v) in params.names().iter().zip(params.values()) {
            entries.push(BlobEntry {
                name: name.clone(),
                shape: [v.nrows(), v.ncols()],
                offset: blob.len(),
            });
            for &x in v.iter() {
                let f = x as f32;
                if f as f64 != x && !x.is_nan() {
                    return Err(Error::Checkpoint(format!("parameter {name} is not f32-representable")));
                }
                blob.extend_from_slice(&f.to_le_bytes());
            }
        }
        let optimizer = self.optimizer.as_ref().map(|adam| {
            let mut push = |arrays: &[Array2<f64>]| -> Vec<usize> {
                arrays
                    .iter()
                    .map(|a| {
                        let at = blob.len();
                        for &x in a.iter() {
                            blob.extend_from_slice(&x.to_le_bytes());
                        }
                        at
                    })
                    .collect()
            };
            let m = push(&adam.m);
            let v = push(&adam.v);
            OptimizerHeader {
                hyper: adam.hyper,
                step: adam.step,
                m,
                v,
            }
        });
        let header = Header {
            config: self.model.config.clone(),
            dims: self.model.dims.clone(),
            n_items: self.model.n_items,
            params: entries,
            optimizer,
            epoch: self.epoch,
            best: self.best,
            data_checksum: self.data_checksum.clone(),
            blob_len: blob.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let blob = &bytes[16 + header_len..];
        if blob.len() != header.blob_len {
            return Err(Error::Checkpoint(format!(
                "blob section has {} bytes, header says {}",
                blob.len(),
                header.blob_len
            )));
        }

        let mut model = Model::new(&header.config, &header.dims, header.n_items)?;
        if model.params.names().len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, configuration implies {}",
                header.params.len(),
                model.params.len()
            )));
        }
        let names: Vec<String> = model.params.names().to_vec();
        for ((name, value), entry) in names.iter().zip(model.params.values_mut()).zip(&header.params) {
            if *name != entry.name || [value.nrows(), value.ncols()] != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {name} {:?}",
                    entry.name,
                    entry.shape,
                    value.dim()
                )));
            }
            let raw = slice(blob, entry.offset, value.len() * 4)?;
            for (x, c) in value.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
            }
        }

        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let read = |offsets: &[usize]| -> Result<Vec<Array2<f64>>> {
                    if offsets.len() != model.params.len() {
                        return Err(bad("optimizer moment count differs from parameter count"));
                    }
                    offsets
                        .iter()
                        .zip(model.params.values())
                        .map(|(&at, p)| {
                            let raw = slice(blob, at, p.len() * 8)?;
                            let data = raw
                                .chunks_exact(8)
                                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                                .collect();
                            Ok(Array2::from_shape_vec(p.dim(), data).expect("sized from parameter"))
                        })
                        .collect()
                };
                Some(Adam {
                    hyper: o.hyper,
                    step: o.step,
                    m: read(&o.m)?,
                    v: read(&o.v)?,
                })
            }
        };
        Ok(Checkpoint {
            model,
            optimizer,
            epoch: header.epoch,
            best: header.best,
            data_checksum: header.data_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn slice(blob: &[u8], at: usize, len: usize) -> Result<&[u8]> {
    blob.get(at..at + len)
        .ok_or_else(|| Error::Checkpoint("blob entry out of bounds".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::apply_ablation;
    use crate::model::ModelInputs;
    use crate::synthetic::tiny_fixture;

    fn small_config() -> TrainConfig {
        TrainConfig {
            d: 8,
            n: 1,
            h: 2,
            ..TrainConfig::default()
        }
    }

    fn trained_state() -> (Checkpoint, ModelInputs, Vec<Vec<usize>>) {
        let f = tiny_fixture();
        let cfg = small_config();
        let wiring = apply_ablation(&cfg, &[Modality::Text, Modality::Visual]).unwrap();
        let inputs = ModelInputs::new(&f.dataset, &f.graph, &wiring).unwrap();
        let mut model = Model::new(&cfg, &inputs.dims(), f.dataset.n_items()).unwrap();
        let mut adam = Adam::new(AdamHyper::with_lr(0.01), &model.params);
        let members: Vec<Vec<usize>> = (0..4).map(|b| f.dataset.catalog.items(b).to_vec()).collect();
        for _ in 0..3 {
            let (_, g) = model.gradients(&inputs, &members, None).unwrap();
            adam.apply(&mut model.params, &g).unwrap();
        }
        let ck = Checkpoint {
            model,
            optimizer: Some(adam),
            epoch: 3,
            best: Some(BestRecord {
                epoch: 2,
                recall: 0.5,
                ndcg: 0.25,
            }),
            data_checksum: Some("abc".into()),
        };
        (ck, inputs, members)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ck, inputs, members) = trained_state();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let before = ck.model.scores(&inputs, &members).unwrap();
        let after = back.model.scores(&inputs, &members).unwrap();
        assert!(before.iter().zip(after.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ck, _, _) = trained_state();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);

        let bytes = fs::read(&path).unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut future = bytes;
        future[4] = 9;
        assert!(Checkpoint::from_bytes(&future).is_err());
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_non_f32_parameters() {
        let (mut ck, _, _) = trained_state();
        ck.model.params.values_mut()[0][[0, 0]] = 0.1;
        assert!(ck.to_bytes().is_err());
    }
}
