//! Epoch loop with per-epoch validation, early stopping on valid N@20 and
//! restoration of the best state.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{apply_ablation, TrainConfig};
use crate::data::{Dataset, MemberView, Split};
use crate::error::{Error, Result};
use crate::eval::rank_candidates;
use crate::graph::ItemGraph;
use crate::model::{Model, ModelInputs};
use crate::objectives::LossReport;
use crate::optim::{Adam, AdamHyper};

/// Cut-off used for validation and early stopping.
pub const VALID_K: usize = 20;

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch-averaged loss parts.
    pub loss: LossReport,
    pub valid_recall: f64,
    pub valid_ndcg: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model at the best validation epoch.
    pub model: Model,
    /// Optimizer state matching `model`.
    pub optimizer: Adam,
    pub best: BestRecord,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

pub const LOG_HEADER: &str = "epoch,total,nll,mad_item,mad_bundle,reg,valid_R@20,valid_N@20,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.epoch, l.total, l.nll, l.mad_item, l.mad_bundle, l.reg, self.valid_recall, self.valid_ndcg, self.seconds
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        writeln!(out, "{}", e.csv_row()).expect("write to string");
    }
    out
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport {
        nll: avg(|r| r.nll),
        mad_item: avg(|r| r.mad_item),
        mad_bundle: avg(|r| r.mad_bundle),
        reg: avg(|r| r.reg),
        total: avg(|r| r.total),
        lambda1: reports[0].lambda1,
        lambda2: reports[0].lambda2,
    }
}

/// Runs the full training procedure. `on_epoch` observes every epoch as it
/// completes.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    graph: &ItemGraph,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let catalog = &dataset.catalog;
    if !catalog.is_split() {
        return Err(Error::Input("dataset has no train/valid/test split".into()));
    }
    let train_ids = catalog.bundles_in(Split::Train);
    if train_ids.is_empty() {
        return Err(Error::Input("no training bundles".into()));
    }
    if catalog.bundles_in(Split::Valid).is_empty() {
        return Err(Error::Input("no validation bundles".into()));
    }
    let available: Vec<_> = dataset.features.modalities().collect();
    let wiring = apply_ablation(config, &available)?;
    let inputs = ModelInputs::new(dataset, graph, &wiring)?;
    let mut model = Model::new(config, &inputs.dims(), dataset.n_items())?;
    let mut optimizer = Adam::new(AdamHyper::with_lr(config.learning_rate), &model.params);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    noise_rng.set_stream(NOISE_STREAM);

    let mut best: Option<(BestRecord, Model, Adam)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut order = train_ids.clone();
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut reports = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let members: Vec<Vec<usize>> = batch
                .iter()
                .map(|&b| catalog.members(b, MemberView::Full).map(<[usize]>::to_vec))
                .collect::<Result<_>>()?;
            let (report, grads) = model
                .gradients(&inputs, &members, Some(&mut noise_rng))
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
                    other => other,
                })?;
            optimizer.apply(&mut model.params, &grads)?;
            reports.push(report);
        }
        let valid = rank_candidates(&model, &inputs, catalog, Split::Valid, &[VALID_K]).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} in validation after epoch {epoch}")),
            other => other,
        })?;
        let m = valid.at(VALID_K).expect("requested K");
        let entry = EpochLog {
            epoch,
            loss: mean_report(&reports),
            valid_recall: m.recall,
            valid_ndcg: m.ndcg,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.5} valid R@20 {:.4} N@20 {:.4}",
            entry.loss.total, m.recall, m.ndcg
        );
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().map_or(true, |(b, _, _)| m.ndcg > b.ndcg) {
            let record = BestRecord {
                epoch,
                recall: m.recall,
                ndcg: m.ndcg,
            };
            best = Some((record, model.clone(), optimizer.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let epochs_run = log.len();
    let (best, model, optimizer) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        optimizer,
        best,
        epochs_run,
        log,
    })
}
