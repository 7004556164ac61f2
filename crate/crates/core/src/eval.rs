//! Candidate ranking and Recall@K / NDCG@K.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::data::{BundleCatalog, MemberView, Split, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInputs};

pub fn recall_at_k(ranked: &[usize], targets: &[usize], k: usize) -> Result<f64> {
    check(targets, k)?;
    let hits = ranked.iter().take(k).filter(|i| targets.contains(i)).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Binary-relevance NDCG with `1/log2(r+1)` discount.
pub fn ndcg_at_k(ranked: &[usize], targets: &[usize], k: usize) -> Result<f64> {
    check(targets, k)?;
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| targets.contains(i))
        .fold(0.0, |acc, (r, _)| acc + gain(r));
    let idcg: f64 = (0..k.min(targets.len())).map(gain).sum();
    Ok(dcg / idcg)
}

fn check(targets: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    if targets.is_empty() {
        return Err(Error::Input("empty target set".into()));
    }
    Ok(())
}

/// The `k` best-scoring indices outside `exclude`, by descending score and
/// ascending index among ties.
pub fn top_k(scores: ArrayView1<f64>, exclude: &[usize], k: usize) -> Vec<(usize, f64)> {
    let mut cands: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(i, &s)| (i, s))
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(k);
    cands
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedBundle {
    pub bundle: usize,
    pub seeds: Vec<usize>,
    pub targets: Vec<usize>,
    /// `(item, score)` in rank order.
    pub ranking: Vec<(usize, f64)>,
    pub metrics: BTreeMap<usize, Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub label: String,
    pub bundles: Vec<RankedBundle>,
    /// Means over bundles, per K.
    pub metrics: BTreeMap<usize, Metrics>,
}

impl RankingResult {
    pub fn at(&self, k: usize) -> Option<Metrics> {
        self.metrics.get(&k).copied()
    }
}

/// Ranks candidates for each `(bundle, input items, targets)` case. With
/// `exclude_inputs` the input items are removed from the candidate pool.
pub fn rank_cases(
    model: &Model,
    inputs: &ModelInputs,
    cases: &[(usize, Vec<usize>, Vec<usize>)],
    exclude_inputs: bool,
    ks: &[usize],
    label: &str,
) -> Result<RankingResult> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Input("K list must be non-empty and positive".into()));
    }
    if cases.is_empty() {
        return Err(Error::NoBundles);
    }
    let k_max = *ks.iter().max().expect("non-empty");
    let members: Vec<Vec<usize>> = cases.iter().map(|c| c.1.clone()).collect();
    let scores = model.scores(inputs, &members)?;
    let mut bundles = Vec::with_capacity(cases.len());
    for ((bundle, seeds, targets), row) in cases.iter().zip(scores.rows()) {
        let exclude: &[usize] = if exclude_inputs { seeds } else { &[] };
        let ranking = top_k(row, exclude, k_max);
        let order: Vec<usize> = ranking.iter().map(|r| r.0).collect();
        let metrics = ks
            .iter()
            .map(|&k| {
                Ok((
                    k,
                    Metrics {
                        recall: recall_at_k(&order, targets, k)?,
                        ndcg: ndcg_at_k(&order, targets, k)?,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        bundles.push(RankedBundle {
            bundle: *bundle,
            seeds: seeds.clone(),
            targets: targets.clone(),
            ranking,
            metrics,
        });
    }
    let n = bundles.len() as f64;
    let metrics = ks
        .iter()
        .map(|&k| {
            let (r, g) = bundles
                .iter()
                .fold((0.0, 0.0), |(r, g), b| (r + b.metrics[&k].recall, g + b.metrics[&k].ndcg));
            (k, Metrics { recall: r / n, ndcg: g / n })
        })
        .collect();
    Ok(RankingResult {
        label: label.to_string(),
        bundles,
        metrics,
    })
}

/// Completes every bundle of a held-out split from its seed items.
pub fn rank_candidates(
    model: &Model,
    inputs: &ModelInputs,
    catalog: &BundleCatalog,
    split: Split,
    ks: &[usize],
) -> Result<RankingResult> {
    if split == Split::Train {
        return Err(Error::Input("training bundles have no seed/target mask".into()));
    }
    let cases = catalog
        .bundles_in(split)
        .into_iter()
        .map(|b| {
            let m = catalog
                .mask(b)
                .ok_or_else(|| Error::Input(format!("bundle {b} has no mask")))?;
            Ok((b, m.seed.clone(), m.target.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    rank_cases(model, inputs, &cases, true, ks, &split.to_string())
}

/// Reconstruction of training bundles: full bundle in, its members as
/// targets, nothing excluded.
pub fn rank_reconstruction(
    model: &Model,
    inputs: &ModelInputs,
    catalog: &BundleCatalog,
    ks: &[usize],
) -> Result<RankingResult> {
    let cases = catalog
        .bundles_in(Split::Train)
        .into_iter()
        .map(|b| {
            let items = catalog.members(b, MemberView::Full)?.to_vec();
            Ok((b, items.clone(), items))
        })
        .collect::<Result<Vec<_>>>()?;
    rank_cases(model, inputs, &cases, false, ks, "train_reconstruction")
}

pub fn metrics_csv(results: &[RankingResult]) -> String {
    let mut out = String::from("split,K,recall,ndcg\n");
    for r in results {
        for (k, m) in &r.metrics {
            writeln!(out, "{},{k},{},{}", r.label, m.recall, m.ndcg).expect("write to string");
        }
    }
    out
}

pub fn topk_csv(result: &RankingResult, bundles: &Vocab, items: &Vocab) -> String {
    let mut out = String::from("bundle_id,rank,item_id,score\n");
    for b in &result.bundles {
        for (r, (i, s)) in b.ranking.iter().enumerate() {
            writeln!(out, "{},{},{},{s}", bundles.id(b.bundle), r + 1, items.id(*i)).expect("write to string");
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
