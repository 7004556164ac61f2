//! Retrieval score, NLL reconstruction loss, cosine InfoNCE alignment and
//! the joint objective.

use std::sync::Arc;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esl::ExplicitEmbeddings;
use crate::isl::ImplicitEmbeddings;
use crate::tensor::{Csr, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    /// Negatives range over every item.
    #[default]
    Full,
    /// Negatives range over the items of the current batch.
    InBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub nll: f64,
    pub mad_item: f64,
    pub mad_bundle: f64,
    pub reg: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

// ---------------------------------------------------------------------------
// tape builders

/// `σ = g_B·g_Iᵀ (+ φ_B·φ_Iᵀ)`, one row per bundle.
pub fn score_tape(tape: &mut Tape, g_b: Var, g_i: Var, phi: Option<(Var, Var)>) -> Var {
    let s = tape.matmul_nt(g_b, g_i);
    match phi {
        Some((pb, pi)) => {
            let t = tape.matmul_nt(pb, pi);
            tape.add(s, t)
        }
        None => s,
    }
}

/// Mean over bundles and items of the member-indicator-weighted negative
/// log-softmax.
pub fn nll_tape(tape: &mut Tape, scores: Var, membership: Arc<Csr>) -> Var {
    let (b, n) = tape.value(scores).dim();
    tape.softmax_xent(scores, membership, 1.0 / (b as f64 * n as f64))
}

/// Cosine InfoNCE with row `i` of `positive` as the positive of row `i` of
/// `anchor`, every row of `positive` in the denominator.
pub fn infonce_tape(tape: &mut Tape, anchor: Var, positive: Var, tau: f64) -> Var {
    let n = tape.value(anchor).nrows();
    for (name, v) in [("anchor", anchor), ("positive", positive)] {
        let zeros = tape
            .value(v)
            .rows()
            .into_iter()
            .filter(|r| r.iter().all(|&x| x == 0.0))
            .count();
        if zeros > 0 {
            warn!("{zeros} zero {name} row(s) in InfoNCE; their cosines are taken as 0");
        }
    }
    let a = tape.lp_normalize(anchor, 2.0);
    let p = tape.lp_normalize(positive, 2.0);
    let cos = tape.matmul_nt(a, p);
    let logits = tape.scale(cos, 1.0 / tau);
    tape.softmax_xent(logits, Arc::new(Csr::identity(n)), 1.0 / n as f64)
}

// ---------------------------------------------------------------------------
// value-level operations

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

pub fn score(
    g_b: &Array1<f64>,
    phi_b: &Array1<f64>,
    g_items: &Array2<f64>,
    phi_items: &Array2<f64>,
) -> Result<Array1<f64>> {
    let d = g_b.len();
    if phi_b.len() != phi_items.ncols() || g_items.ncols() != d || g_items.nrows() != phi_items.nrows() {
        return Err(Error::Shape("score operands disagree in shape".into()));
    }
    let mut t = Tape::new();
    let gb = t.constant(g_b.clone().insert_axis(Axis(0)));
    let pb = t.constant(phi_b.clone().insert_axis(Axis(0)));
    let gi = t.constant(g_items.clone());
    let pi = t.constant(phi_items.clone());
    let s = score_tape(&mut t, gb, gi, Some((pb, pi)));
    Ok(t.value(s).row(0).to_owned())
}

pub fn nll_loss(scores: &Array2<f64>, membership: &Csr) -> Result<f64> {
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in retrieval scores".into()));
    }
    if scores.dim() != (membership.rows(), membership.cols()) {
        return Err(Error::Shape(format!(
            "scores {:?} vs membership {}×{}",
            scores.dim(),
            membership.rows(),
            membership.cols()
        )));
    }
    let mut t = Tape::new();
    let s = t.constant(scores.clone());
    let l = nll_tape(&mut t, s, Arc::new(membership.clone()));
    Ok(t.scalar(l))
}

pub fn infonce(anchor: &Array2<f64>, positive: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if anchor.dim() != positive.dim() {
        return Err(Error::Shape("InfoNCE anchor and positive sets differ in shape".into()));
    }
    if anchor.nrows() < 2 {
        return Err(Error::Input("InfoNCE needs at least two rows".into()));
    }
    let mut t = Tape::new();
    let a = t.constant(anchor.clone());
    let p = t.constant(positive.clone());
    let l = infonce_tape(&mut t, a, p, tau);
    Ok(t.scalar(l))
}

/// `(item term, bundle term)`. With `InBatch` scope the item term only
/// uses the rows listed in `batch_items`.
pub fn mad_loss(
    explicit: &ExplicitEmbeddings,
    implicit: &ImplicitEmbeddings,
    tau: f64,
    scope: NegativeScope,
    batch_items: &[usize],
) -> Result<(f64, f64)> {
    let item = match scope {
        NegativeScope::Full => infonce(&explicit.items, &implicit.items, tau)?,
        NegativeScope::InBatch => infonce(
            &explicit.items.select(Axis(0), batch_items),
            &implicit.items.select(Axis(0), batch_items),
            tau,
        )?,
    };
    let bundle = infonce(&explicit.bundles, &implicit.bundles, tau)?;
    Ok((item, bundle))
}

pub fn joint_loss(
    nll: f64,
    mad_item: f64,
    mad_bundle: f64,
    reg: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossReport> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::Config(format!(
            "loss weights must be non-negative, got λ1={lambda1} λ2={lambda2}"
        )));
    }
    Ok(LossReport {
        nll,
        mad_item,
        mad_bundle,
        reg,
        total: nll + lambda1 * (mad_item + mad_bundle) + lambda2 * reg,
        lambda1,
        lambda2,
    })
}
