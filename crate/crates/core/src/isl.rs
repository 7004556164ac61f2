//! Implicit strategy: per-modality hyperedges, Gumbel-relaxed item and
//! bundle dependency matrices, hypergraph propagation and L_p
//! normalisation.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::tensor::{Csr, Tape, Var};

/// Learnable hyperedges, `H × d_m` per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperedgeBank {
    pub edges: BTreeMap<Modality, Array2<f64>>,
}

impl HyperedgeBank {
    pub fn n_hyperedges(&self) -> Result<usize> {
        let mut hs = self.edges.values().map(Array2::nrows);
        let h = hs.next().ok_or_else(|| Error::Config("no hyperedge modalities".into()))?;
        if h == 0 || hs.any(|x| x != h) {
            return Err(Error::Config("hyperedge count must be positive and shared".into()));
        }
        Ok(h)
    }
}

/// Item (`n_items × H`) and bundle (`n_bundles × H`) dependency logits or
/// their relaxed counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dependency {
    pub items: Array2<f64>,
    pub bundles: Array2<f64>,
}

pub type DependencyMatrices = BTreeMap<Modality, Dependency>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Sample,
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitEmbeddings {
    pub items: Array2<f64>,
    pub bundles: Array2<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// Draws `rows × cols` logistic noise `ln θ − ln(1−θ)`, `θ ~ U(0,1)`, in
/// row-major order.
pub fn logistic_noise(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let theta: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
        theta.ln() - (1.0 - theta).ln()
    })
}

// ---------------------------------------------------------------------------
// tape builders

pub fn dependency_tape(tape: &mut Tape, features: Var, hyperedges: Var, y: Arc<Csr>) -> (Var, Var) {
    let fi = tape.matmul_nt(features, hyperedges);
    let fb = tape.spmm(y, fi);
    (fi, fb)
}

/// `softmax((f + noise)/τ)` row-wise; `noise = None` disables perturbation.
pub fn relax_tape(tape: &mut Tape, logits: Var, tau: f64, noise: Option<Array2<f64>>) -> Var {
    let x = match noise {
        Some(n) => {
            let c = tape.constant(n);
            tape.add(logits, c)
        }
        None => logits,
    };
    let scaled = tape.scale(x, 1.0 / tau);
    tape.softmax_rows(scaled)
}

/// Returns `(φ_items^(Z), φ_bundles)`; the bundle side reads the depth
/// `Z−1` item state.
pub fn propagate_tape(tape: &mut Tape, fi_hat: Var, fb_hat: Var, state: Var, depth: usize) -> (Var, Var) {
    assert!(depth >= 1, "propagation depth must be positive");
    let mut phi = state;
    let mut last_edge = None;
    for _ in 0..depth {
        let edge = tape.matmul_tn(fi_hat, phi);
        last_edge = Some(edge);
        phi = tape.matmul(fi_hat, edge);
    }
    let bundles = tape.matmul(fb_hat, last_edge.expect("depth >= 1"));
    (phi, bundles)
}

pub fn finalize_tape(tape: &mut Tape, per_modality: &[Var], p: f64) -> Var {
    let sum = if per_modality.len() == 1 {
        per_modality[0]
    } else {
        let terms: Vec<(Var, f64)> = per_modality.iter().map(|&v| (v, 1.0)).collect();
        tape.linear(&terms)
    };
    tape.lp_normalize(sum, p)
}

// ---------------------------------------------------------------------------
// value-level operations

/// `F_I^m = M^m · W_mᵀ`, `F_B^m = Y · F_I^m`.
pub fn build_dependency(
    features: &BTreeMap<Modality, Array2<f64>>,
    hyperedges: &HyperedgeBank,
    y: &Csr,
) -> Result<DependencyMatrices> {
    hyperedges.n_hyperedges()?;
    let mut out = BTreeMap::new();
    for (&m, w) in &hyperedges.edges {
        let f = features
            .get(&m)
            .ok_or_else(|| Error::Config(format!("no {m} features for hyperedges")))?;
        if f.ncols() != w.ncols() {
            return Err(Error::Config(format!(
                "{m} hyperedges have inner dim {}, features {}",
                w.ncols(),
                f.ncols()
            )));
        }
        if y.cols() != f.nrows() {
            return Err(Error::Config(format!(
                "affiliation has {} item columns, features {} rows",
                y.cols(),
                f.nrows()
            )));
        }
        let mut t = Tape::new();
        let fv = t.constant(f.clone());
        let wv = t.param(w.clone());
        let (fi, fb) = dependency_tape(&mut t, fv, wv, Arc::new(y.clone()));
        out.insert(
            m,
            Dependency {
                items: t.value(fi).clone(),
                bundles: t.value(fb).clone(),
            },
        );
    }
    Ok(out)
}

/// Deterministic core of the relaxation for an explicit `θ` vector.
pub fn relax(f: &[f64], theta: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if f.len() != theta.len() {
        return Err(Error::Shape("logit and noise lengths differ".into()));
    }
    let noise = Array2::from_shape_fn((1, f.len()), |(_, k)| {
        let t = theta[k].clamp(1e-12, 1.0 - 1e-12);
        t.ln() - (1.0 - t).ln()
    });
    Ok(relax_row(f, tau, Some(noise)))
}

fn relax_row(f: &[f64], tau: f64, noise: Option<Array2<f64>>) -> Vec<f64> {
    let mut t = Tape::new();
    let x = t.constant(Array2::from_shape_vec((1, f.len()), f.to_vec()).expect("row shape"));
    let y = relax_tape(&mut t, x, tau, noise);
    t.value(y).iter().copied().collect()
}

pub fn gumbel_sparsify(f: &[f64], tau: f64, mode: NoiseMode, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let noise = match mode {
        NoiseMode::Sample => Some(logistic_noise(1, f.len(), rng)),
        NoiseMode::Disabled => None,
    };
    Ok(relax_row(f, tau, noise))
}

/// Relaxes every row of every dependency matrix; noise is drawn modality by
/// modality, items before bundles.
pub fn sparsify_dependency(
    deps: &DependencyMatrices,
    tau: f64,
    mode: NoiseMode,
    rng: &mut impl Rng,
) -> Result<DependencyMatrices> {
    check_tau(tau)?;
    let mut relax_mat = |m: &Array2<f64>| {
        let noise = match mode {
            NoiseMode::Sample => Some(logistic_noise(m.nrows(), m.ncols(), rng)),
            NoiseMode::Disabled => None,
        };
        let mut t = Tape::new();
        let x = t.constant(m.clone());
        let y = relax_tape(&mut t, x, tau, noise);
        t.value(y).clone()
    };
    Ok(deps
        .iter()
        .map(|(&m, d)| {
            (
                m,
                Dependency {
                    items: relax_mat(&d.items),
                    bundles: relax_mat(&d.bundles),
                },
            )
        })
        .collect())
}

pub fn propagate_hypergraph(
    fi_hat: &Array2<f64>,
    fb_hat: &Array2<f64>,
    item_state: &Array2<f64>,
    depth: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if depth == 0 {
        return Err(Error::Config("propagation depth must be at least 1".into()));
    }
    if fi_hat.nrows() != item_state.nrows() || fi_hat.ncols() != fb_hat.ncols() {
        return Err(Error::Shape(format!(
            "propagate: F̂_I {:?}, F̂_B {:?}, state {:?}",
            fi_hat.dim(),
            fb_hat.dim(),
            item_state.dim()
        )));
    }
    let mut t = Tape::new();
    let fi = t.constant(fi_hat.clone());
    let fb = t.constant(fb_hat.clone());
    let s = t.constant(item_state.clone());
    let (items, bundles) = propagate_tape(&mut t, fi, fb, s, depth);
    Ok((t.value(items).clone(), t.value(bundles).clone()))
}

/// Sums `(items, bundles)` states over modalities and L_p-normalises rows.
pub fn finalize_implicit(states: &[(Array2<f64>, Array2<f64>)], p: f64) -> Result<ImplicitEmbeddings> {
    if states.is_empty() {
        return Err(Error::Input("no modality states to finalize".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::Config(format!("p_norm must be ≥ 1, got {p}")));
    }
    let (di, db) = (states[0].0.dim(), states[0].1.dim());
    if states.iter().any(|(i, b)| i.dim() != di || b.dim() != db) {
        return Err(Error::Shape("modality states differ in shape".into()));
    }
    let run = |pick: &dyn Fn(&(Array2<f64>, Array2<f64>)) -> Array2<f64>| {
        let mut t = Tape::new();
        let vars: Vec<Var> = states.iter().map(|s| t.constant(pick(s))).collect();
        let out = finalize_tape(&mut t, &vars, p);
        t.value(out).clone()
    };
    Ok(ImplicitEmbeddings {
        items: run(&|s| s.0.clone()),
        bundles: run(&|s| s.1.clone()),
    })
}
