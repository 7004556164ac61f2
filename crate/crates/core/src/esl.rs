//! Explicit strategy encoders.
//!
//! * characteristic: modality projection, concatenation fusion with the ID
//!   embedding into a `2×d` item matrix, self-attention over that matrix
//!   (item level) and over the member matrix of a bundle (bundle level),
//!   each followed by mean pooling;
//! * collaborative: asymmetric additive attention over the co-purchase
//!   graph with a residual mixture back to the base ID embedding;
//! * the `γ`-mixture of both views.
//!
//! The `*_tape` builders are what the model runs; the plain functions below
//! them evaluate the same builders on concrete arrays.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{BundleCatalog, MemberView, Modality, ModalityBank};
use crate::error::{Error, Result};
use crate::graph::ItemGraph;
use crate::tensor::{Csr, SetLayout, Tape, Var};

/// Affine map `x·W + b` taking one modality's raw features to `d` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticProjector {
    pub maps: BTreeMap<Modality, Affine>,
}

/// Key/query projections of one self-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub key: Array2<f64>,
    pub query: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CollabMode {
    /// Layer `n` consumes layer `n-1`'s output.
    #[default]
    Stacked,
    /// Every layer reads the base embeddings.
    Parallel,
}

/// One graph-attention context: target transform, source transform, bias
/// and attention context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CollaborativeLayer {
    pub target: Array2<f64>,
    pub source: Array2<f64>,
    pub bias: Array1<f64>,
    pub context: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollaborativeAttention {
    pub layers: Vec<CollaborativeLayer>,
    pub beta: f64,
    pub slope: f64,
    pub mode: CollabMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitEmbeddings {
    pub items: Array2<f64>,
    pub bundles: Array2<f64>,
    pub gamma: f64,
}

// ---------------------------------------------------------------------------
// tape builders

#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub key: Var,
    pub query: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct CollabVars {
    pub target: Var,
    pub source: Var,
    pub bias: Var,
    pub context: Var,
}

pub fn project_tape(tape: &mut Tape, features: Var, weight: Var, bias: Var) -> Var {
    let lin = tape.matmul(features, weight);
    tape.add_row(lin, bias)
}

/// Semantic row of every item's fused matrix: `concat(μ_1, …) · Ψ_ρᵀ`.
pub fn fuse_tape(tape: &mut Tape, projected: &[Var], fusion: Var) -> Var {
    let cat = if projected.len() == 1 {
        projected[0]
    } else {
        tape.hcat(projected)
    };
    tape.matmul_nt(cat, fusion)
}

/// Interleaves the semantic row and the ID row of every item into a
/// `2n × d` stack, runs the item attention layers, then mean-pools each
/// item's two rows.
pub fn item_characteristic_tape(
    tape: &mut Tape,
    semantic: Var,
    ids: Var,
    layers: &[AttnVars],
) -> Var {
    let n = tape.value(ids).nrows();
    let stacked = tape.vstack(&[semantic, ids]);
    let picks: Vec<Option<usize>> = (0..n).flat_map(|i| [Some(i), Some(n + i)]).collect();
    let mut x = tape.spmm(Arc::new(Csr::gather(2 * n, &picks)), stacked);
    let layout = Arc::new(SetLayout::uniform(2, n));
    for l in layers {
        x = tape.set_attention(x, l.key, l.query, layout.clone());
    }
    let groups: Vec<Vec<usize>> = (0..n).map(|i| vec![2 * i, 2 * i + 1]).collect();
    tape.spmm(Arc::new(Csr::mean_pool(2 * n, &groups)), x)
}

fn bucket_width(len: usize, pad_to: usize) -> usize {
    len.next_power_of_two().max(pad_to)
}

/// Bundle-level attention over the member rows of `p_items`, then mean
/// pooling over real (unpadded) members. Bundles are processed in buckets of
/// similar size; rows come back in the order of `members`.
pub fn bundle_characteristic_tape(
    tape: &mut Tape,
    p_items: Var,
    members: &[Vec<usize>],
    layers: &[AttnVars],
    pad_to: usize,
) -> Var {
    let n = tape.value(p_items).nrows();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by_key(|&b| (bucket_width(members[b].len(), pad_to), b));
    let mut pooled = Vec::new();
    let mut position = vec![0usize; members.len()];
    let mut start = 0;
    while start < order.len() {
        let width = bucket_width(members[order[start]].len(), pad_to);
        let mut end = start;
        while end < order.len() && bucket_width(members[order[end]].len(), pad_to) == width {
            end += 1;
        }
        let bucket = &order[start..end];
        let mut picks = Vec::with_capacity(bucket.len() * width);
        let mut groups = Vec::with_capacity(bucket.len());
        for (slot, &b) in bucket.iter().enumerate() {
            position[b] = start + slot;
            let m = &members[b];
            assert!(!m.is_empty(), "bundle without members");
            picks.extend(m.iter().map(|&i| Some(i)));
            picks.extend(std::iter::repeat(None).take(width - m.len()));
            groups.push((slot * width..slot * width + m.len()).collect::<Vec<_>>());
        }
        let layout = Arc::new(SetLayout::new(
            width,
            bucket.iter().map(|&b| members[b].len()).collect(),
        ));
        let mut x = tape.spmm(Arc::new(Csr::gather(n, &picks)), p_items);
        for l in layers {
            x = tape.set_attention(x, l.key, l.query, layout.clone());
        }
        let rows = picks.len();
        pooled.push(tape.spmm(Arc::new(Csr::mean_pool(rows, &groups)), x));
        start = end;
    }
    let all = if pooled.len() == 1 {
        pooled[0]
    } else {
        tape.vstack(&pooled)
    };
    let back: Vec<Option<usize>> = position.iter().map(|&p| Some(p)).collect();
    tape.spmm(Arc::new(Csr::gather(members.len(), &back)), all)
}

/// Graph attention layers plus the residual mixture
/// `c = β·mean_n(s⁽ⁿ⁾) + (1−β)·s`.
pub fn collaborative_tape(
    tape: &mut Tape,
    ids: Var,
    neighbors: Arc<Vec<Vec<usize>>>,
    layers: &[CollabVars],
    beta: f64,
    slope: f64,
    mode: CollabMode,
) -> Var {
    if layers.is_empty() {
        return ids;
    }
    let mut outs = Vec::with_capacity(layers.len());
    let mut prev = ids;
    for l in layers {
        let input = match mode {
            CollabMode::Stacked => prev,
            CollabMode::Parallel => ids,
        };
        let tgt = tape.matmul_nt(input, l.target);
        let src = tape.matmul_nt(input, l.source);
        let s = tape.neighbor_attention(tgt, src, l.bias, l.context, neighbors.clone(), slope);
        outs.push(s);
        prev = s;
    }
    let w = beta / layers.len() as f64;
    let mut terms: Vec<(Var, f64)> = outs.into_iter().map(|s| (s, w)).collect();
    terms.push((ids, 1.0 - beta));
    tape.linear(&terms)
}

pub fn bundle_mean_tape(tape: &mut Tape, items: Var, members: &[Vec<usize>]) -> Var {
    let n = tape.value(items).nrows();
    tape.spmm(Arc::new(Csr::mean_pool(n, members)), items)
}

pub fn mix_tape(tape: &mut Tape, p: Var, c: Var, gamma: f64) -> Var {
    tape.linear(&[(p, gamma), (c, 1.0 - gamma)])
}

// ---------------------------------------------------------------------------
// value-level operations

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

fn attn_vars(tape: &mut Tape, layers: &[AttentionLayer]) -> Vec<AttnVars> {
    layers
        .iter()
        .map(|l| AttnVars {
            key: tape.param(l.key.clone()),
            query: tape.param(l.query.clone()),
        })
        .collect()
}

/// Projects every modality of `bank` into the unified latent space.
pub fn project_modalities(
    bank: &ModalityBank,
    proj: &SemanticProjector,
) -> Result<BTreeMap<Modality, Array2<f64>>> {
    let mut out = BTreeMap::new();
    for (&m, a) in &proj.maps {
        let f = bank
            .get(m)
            .ok_or_else(|| Error::Config(format!("no {m} features in the bank")))?;
        if f.ncols() != a.weight.nrows() || a.weight.ncols() != a.bias.len() {
            return Err(Error::Config(format!(
                "{m} projector expects {}→{} (bias {}), features have {} columns",
                a.weight.nrows(),
                a.weight.ncols(),
                a.bias.len(),
                f.ncols()
            )));
        }
        let mut t = Tape::new();
        let x = t.constant(f.clone());
        let w = t.param(a.weight.clone());
        let b = t.param(row(&a.bias));
        let y = project_tape(&mut t, x, w, b);
        out.insert(m, t.value(y).clone());
    }
    Ok(out)
}

/// Fused `2×d` item matrix: row 0 is `Ψ_ρ·(μ_v ‖ μ_t)`, row 1 the ID embedding.
pub fn fuse_item(
    mu_v: &Array1<f64>,
    mu_t: &Array1<f64>,
    mu_id: &Array1<f64>,
    fusion: &Array2<f64>,
) -> Result<Array2<f64>> {
    let d = mu_id.len();
    if mu_v.len() != d || mu_t.len() != d || fusion.dim() != (d, 2 * d) {
        return Err(Error::Shape(format!(
            "fuse_item: vectors {}/{}/{} with fusion {:?}",
            mu_v.len(),
            mu_t.len(),
            d,
            fusion.dim()
        )));
    }
    let mut t = Tape::new();
    let v = t.constant(row(mu_v));
    let tx = t.constant(row(mu_t));
    let f = t.param(fusion.clone());
    let sem = fuse_tape(&mut t, &[v, tx], f);
    let mut out = Array2::zeros((2, d));
    out.row_mut(0).assign(&t.value(sem).row(0));
    out.row_mut(1).assign(mu_id);
    Ok(out)
}

/// Self-attention over one item's fused matrix (any row count), mean-pooled.
pub fn encode_item_characteristic(rho: &Array2<f64>, layers: &[AttentionLayer]) -> Result<Array1<f64>> {
    if layers.is_empty() {
        return Err(Error::Config("item attention needs at least one layer".into()));
    }
    let mut t = Tape::new();
    let x = t.constant(rho.clone());
    let vars = attn_vars(&mut t, layers);
    let layout = Arc::new(SetLayout::uniform(rho.nrows(), 1));
    let mut h = x;
    for l in &vars {
        h = t.set_attention(h, l.key, l.query, layout.clone());
    }
    Ok(t.value(h).mean_axis(Axis(0)).expect("non-empty rows"))
}

/// Bundle characteristic from its members' item characteristics.
pub fn encode_bundle_characteristic(
    member_p: &Array2<f64>,
    layers: &[AttentionLayer],
) -> Result<Array1<f64>> {
    if member_p.nrows() == 0 {
        return Err(Error::Input("bundle has no members".into()));
    }
    let members = vec![(0..member_p.nrows()).collect()];
    Ok(encode_bundles_characteristic(member_p, &members, layers, 0)?.row(0).to_owned())
}

/// Batched bundle characteristics; `pad_to` forces a minimum padded width.
pub fn encode_bundles_characteristic(
    p_items: &Array2<f64>,
    members: &[Vec<usize>],
    layers: &[AttentionLayer],
    pad_to: usize,
) -> Result<Array2<f64>> {
    if let Some(b) = members.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("bundle {b} has no members")));
    }
    let mut t = Tape::new();
    let p = t.constant(p_items.clone());
    let vars = attn_vars(&mut t, layers);
    let out = bundle_characteristic_tape(&mut t, p, members, &vars, pad_to);
    Ok(t.value(out).clone())
}

pub fn encode_collaborative(
    id_embeddings: &Array2<f64>,
    graph: &ItemGraph,
    attn: &CollaborativeAttention,
) -> Result<Array2<f64>> {
    if graph.n_items() != id_embeddings.nrows() {
        return Err(Error::Shape(format!(
            "graph has {} items, embeddings {}",
            graph.n_items(),
            id_embeddings.nrows()
        )));
    }
    if !(0.0..=1.0).contains(&attn.beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {}", attn.beta)));
    }
    let mut t = Tape::new();
    let ids = t.constant(id_embeddings.clone());
    let vars: Vec<CollabVars> = attn
        .layers
        .iter()
        .map(|l| CollabVars {
            target: t.param(l.target.clone()),
            source: t.param(l.source.clone()),
            bias: t.param(row(&l.bias)),
            context: t.param(row(&l.context)),
        })
        .collect();
    let nbrs = Arc::new(graph.adjacency().to_vec());
    let c = collaborative_tape(&mut t, ids, nbrs, &vars, attn.beta, attn.slope, attn.mode);
    Ok(t.value(c).clone())
}

/// Mean of member collaborative embeddings for every bundle of `catalog`.
pub fn aggregate_bundle_collaborative(
    c_items: &Array2<f64>,
    catalog: &BundleCatalog,
    bundles: &[usize],
    view: MemberView,
) -> Result<Array2<f64>> {
    let members: Vec<Vec<usize>> = bundles
        .iter()
        .map(|&b| catalog.members(b, view).map(<[usize]>::to_vec))
        .collect::<Result<_>>()?;
    if let Some(b) = members.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("bundle {b} has no members")));
    }
    let mut t = Tape::new();
    let c = t.constant(c_items.clone());
    let out = bundle_mean_tape(&mut t, c, &members);
    Ok(t.value(out).clone())
}

pub fn mix_explicit(
    p_items: &Array2<f64>,
    c_items: &Array2<f64>,
    p_bundles: &Array2<f64>,
    c_bundles: &Array2<f64>,
    gamma: f64,
) -> Result<ExplicitEmbeddings> {
    check_gamma(gamma)?;
    if p_items.dim() != c_items.dim() || p_bundles.dim() != c_bundles.dim() {
        return Err(Error::Shape("mix_explicit operands differ in shape".into()));
    }
    let mix = |p: &Array2<f64>, c: &Array2<f64>| {
        let mut t = Tape::new();
        let pv = t.constant(p.clone());
        let cv = t.constant(c.clone());
        let g = mix_tape(&mut t, pv, cv, gamma);
        t.value(g).clone()
    };
    Ok(ExplicitEmbeddings {
        items: mix(p_items, c_items),
        bundles: mix(p_bundles, c_bundles),
        gamma,
    })
}
