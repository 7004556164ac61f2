//! Parameter store and the full forward pass (explicit → implicit →
//! losses) on a single tape.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{apply_ablation, FeatureSpace, TrainConfig, Wiring};
use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::esl::{self, AttnVars, CollabVars};
use crate::graph::ItemGraph;
use crate::isl;
use crate::objectives::{self, LossReport, NegativeScope};
use crate::tensor::{Csr, Tape, Var};

/// Named parameters in a fixed creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: BTreeMap<String, usize>,
}

impl Params {
    fn new() -> Self {
        Params {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    fn push(&mut self, name: String, value: Array2<f64>) {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).map(|x| x * x).sum()
    }

    /// Rounds every entry to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a) as f32 as f64)
}

/// Data-side inputs of a forward pass: active modality features and the
/// co-purchase neighbourhoods.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub features: BTreeMap<Modality, Array2<f64>>,
    pub neighbors: Arc<Vec<Vec<usize>>>,
    pub n_items: usize,
}

impl ModelInputs {
    pub fn new(dataset: &Dataset, graph: &ItemGraph, wiring: &Wiring) -> Result<Self> {
        if graph.n_items() != dataset.n_items() {
            return Err(Error::Shape(format!(
                "graph has {} items, dataset {}",
                graph.n_items(),
                dataset.n_items()
            )));
        }
        let mut features = BTreeMap::new();
        for &m in &wiring.modalities {
            let f = dataset
                .features
                .get(m)
                .ok_or_else(|| Error::Config(format!("dataset has no {m} features")))?;
            features.insert(m, f.clone());
        }
        Ok(ModelInputs {
            features,
            neighbors: Arc::new(graph.adjacency().to_vec()),
            n_items: dataset.n_items(),
        })
    }

    pub fn dims(&self) -> BTreeMap<Modality, usize> {
        self.features.iter().map(|(&m, f)| (m, f.ncols())).collect()
    }
}

/// Embeddings produced by one forward pass over a set of bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub g_items: Array2<f64>,
    pub g_bundles: Array2<f64>,
    pub phi_items: Option<Array2<f64>>,
    pub phi_bundles: Option<Array2<f64>>,
}

struct Encoded {
    g_i: Var,
    g_b: Var,
    phi: Option<(Var, Var)>,
}

/// A recorded training forward pass.
pub struct LossGraph {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub total: Var,
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub wiring: Wiring,
    pub dims: BTreeMap<Modality, usize>,
    pub n_items: usize,
    pub params: Params,
}

impl Model {
    /// Builds and initialises exactly the parameters the wiring uses.
    pub fn new(config: &TrainConfig, dims: &BTreeMap<Modality, usize>, n_items: usize) -> Result<Self> {
        let available: Vec<Modality> = dims.keys().copied().collect();
        let wiring = apply_ablation(config, &available)?;
        let dims: BTreeMap<Modality, usize> = wiring.modalities.iter().map(|m| (*m, dims[m])).collect();
        let d = config.d;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(0);
        let mut p = Params::new();
        p.push("item_id".into(), xavier(&mut rng, n_items, d, n_items, d));
        let projected_isl = wiring.implicit && config.isl_feature_space == FeatureSpace::Projected;
        if wiring.characteristic || projected_isl {
            for (&m, &dm) in &dims {
                p.push(format!("proj.{m}.weight"), xavier(&mut rng, dm, d, dm, d));
                p.push(format!("proj.{m}.bias"), Array2::zeros((1, d)));
            }
        }
        if wiring.characteristic {
            let width = d * dims.len();
            p.push("fusion".into(), xavier(&mut rng, d, width, width, d));
            for (scope, layers) in [("item_attn", config.l1), ("bundle_attn", config.l2)] {
                for l in 0..layers {
                    p.push(format!("{scope}.{l}.key"), xavier(&mut rng, d, d, d, d));
                    p.push(format!("{scope}.{l}.query"), xavier(&mut rng, d, d, d, d));
                }
            }
        }
        if wiring.collaborative {
            for n in 0..config.n {
                p.push(format!("collab.{n}.target"), xavier(&mut rng, d, d, d, d));
                p.push(format!("collab.{n}.source"), xavier(&mut rng, d, d, d, d));
                p.push(format!("collab.{n}.bias"), Array2::zeros((1, d)));
                p.push(format!("collab.{n}.context"), xavier(&mut rng, 1, d, d, 1));
            }
        }
        if wiring.implicit {
            for (&m, &dm) in &dims {
                let inner = if projected_isl { d } else { dm };
                p.push(format!("hyperedge.{m}"), xavier(&mut rng, config.h, inner, inner, config.h));
            }
        }
        Ok(Model {
            config: config.clone(),
            wiring,
            dims,
            n_items,
            params: p,
        })
    }

    fn check_inputs(&self, inputs: &ModelInputs, members: &[Vec<usize>]) -> Result<()> {
        if inputs.n_items != self.n_items || inputs.dims() != self.dims {
            return Err(Error::Shape(format!(
                "model expects {} items with {:?}, inputs have {} with {:?}",
                self.n_items,
                self.dims,
                inputs.n_items,
                inputs.dims()
            )));
        }
        if members.is_empty() {
            return Err(Error::NoBundles);
        }
        for (b, m) in members.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::Input(format!("bundle {b} has no member items")));
            }
            if let Some(&i) = m.iter().find(|&&i| i >= self.n_items) {
                return Err(Error::Input(format!("bundle {b} references item index {i}")));
            }
        }
        Ok(())
    }

    fn load_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .names()
            .iter()
            .zip(self.params.values())
            .map(|(name, v)| {
                let var = tape.param(v.clone());
                tape.label(var, name.clone())
            })
            .collect()
    }

    fn encode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        inputs: &ModelInputs,
        members: &[Vec<usize>],
        mut noise: Option<&mut ChaCha8Rng>,
    ) -> Encoded {
        let var = |name: &str| vars[self.params.position(name).unwrap_or_else(|| panic!("missing {name}"))];
        let cfg = &self.config;
        let ids = var("item_id");
        let feats: BTreeMap<Modality, Var> = inputs
            .features
            .iter()
            .map(|(&m, f)| {
                let c = tape.constant(f.clone());
                (m, tape.label(c, format!("features.{m}")))
            })
            .collect();

        let projected_isl = self.wiring.implicit && cfg.isl_feature_space == FeatureSpace::Projected;
        let mut mu = BTreeMap::new();
        if self.wiring.characteristic || projected_isl {
            for (&m, &f) in &feats {
                let w = var(&format!("proj.{m}.weight"));
                let b = var(&format!("proj.{m}.bias"));
                let y = esl::project_tape(tape, f, w, b);
                mu.insert(m, tape.label(y, format!("projected.{m}")));
            }
        }

        let p = self.wiring.characteristic.then(|| {
            let projected: Vec<Var> = mu.values().copied().collect();
            let sem = esl::fuse_tape(tape, &projected, var("fusion"));
            let layers = |scope: &str, n: usize| -> Vec<AttnVars> {
                (0..n)
                    .map(|l| AttnVars {
                        key: var(&format!("{scope}.{l}.key")),
                        query: var(&format!("{scope}.{l}.query")),
                    })
                    .collect()
            };
            let p_i = esl::item_characteristic_tape(tape, sem, ids, &layers("item_attn", cfg.l1));
            let p_i = tape.label(p_i, "p_items");
            let p_b = esl::bundle_characteristic_tape(tape, p_i, members, &layers("bundle_attn", cfg.l2), 0);
            (p_i, tape.label(p_b, "p_bundles"))
        });

        let c_i = if self.wiring.collaborative {
            let layers: Vec<CollabVars> = (0..cfg.n)
                .map(|n| CollabVars {
                    target: var(&format!("collab.{n}.target")),
                    source: var(&format!("collab.{n}.source")),
                    bias: var(&format!("collab.{n}.bias")),
                    context: var(&format!("collab.{n}.context")),
                })
                .collect();
            let c = esl::collaborative_tape(
                tape,
                ids,
                inputs.neighbors.clone(),
                &layers,
                cfg.beta,
                cfg.leaky_slope,
                cfg.collab_mode,
            );
            tape.label(c, "c_items")
        } else {
            ids
        };

        let (g_i, g_b) = match p {
            Some((p_i, p_b)) if self.wiring.collaborative => {
                let c_b = esl::bundle_mean_tape(tape, c_i, members);
                let c_b = tape.label(c_b, "c_bundles");
                (
                    esl::mix_tape(tape, p_i, c_i, self.wiring.gamma),
                    esl::mix_tape(tape, p_b, c_b, self.wiring.gamma),
                )
            }
            Some((p_i, p_b)) => (p_i, p_b),
            None => (c_i, esl::bundle_mean_tape(tape, c_i, members)),
        };
        let g_i = tape.label(g_i, "g_items");
        let g_b = tape.label(g_b, "g_bundles");

        let phi = self.wiring.implicit.then(|| {
            let y = Arc::new(Csr::indicator(self.n_items, members));
            let mut item_states = Vec::new();
            let mut bundle_states = Vec::new();
            for (&m, &raw) in &feats {
                let input = if projected_isl { mu[&m] } else { raw };
                let (fi, fb) = isl::dependency_tape(tape, input, var(&format!("hyperedge.{m}")), y.clone());
                let mut draw = |v: Var| {
                    noise.as_deref_mut().map(|rng| {
                        let (r, c) = tape.value(v).dim();
                        isl::logistic_noise(r, c, rng)
                    })
                };
                let ni = draw(fi);
                let nb = draw(fb);
                let fih = isl::relax_tape(tape, fi, cfg.tau_gumbel, ni);
                let fbh = isl::relax_tape(tape, fb, cfg.tau_gumbel, nb);
                let fih = tape.label(fih, format!("dependency_items.{m}"));
                let fbh = tape.label(fbh, format!("dependency_bundles.{m}"));
                let (si, sb) = isl::propagate_tape(tape, fih, fbh, c_i, cfg.z);
                item_states.push(si);
                bundle_states.push(sb);
            }
            let phi_i = isl::finalize_tape(tape, &item_states, cfg.p_norm);
            let phi_b = isl::finalize_tape(tape, &bundle_states, cfg.p_norm);
            (tape.label(phi_i, "phi_items"), tape.label(phi_b, "phi_bundles"))
        });

        Encoded { g_i, g_b, phi }
    }

    /// Training forward in the auto-encoder regime: `members` are both the
    /// bundle input and the reconstruction targets.
    pub fn loss_graph(
        &self,
        inputs: &ModelInputs,
        members: &[Vec<usize>],
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<LossGraph> {
        self.check_inputs(inputs, members)?;
        let cfg = &self.config;
        let mut tape = Tape::new();
        let vars = self.load_params(&mut tape);
        let enc = self.encode(&mut tape, &vars, inputs, members, noise);
        let phi_pair = enc.phi.map(|(pi, pb)| (pb, pi));
        let scores = objectives::score_tape(&mut tape, enc.g_b, enc.g_i, phi_pair);
        let scores = tape.label(scores, "scores");
        let targets = Arc::new(Csr::indicator(self.n_items, members));
        let nll = objectives::nll_tape(&mut tape, scores, targets);
        let nll = tape.label(nll, "nll");

        let mut terms = vec![(nll, 1.0)];
        let (mut mad_item, mut mad_bundle) = (None, None);
        if let (Some((phi_i, phi_b)), true) = (enc.phi, self.wiring.lambda1 > 0.0) {
            let (a, p) = match cfg.negative_scope {
                NegativeScope::Full => (enc.g_i, phi_i),
                NegativeScope::InBatch => {
                    let mut used: Vec<usize> = members.iter().flatten().copied().collect();
                    used.sort_unstable();
                    used.dedup();
                    let picks: Vec<Option<usize>> = used.iter().map(|&i| Some(i)).collect();
                    let g = Arc::new(Csr::gather(self.n_items, &picks));
                    (tape.spmm(g.clone(), enc.g_i), tape.spmm(g, phi_i))
                }
            };
            if tape.value(a).nrows() >= 2 {
                let l = objectives::infonce_tape(&mut tape, a, p, cfg.tau_infonce);
                mad_item = Some(tape.label(l, "mad_item"));
            }
            if members.len() >= 2 {
                let l = objectives::infonce_tape(&mut tape, enc.g_b, phi_b, cfg.tau_infonce);
                mad_bundle = Some(tape.label(l, "mad_bundle"));
            }
        }
        terms.extend(mad_item.iter().chain(&mad_bundle).map(|&v| (v, self.wiring.lambda1)));

        let squares: Vec<(Var, f64)> = vars.iter().map(|&v| (tape.sum_squares(v), 1.0)).collect();
        let reg = tape.linear(&squares);
        let reg = tape.label(reg, "reg");
        terms.push((reg, cfg.lambda2));
        let total = tape.linear(&terms);
        let total = tape.label(total, "total");

        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        let report = objectives::joint_loss(
            tape.scalar(nll),
            val(mad_item),
            val(mad_bundle),
            tape.scalar(reg),
            self.wiring.lambda1,
            cfg.lambda2,
        )?;
        Ok(LossGraph {
            tape,
            params: vars,
            total,
            report,
        })
    }

    /// Loss report and one gradient per parameter (in store order). Fails
    /// with the first non-finite tensor when the forward pass diverges.
    pub fn gradients(
        &self,
        inputs: &ModelInputs,
        members: &[Vec<usize>],
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossReport, Vec<Array2<f64>>)> {
        let g = self.loss_graph(inputs, members, noise)?;
        if let Some(bad) = g.tape.first_non_finite() {
            return Err(Error::NonFinite(bad));
        }
        let mut grads = g.tape.backward(g.total);
        let out = g
            .params
            .iter()
            .zip(self.params.values())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        Ok((g.report, out))
    }

    /// Noise-free embeddings for the bundles given by `members`.
    pub fn embed(&self, inputs: &ModelInputs, members: &[Vec<usize>]) -> Result<Embeddings> {
        self.check_inputs(inputs, members)?;
        let mut tape = Tape::new();
        let vars = self.load_params(&mut tape);
        let enc = self.encode(&mut tape, &vars, inputs, members, None);
        if let Some(bad) = tape.first_non_finite() {
            return Err(Error::NonFinite(bad));
        }
        Ok(Embeddings {
            g_items: tape.value(enc.g_i).clone(),
            g_bundles: tape.value(enc.g_b).clone(),
            phi_items: enc.phi.map(|(p, _)| tape.value(p).clone()),
            phi_bundles: enc.phi.map(|(_, p)| tape.value(p).clone()),
        })
    }

    /// Retrieval scores `bundles × items` for the bundles given by `members`.
    pub fn scores(&self, inputs: &ModelInputs, members: &[Vec<usize>]) -> Result<Array2<f64>> {
        let e = self.embed(inputs, members)?;
        let mut s = e.g_bundles.dot(&e.g_items.t());
        if let (Some(pb), Some(pi)) = (&e.phi_bundles, &e.phi_items) {
            s += &pb.dot(&pi.t());
        }
        Ok(s)
    }
}
