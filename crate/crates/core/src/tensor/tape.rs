//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates gradients. Scalars are `1×1` matrices.
//! Besides the generic algebra the tape carries a few fused kernels that the
//! encoders need (grouped self-attention, neighbourhood attention, row
//! normalisation, softmax cross-entropy) so that their backward passes are
//! exact and cheap.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a stacked batch of variable-length sets: set `g` occupies rows
/// `g*width .. g*width + lens[g]`, the remaining rows of its block are padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetLayout {
    pub width: usize,
    pub lens: Vec<usize>,
}

impl SetLayout {
    pub fn new(width: usize, lens: Vec<usize>) -> Self {
        assert!(lens.iter().all(|&l| l <= width), "set longer than its block");
        SetLayout { width, lens }
    }

    pub fn uniform(width: usize, groups: usize) -> Self {
        SetLayout {
            width,
            lens: vec![width; groups],
        }
    }

    pub fn rows(&self) -> usize {
        self.width * self.lens.len()
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Linear(Vec<(Var, f64)>),
    Hcat(Vec<Var>),
    Vstack(Vec<Var>),
    Spmm {
        s: Arc<Csr>,
        x: Var,
    },
    SoftmaxRows(Var),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    SetAttention {
        x: Var,
        wk: Var,
        wq: Var,
        layout: Arc<SetLayout>,
        attn: Vec<Array2<f64>>,
    },
    NeighborAttention {
        tgt: Var,
        src: Var,
        bias: Var,
        ctx: Var,
        neighbors: Arc<Vec<Vec<usize>>>,
        slope: f64,
        alpha: Vec<Vec<f64>>,
    },
    LpNormalize {
        x: Var,
        p: f64,
        norms: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Arc<Csr>,
        coef: f64,
        probs: Array2<f64>,
    },
    SumSquares(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::AddRow { .. } => "add_row",
            Op::Linear(_) => "linear",
            Op::Hcat(_) => "hcat",
            Op::Vstack(_) => "vstack",
            Op::Spmm { .. } => "spmm",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::SetAttention { .. } => "set_attention",
            Op::NeighborAttention { .. } => "neighbor_attention",
            Op::LpNormalize { .. } => "lp_normalize",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::SumSquares(_) => "sum_squares",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    label: Option<String>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    pub fn label(&mut self, v: Var, name: impl Into<String>) -> Var {
        self.nodes[v.0].label = Some(name.into());
        v
    }

    /// First node (in evaluation order) holding a NaN or infinity, described
    /// by its label or operation name.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.iter().all(|x| x.is_finite()) {
                None
            } else {
                Some(match &n.label {
                    Some(l) => format!("{l} (node {i}, {})", n.op.name()),
                    None => format!("node {i} ({})", n.op.name()),
                })
            }
        })
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, true)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, true, false)
    }

    fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let av = maybe_t(self.value(a).view(), ta);
        let bv = maybe_t(self.value(b).view(), tb);
        assert_eq!(
            av.ncols(),
            bv.nrows(),
            "matmul {:?} x {:?}",
            av.dim(),
            bv.dim()
        );
        let out = av.dot(&bv);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let out = self.value(x) + &r.row(0);
        let rg = self.rg(x) || self.rg(row);
        self.push(out, Op::AddRow { x, row }, rg)
    }

    /// `Σ_k c_k · x_k` over equally shaped inputs.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let mut out = self.value(terms[0].0) * terms[0].1;
        for &(v, c) in &terms[1..] {
            out.scaled_add(c, self.value(v));
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(out, Op::Linear(terms.to_vec()), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.linear(&[(x, c)])
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("hcat row counts");
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(out, Op::Hcat(parts.to_vec()), rg)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("vstack column counts");
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(out, Op::Vstack(parts.to_vec()), rg)
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, s: Arc<Csr>, x: Var) -> Var {
        let out = s.matmul(self.value(x).view());
        let rg = self.rg(x);
        self.push(out, Op::Spmm { s, x }, rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).mapv(|v| leaky(v, slope));
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    /// Scaled dot-product self-attention inside every set of `layout`,
    /// without a value projection:
    /// `out_g = softmax(d^{-1/2} · (X_g Wk)(X_g Wq)ᵀ) · X_g`.
    /// Padding rows neither attend nor are attended to and come out as zero.
    pub fn set_attention(&mut self, x: Var, wk: Var, wq: Var, layout: Arc<SetLayout>) -> Var {
        let xv = self.value(x);
        let d = xv.ncols();
        assert_eq!(xv.nrows(), layout.rows(), "set_attention layout rows");
        let scale = 1.0 / (d as f64).sqrt();
        let wkv = self.value(wk);
        let wqv = self.value(wq);
        let mut out = Array2::zeros(xv.dim());
        let mut attn = Vec::with_capacity(layout.lens.len());
        for (g, &len) in layout.lens.iter().enumerate() {
            let r0 = g * layout.width;
            let xg = xv.slice(s![r0..r0 + len, ..]);
            let k = xg.dot(wkv);
            let q = xg.dot(wqv);
            let mut a = k.dot(&q.t()) * scale;
            for mut row in a.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("contiguous row"));
            }
            out.slice_mut(s![r0..r0 + len, ..]).assign(&a.dot(&xg));
            attn.push(a);
        }
        let rg = self.rg(x) || self.rg(wk) || self.rg(wq);
        self.push(
            out,
            Op::SetAttention {
                x,
                wk,
                wq,
                layout,
                attn,
            },
            rg,
        )
    }

    /// Additive attention over graph neighbourhoods. For node `i` with
    /// neighbours `N_i`: `e_ij = ctx · φ(tgt_i + src_j + bias)`,
    /// `α_i = softmax_j(e_i)`, `out_i = Σ_j α_ij src_j`. Nodes without
    /// neighbours receive a zero message.
    pub fn neighbor_attention(
        &mut self,
        tgt: Var,
        src: Var,
        bias: Var,
        ctx: Var,
        neighbors: Arc<Vec<Vec<usize>>>,
        slope: f64,
    ) -> Var {
        let t = self.value(tgt);
        let sv = self.value(src);
        let b = self.value(bias).row(0).to_owned();
        let c = self.value(ctx).row(0).to_owned();
        let (n, d) = t.dim();
        assert_eq!(neighbors.len(), n, "neighbor lists vs node count");
        let mut out = Array2::zeros((n, d));
        let mut alpha = Vec::with_capacity(n);
        let mut z = vec![0.0; d];
        for (i, nbrs) in neighbors.iter().enumerate() {
            let mut e: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    for k in 0..d {
                        z[k] = leaky(t[[i, k]] + sv[[j, k]] + b[k], slope);
                    }
                    z.iter().zip(c.iter()).map(|(a, b)| a * b).sum()
                })
                .collect();
            softmax_in_place(&mut e);
            let mut dst = out.row_mut(i);
            for (&j, &a) in nbrs.iter().zip(&e) {
                dst.scaled_add(a, &sv.row(j));
            }
            alpha.push(e);
        }
        let rg = [tgt, src, bias, ctx].iter().any(|&v| self.rg(v));
        self.push(
            out,
            Op::NeighborAttention {
                tgt,
                src,
                bias,
                ctx,
                neighbors,
                slope,
                alpha,
            },
            rg,
        )
    }

    /// Divides every row by its L_p norm; all-zero rows stay zero.
    pub fn lp_normalize(&mut self, x: Var, p: f64) -> Var {
        assert!(p >= 1.0, "L_p normalisation needs p >= 1");
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = lp_norm(row.iter().copied(), p);
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(out, Op::LpNormalize { x, p, norms }, rg)
    }

    /// `coef · Σ_r Σ_c −targets[r,c] · log softmax(logits[r])[c]` as a scalar.
    pub fn softmax_xent(&mut self, logits: Var, targets: Arc<Csr>, coef: f64) -> Var {
        let l = self.value(logits);
        assert_eq!(l.dim(), (targets.rows(), targets.cols()), "xent target shape");
        let mut probs = l.clone();
        let mut total = 0.0;
        for (r, mut row) in probs.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("contiguous row");
            let lse = log_sum_exp(slice);
            for (c, w) in targets.row(r) {
                total -= w * (slice[c] - lse);
            }
            for v in slice.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let out = Array2::from_elem((1, 1), coef * total);
        let rg = self.rg(logits);
        self.push(
            out,
            Op::SoftmaxXent {
                logits,
                targets,
                coef,
                probs,
            },
            rg,
        )
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|v| v * v).sum::<f64>();
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), v), Op::SumSquares(x), rg)
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires one.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).dim(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = maybe_t(self.value(a).view(), ta);
                let bv = maybe_t(self.value(b).view(), tb);
                if self.rg(a) {
                    let d = g.dot(&bv.t());
                    acc(a, if ta { d.reversed_axes() } else { d });
                }
                if self.rg(b) {
                    let d = av.t().dot(g);
                    acc(b, if tb { d.reversed_axes() } else { d });
                }
            }
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::AddRow { x, row } => {
                acc(x, g.clone());
                acc(row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Linear(terms) => {
                for &(v, c) in terms {
                    acc(v, g * c);
                }
            }
            Op::Hcat(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, g.slice(s![.., c0..c0 + w]).to_owned());
                    c0 += w;
                }
            }
            Op::Vstack(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(p, g.slice(s![r0..r0 + h, ..]).to_owned());
                    r0 += h;
                }
            }
            Op::Spmm { s, x } => acc(*x, s.t_matmul(g.view())),
            &Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                Zip::from(d.rows_mut())
                    .and(y.rows())
                    .and(g.rows())
                    .for_each(|mut dr, yr, gr| {
                        let dot = yr.dot(&gr);
                        Zip::from(&mut dr)
                            .and(&yr)
                            .and(&gr)
                            .for_each(|o, &yv, &gv| *o = yv * (gv - dot));
                    });
                acc(x, d);
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = self.value(x);
                let mut d = g.clone();
                Zip::from(&mut d).and(xv).for_each(|o, &v| {
                    if v < 0.0 {
                        *o *= slope
                    }
                });
                acc(x, d);
            }
            Op::SetAttention {
                x,
                wk,
                wq,
                layout,
                attn,
            } => {
                let xv = self.value(*x);
                let wkv = self.value(*wk);
                let wqv = self.value(*wq);
                let scale = 1.0 / (xv.ncols() as f64).sqrt();
                let mut dx = Array2::zeros(xv.dim());
                let mut dwk = Array2::zeros(wkv.dim());
                let mut dwq = Array2::zeros(wqv.dim());
                for (gi, (&len, a)) in layout.lens.iter().zip(attn).enumerate() {
                    let r0 = gi * layout.width;
                    let xg = xv.slice(s![r0..r0 + len, ..]);
                    let gg = g.slice(s![r0..r0 + len, ..]);
                    let k = xg.dot(wkv);
                    let q = xg.dot(wqv);
                    let mut dxg = a.t().dot(&gg);
                    let da = gg.dot(&xg.t());
                    let mut ds = Array2::zeros(a.dim());
                    Zip::from(ds.rows_mut())
                        .and(a.rows())
                        .and(da.rows())
                        .for_each(|mut o, ar, dr| {
                            let dot = ar.dot(&dr);
                            Zip::from(&mut o)
                                .and(&ar)
                                .and(&dr)
                                .for_each(|o, &av, &dv| *o = av * (dv - dot) * scale);
                        });
                    let dk = ds.dot(&q);
                    let dq = ds.t().dot(&k);
                    dxg += &dk.dot(&wkv.t());
                    dxg += &dq.dot(&wqv.t());
                    dwk += &xg.t().dot(&dk);
                    dwq += &xg.t().dot(&dq);
                    dx.slice_mut(s![r0..r0 + len, ..]).assign(&dxg);
                }
                acc(*x, dx);
                acc(*wk, dwk);
                acc(*wq, dwq);
            }
            Op::NeighborAttention {
                tgt,
                src,
                bias,
                ctx,
                neighbors,
                slope,
                alpha,
            } => {
                let t = self.value(*tgt);
                let sv = self.value(*src);
                let b = self.value(*bias).row(0);
                let c = self.value(*ctx).row(0);
                let (n, d) = t.dim();
                let mut dt = Array2::zeros((n, d));
                let mut dsrc = Array2::zeros((n, d));
                let mut db = Array2::zeros((1, d));
                let mut dc = Array2::zeros((1, d));
                let mut z = vec![0.0; d];
                for (i, nbrs) in neighbors.iter().enumerate() {
                    if nbrs.is_empty() {
                        continue;
                    }
                    let gi = g.row(i);
                    let al = &alpha[i];
                    let dal: Vec<f64> = nbrs.iter().map(|&j| gi.dot(&sv.row(j))).collect();
                    let mean: f64 = al.iter().zip(&dal).map(|(a, d)| a * d).sum();
                    for (k, &j) in nbrs.iter().enumerate() {
                        dsrc.row_mut(j).scaled_add(al[k], &gi);
                        let de = al[k] * (dal[k] - mean);
                        if de == 0.0 {
                            continue;
                        }
                        for m in 0..d {
                            z[m] = t[[i, m]] + sv[[j, m]] + b[m];
                        }
                        for m in 0..d {
                            let h = leaky(z[m], *slope);
                            dc[[0, m]] += de * h;
                            let dz = de * c[m] * if z[m] < 0.0 { *slope } else { 1.0 };
                            dt[[i, m]] += dz;
                            dsrc[[j, m]] += dz;
                            db[[0, m]] += dz;
                        }
                    }
                }
                acc(*tgt, dt);
                acc(*src, dsrc);
                acc(*bias, db);
                acc(*ctx, dc);
            }
            Op::LpNormalize { x, p, norms } => {
                let xv = self.value(*x);
                let mut d = Array2::zeros(xv.dim());
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let gx = gr.dot(&xr);
                    let np1 = n.powf(*p - 1.0);
                    for k in 0..xr.len() {
                        let xk = xr[k];
                        let dn = xk.signum() * xk.abs().powf(*p - 1.0) / np1;
                        d[[r, k]] = gr[k] / n - gx / (n * n) * dn;
                    }
                }
                acc(*x, d);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                coef,
                probs,
            } => {
                let up = g[[0, 0]] * coef;
                let mut d = Array2::zeros(probs.dim());
                for r in 0..probs.nrows() {
                    let wsum: f64 = targets.row(r).map(|(_, w)| w).sum();
                    if wsum == 0.0 {
                        continue;
                    }
                    let mut dr = d.row_mut(r);
                    dr.scaled_add(up * wsum, &probs.row(r));
                    for (c, w) in targets.row(r) {
                        dr[c] -= up * w;
                    }
                }
                acc(*logits, d);
            }
            &Op::SumSquares(x) => acc(x, self.value(x) * (2.0 * g[[0, 0]])),
        }
    }
}

fn maybe_t(v: ArrayView2<'_, f64>, t: bool) -> ArrayView2<'_, f64> {
    if t {
        v.reversed_axes()
    } else {
        v
    }
}

#[inline]
pub(crate) fn leaky(v: f64, slope: f64) -> f64 {
    if v < 0.0 {
        v * slope
    } else {
        v
    }
}

/// Numerically stable in-place softmax (max subtraction).
pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn lp_norm(xs: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 2.0 {
        xs.map(|v| v * v).sum::<f64>().sqrt()
    } else if p == 1.0 {
        xs.map(f64::abs).sum()
    } else {
        xs.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences of `f` around every entry of `inputs`,
    /// compared with the tape gradient.
    fn check<F>(inputs: Vec<Array2<f64>>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |xs: &[Array2<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
            let o = f(&mut t, &vs);
            t.scalar(o)
        };
        let h = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .map(|g| g.as_standard_layout().to_owned())
                .unwrap_or_else(|| Array2::zeros(x.dim()));
            for idx in 0..x.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += h;
                minus[k].as_slice_mut().unwrap()[idx] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(err < 1e-5, "input {k} entry {idx}: analytic {a} numeric {numeric}");
            }
        }
    }

    fn weights(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Arc<Csr> {
        let rows: Vec<Vec<(usize, f64)>> = (0..r)
            .map(|_| (0..c).filter(|_| rng.gen_bool(0.5)).map(|j| (j, 1.0)).collect())
            .collect();
        Arc::new(Csr::from_rows(c, &rows))
    }

    #[test]
    fn matmul_variants_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 5, 4);
        check(vec![a, b, c], |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let ca = t.matmul_nt(v[2], v[0]);
            let x = t.matmul_tn(ab, ab);
            let y = t.hcat(&[ab, ab]);
            let s1 = t.sum_squares(x);
            let s2 = t.sum_squares(ca);
            let s3 = t.sum_squares(y);
            t.linear(&[(s1, 0.5), (s2, -0.3), (s3, 0.1)])
        });
    }

    #[test]
    fn softmax_leaky_and_rows_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 4, 3);
        let r = rand_mat(&mut rng, 1, 3);
        let w = rand_mat(&mut rng, 4, 3);
        check(vec![x, r, w], |t, v| {
            let a = t.add_row(v[0], v[1]);
            let l = t.leaky_relu(a, 0.2);
            let s = t.softmax_rows(l);
            let st = t.vstack(&[s, v[2]]);
            let q = t.matmul_nt(st, v[2]);
            t.sum_squares(q)
        });
    }

    #[test]
    fn set_attention_gradients_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = Arc::new(SetLayout::new(3, vec![3, 1, 2]));
        let x = rand_mat(&mut rng, 9, 4);
        let wk = rand_mat(&mut rng, 4, 4);
        let wq = rand_mat(&mut rng, 4, 4);
        let probe = rand_mat(&mut rng, 9, 4);
        check(vec![x, wk, wq], move |t, v| {
            let y = t.set_attention(v[0], v[1], v[2], layout.clone());
            let p = t.constant(probe.clone());
            let z = t.matmul_tn(y, p);
            t.sum_squares(z)
        });
    }

    #[test]
    fn neighbor_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nbrs = Arc::new(vec![vec![1, 2], vec![0], vec![0, 1, 3], vec![2], vec![]]);
        let tgt = rand_mat(&mut rng, 5, 3);
        let src = rand_mat(&mut rng, 5, 3);
        let b = rand_mat(&mut rng, 1, 3);
        let c = rand_mat(&mut rng, 1, 3);
        let probe = rand_mat(&mut rng, 5, 3);
        check(vec![tgt, src, b, c], move |t, v| {
            let y = t.neighbor_attention(v[0], v[1], v[2], v[3], nbrs.clone(), 0.2);
            let p = t.constant(probe.clone());
            let z = t.matmul_tn(y, p);
            t.sum_squares(z)
        });
    }

    #[test]
    fn lp_normalize_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 3, 4);
        let probe = rand_mat(&mut rng, 3, 4);
        for p in [1.5, 2.0, 3.0] {
            let probe = probe.clone();
            check(vec![x.clone()], move |t, v| {
                let y = t.lp_normalize(v[0], p);
                let q = t.constant(probe.clone());
                let z = t.matmul_nt(y, q);
                t.sum_squares(z)
            });
        }
    }

    #[test]
    fn softmax_xent_and_spmm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_mat(&mut rng, 4, 5);
        let w = weights(&mut rng, 4, 5);
        let s = Arc::new(Csr::from_rows(4, &[vec![(0, 0.5), (3, 0.5)], vec![(2, 1.0)]]));
        check(vec![x], move |t, v| {
            let sp = t.spmm(s.clone(), v[0]);
            let both = t.vstack(&[v[0], sp]);
            let w2 = Arc::new(Csr::from_rows(
                5,
                &(0..6)
                    .map(|r| if r < 4 { w.row(r).collect() } else { vec![(r - 4, 1.0)] })
                    .collect::<Vec<_>>(),
            ));
            t.softmax_xent(both, w2, 0.3)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Array2::ones((2, 2)));
        let p = t.param(Array2::ones((2, 2)));
        let m = t.matmul(c, p);
        let s = t.sum_squares(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }

    #[test]
    fn non_finite_is_reported_by_label() {
        let mut t = Tape::new();
        let a = t.constant(Array2::from_elem((1, 1), f64::NAN));
        t.label(a, "poison");
        let b = t.scale(a, 2.0);
        let _ = b;
        assert!(t.first_non_finite().unwrap().starts_with("poison"));
    }
}
