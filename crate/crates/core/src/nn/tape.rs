//! A per-forward-pass tape. Every primitive records its inputs; `backward`
//! walks the tape in reverse and applies each primitive's vector-Jacobian
//! product.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::CsrMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How attention heads are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCombine {
    Concat,
    Mean,
}

/// Static description of a multi-head graph attention layer.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    /// Row `i` lists the nodes `i` attends over (its neighbors and itself).
    pub structure: Arc<CsrMatrix>,
    pub heads: usize,
    pub head_dim: usize,
    pub negative_slope: f64,
    pub combine: HeadCombine,
}

struct Attention {
    z: Var,
    a_src: Var,
    a_dst: Var,
    spec: AttentionSpec,
    /// `alpha[e * heads + h]` for stored edge `e` of the structure.
    alpha: Vec<f64>,
    pre: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Dropout(Var, Vec<f64>),
    SoftmaxRows(Var),
    Attention(Box<Attention>),
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        targets: Vec<usize>,
        probs: Matrix,
    },
    WeightedSum(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that
/// requires one.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves a gradient out, or returns zeros of the given shape if the
    /// value did not influence the output.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    /// Constant sparse matrix times a dense value.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = s.mul_dense(self.value(x))?;
        let rg = self.rg(x);
        self.push("spmm", value, Op::SpMM(Arc::clone(s), x), rg)
    }

    /// Mean over each row's neighbors, given the row-normalized adjacency
    /// operator. Rows without neighbors aggregate to zero.
    pub fn row_mean_aggregate(&mut self, mean_op: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        self.spmm(mean_op, x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push("add", value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xr, xc) = self.shape(x);
        if self.shape(row) != (1, xc) {
            return Err(Error::Shape {
                op: "add_row",
                lhs: (xr, xc),
                rhs: self.shape(row),
            });
        }
        let mut value = self.value(x).clone();
        let b = self.value(row).row(0).to_vec();
        for r in 0..xr {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push("add_row", value, Op::AddRow(x, row), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hstack(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push("concat_cols", value, Op::ConcatCols(a, b), rg)
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start > end || end > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: (rows, cols),
                rhs: (start, end),
            });
        }
        let value = self.value(x).slice_rows(start, end);
        let rg = self.rg(x);
        self.push("slice_rows", value, Op::SliceRows(x, start), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push("relu", value, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x).map(|v| leaky(v, slope));
        let rg = self.rg(x);
        self.push("leaky_relu", value, Op::LeakyRelu(x, slope), rg)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(x);
        self.push("elu", value, Op::Elu(x), rg)
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. A zero rate returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let src = self.value(x);
        let data = src.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Matrix::from_vec(src.rows(), src.cols(), data)?;
        let rg = self.rg(x);
        self.push("dropout", value, Op::Dropout(x, mask), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(x);
        self.push("softmax_rows", value, Op::SoftmaxRows(x), rg)
    }

    /// Multi-head graph attention. `z` holds the transformed node states,
    /// `heads · head_dim` columns wide; `a_src`/`a_dst` are `heads × head_dim`
    /// scoring vectors. For node `i` and each `j` in row `i` of the
    /// structure, the score is `LeakyReLU(a_dst·z_i + a_src·z_j)`; scores are
    /// softmax-normalized per row and head, and the output is the weighted
    /// sum of `z_j`.
    pub fn attention(&mut self, z: Var, a_src: Var, a_dst: Var, spec: AttentionSpec) -> Result<Var> {
        let (n, width) = self.shape(z);
        let (heads, f) = (spec.heads, spec.head_dim);
        if width != heads * f || spec.structure.rows() != n || spec.structure.cols() != n {
            return Err(Error::Shape {
                op: "attention",
                lhs: (n, width),
                rhs: (spec.structure.rows(), heads * f),
            });
        }
        for a in [a_src, a_dst] {
            if self.shape(a) != (heads, f) {
                return Err(Error::Shape {
                    op: "attention",
                    lhs: (heads, f),
                    rhs: self.shape(a),
                });
            }
        }
        let zv = self.value(z);
        let (el, er) = attention_scores(zv, self.value(a_src), self.value(a_dst), heads, f);
        let s = &spec.structure;
        let mut alpha = vec![0.0; s.nnz() * heads];
        let mut pre = vec![0.0; s.nnz() * heads];
        let out_cols = match spec.combine {
            HeadCombine::Concat => heads * f,
            HeadCombine::Mean => f,
        };
        let mut out = Matrix::zeros(n, out_cols);
        let head_scale = match spec.combine {
            HeadCombine::Concat => 1.0,
            HeadCombine::Mean => 1.0 / heads as f64,
        };
        for i in 0..n {
            let span = s.indptr()[i]..s.indptr()[i + 1];
            let cols = &s.indices()[span.clone()];
            for h in 0..heads {
                let mut max = f64::NEG_INFINITY;
                for (k, &j) in cols.iter().enumerate() {
                    let e = span.start + k;
                    let p = el[j * heads + h] + er[i * heads + h];
                    pre[e * heads + h] = p;
                    let sc = leaky(p, spec.negative_slope);
                    alpha[e * heads + h] = sc;
                    max = max.max(sc);
                }
                let mut denom = 0.0;
                for e in span.clone() {
                    let w = (alpha[e * heads + h] - max).exp();
                    alpha[e * heads + h] = w;
                    denom += w;
                }
                let out_off = match spec.combine {
                    HeadCombine::Concat => h * f,
                    HeadCombine::Mean => 0,
                };
                for (k, &j) in cols.iter().enumerate() {
                    let e = span.start + k;
                    let a = alpha[e * heads + h] / denom;
                    alpha[e * heads + h] = a;
                    let zr = &zv.row(j)[h * f..(h + 1) * f];
                    let orow = &mut out.row_mut(i)[out_off..out_off + f];
                    for (o, &zz) in orow.iter_mut().zip(zr) {
                        *o += head_scale * a * zz;
                    }
                }
            }
        }
        let rg = self.rg(z) || self.rg(a_src) || self.rg(a_dst);
        self.push(
            "attention",
            out,
            Op::Attention(Box::new(Attention {
                z,
                a_src,
                a_dst,
                spec,
                alpha,
                pre,
            })),
            rg,
        )
    }

    /// Normalized attention weights of an attention output, indexed as
    /// `alpha[e * heads + h]` over the stored entries of its structure.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(a) => Some(&a.alpha),
            _ => None,
        }
    }

    /// Mean negative log-likelihood of `targets[i]` under
    /// `softmax(logits[rows[i]])`. Returns a `1 × 1` value.
    pub fn masked_cross_entropy(&mut self, logits: Var, rows: &[usize], targets: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let (n, c) = self.shape(logits);
        if rows.len() != targets.len() {
            return Err(Error::Shape {
                op: "masked_cross_entropy",
                lhs: (rows.len(), 1),
                rhs: (targets.len(), 1),
            });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!("mask row {r} out of range for {n} rows")));
        }
        if let Some(&y) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("target {y} out of range for {c} classes")));
        }
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(rows.len(), c);
        let mut total = 0.0;
        for (i, (&r, &y)) in rows.iter().zip(targets).enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            let p = probs.row_mut(i);
            for (pj, &v) in p.iter_mut().zip(row) {
                *pj = (v - lse).exp();
            }
        }
        let value = Matrix::filled(1, 1, total / rows.len() as f64);
        let rg = self.rg(logits);
        self.push(
            "masked_cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// `Σ x ⊙ weights`, a `1 × 1` value. Handy for probing gradients.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix) -> Result<Var> {
        if self.shape(x) != weights.shape() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: self.shape(x),
                rhs: weights.shape(),
            });
        }
        let value = Matrix::filled(1, 1, self.value(x).dot(&weights));
        let rg = self.rg(x);
        self.push("weighted_sum", value, Op::WeightedSum(x, weights), rg)
    }

    /// Gradients of the `1 × 1` value `root` with respect to every value
    /// recorded before it.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(root),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::SpMM(s, x) => {
                acc(*x, s.transpose().mul_dense(g)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*row, db);
            }
            Op::ConcatCols(a, b) => {
                let split = self.shape(*a).1;
                acc(*a, g.slice_cols(0, split));
                acc(*b, g.slice_cols(split, g.cols()));
            }
            Op::SliceRows(x, start) => {
                let (rows, cols) = self.shape(*x);
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, zip_map(g, xv, |gv, v| if v > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                acc(*x, zip_map(g, xv, |gv, v| if v > 0.0 { gv } else { slope * gv }));
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                acc(*x, zip_map(g, xv, |gv, v| if v > 0.0 { gv } else { gv * v.exp() }));
            }
            Op::Dropout(x, mask) => {
                let data = g.as_slice().iter().zip(mask).map(|(a, b)| a * b).collect();
                acc(*x, Matrix::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Attention(att) => self.attention_backward(att, g, &mut acc),
            Op::CrossEntropy {
                logits,
                rows,
                targets,
                probs,
            } => {
                let scale = g.get(0, 0) / rows.len() as f64;
                let (n, c) = self.shape(*logits);
                let mut dl = Matrix::zeros(n, c);
                for (i, (&r, &y)) in rows.iter().zip(targets).enumerate() {
                    let d = dl.row_mut(r);
                    for (dv, &p) in d.iter_mut().zip(probs.row(i)) {
                        *dv += scale * p;
                    }
                    d[y] -= scale;
                }
                acc(*logits, dl);
            }
            Op::WeightedSum(x, w) => {
                let mut dx = w.clone();
                dx.scale(g.get(0, 0));
                acc(*x, dx);
            }
        }
        Ok(())
    }

    fn attention_backward(&self, att: &Attention, g: &Matrix, acc: &mut impl FnMut(Var, Matrix)) {
        let spec = &att.spec;
        let (heads, f) = (spec.heads, spec.head_dim);
        let s = &spec.structure;
        let zv = self.value(att.z);
        let asrc = self.value(att.a_src);
        let adst = self.value(att.a_dst);
        let n = zv.rows();
        let head_scale = match spec.combine {
            HeadCombine::Concat => 1.0,
            HeadCombine::Mean => 1.0 / heads as f64,
        };
        let mut dz = Matrix::zeros(n, heads * f);
        let mut d_el = vec![0.0; n * heads];
        let mut d_er = vec![0.0; n * heads];
        let mut d_alpha = Vec::new();
        for i in 0..n {
            let span = s.indptr()[i]..s.indptr()[i + 1];
            let cols = &s.indices()[span.clone()];
            for h in 0..heads {
                let g_off = match spec.combine {
                    HeadCombine::Concat => h * f,
                    HeadCombine::Mean => 0,
                };
                let gi: Vec<f64> = g.row(i)[g_off..g_off + f].iter().map(|v| v * head_scale).collect();
                d_alpha.clear();
                let mut weighted = 0.0;
                for (k, &j) in cols.iter().enumerate() {
                    let e = span.start + k;
                    let a = att.alpha[e * heads + h];
                    let zj = &zv.row(j)[h * f..(h + 1) * f];
                    let da: f64 = gi.iter().zip(zj).map(|(x, y)| x * y).sum();
                    d_alpha.push(da);
                    weighted += a * da;
                    for (d, &gv) in dz.row_mut(j)[h * f..(h + 1) * f].iter_mut().zip(&gi) {
                        *d += a * gv;
                    }
                }
                for (k, &j) in cols.iter().enumerate() {
                    let e = span.start + k;
                    let a = att.alpha[e * heads + h];
                    let de = a * (d_alpha[k] - weighted);
                    let p = att.pre[e * heads + h];
                    let ds = if p > 0.0 { de } else { spec.negative_slope * de };
                    d_el[j * heads + h] += ds;
                    d_er[i * heads + h] += ds;
                }
            }
        }
        let mut d_src = Matrix::zeros(heads, f);
        let mut d_dst = Matrix::zeros(heads, f);
        for u in 0..n {
            for h in 0..heads {
                let (gl, gr) = (d_el[u * heads + h], d_er[u * heads + h]);
                if gl == 0.0 && gr == 0.0 {
                    continue;
                }
                let zu = &zv.row(u)[h * f..(h + 1) * f];
                for c in 0..f {
                    let idx = h * f + c;
                    d_src.as_mut_slice()[idx] += gl * zu[c];
                    d_dst.as_mut_slice()[idx] += gr * zu[c];
                }
                let dzu = &mut dz.row_mut(u)[h * f..(h + 1) * f];
                for c in 0..f {
                    dzu[c] += gl * asrc.get(h, c) + gr * adst.get(h, c);
                }
            }
        }
        acc(att.z, dz);
        acc(att.a_src, d_src);
        acc(att.a_dst, d_dst);
    }
}

fn attention_scores(z: &Matrix, a_src: &Matrix, a_dst: &Matrix, heads: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let n = z.rows();
    let mut el = vec![0.0; n * heads];
    let mut er = vec![0.0; n * heads];
    for u in 0..n {
        let row = z.row(u);
        for h in 0..heads {
            let zh = &row[h * f..(h + 1) * f];
            el[u * heads + h] = zh.iter().zip(a_src.row(h)).map(|(a, b)| a * b).sum();
            er[u * heads + h] = zh.iter().zip(a_dst.row(h)).map(|(a, b)| a * b).sum();
        }
    }
    (el, er)
}

fn zip_map(g: &Matrix, x: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g.as_slice().iter().zip(x.as_slice()).map(|(&a, &b)| f(a, b)).collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
