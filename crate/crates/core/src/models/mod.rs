//! Node classifiers: a graph-agnostic MLP, Simplified GCN, GraphSAGE-mean
//! and a graph attention network, all with two graph layers.

mod checkpoint;
mod context;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AttentionSpec, HeadCombine, ParamSet, Tape, Var};
use crate::sparse::CsrMatrix;

pub use checkpoint::Checkpoint;
pub use context::GraphContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Sgc,
    Sage,
    Gat,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Mlp,
        Architecture::Sgc,
        Architecture::Sage,
        Architecture::Gat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Sgc => "sgc",
            Architecture::Sage => "sage",
            Architecture::Gat => "gat",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Architecture::Mlp),
            "sgc" | "simplified-gcn" => Ok(Architecture::Sgc),
            "sage" | "graphsage" | "graphsage-mean" => Ok(Architecture::Sage),
            "gat" => Ok(Architecture::Gat),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Shape and regularization of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    /// Output width, i.e. the number of known classes.
    pub num_classes: usize,
    /// Hidden width per head. Zero turns the MLP into logistic regression.
    pub hidden: usize,
    /// Attention heads of the first GAT layer.
    pub heads: usize,
    /// Power of the propagation operator in Simplified GCN.
    pub propagation_steps: usize,
    pub dropout: f64,
    /// LeakyReLU slope inside GAT attention scores.
    pub negative_slope: f64,
}

impl ModelSpec {
    /// Default layer sizes: MLP 64, GraphSAGE 32, GAT 4 heads of 8, SGC with
    /// two propagation steps; dropout 0.5 everywhere.
    pub fn new(arch: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let (hidden, heads) = match arch {
            Architecture::Mlp => (64, 1),
            Architecture::Sgc => (0, 1),
            Architecture::Sage => (32, 1),
            Architecture::Gat => (8, 4),
        };
        Self {
            arch,
            input_dim,
            num_classes,
            hidden,
            heads,
            propagation_steps: 2,
            dropout: 0.5,
            negative_slope: 0.2,
        }
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("output width must be at least 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        match self.arch {
            Architecture::Sage | Architecture::Gat if self.hidden == 0 => Err(
                Error::InvalidArgument(format!("{} needs a hidden layer", self.arch)),
            ),
            Architecture::Gat if self.heads == 0 => {
                Err(Error::InvalidArgument("gat needs at least one head".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Uniform Glorot bound for a `fan_in × fan_out` weight.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = glorot_limit(rows, cols);
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

pub const OUT_WEIGHT: &str = "out.weight";
pub const OUT_BIAS: &str = "out.bias";
const OUT_ATTN_SRC: &str = "out.attn_src";
const OUT_ATTN_DST: &str = "out.attn_dst";

/// Result of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Tape handles of the parameters, in [`ParamSet`] order.
    pub params: Vec<Var>,
    /// Attention outputs, one per GAT layer.
    pub attention: Vec<Var>,
}

/// Parameters of one classifier plus per-graph caches.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParamSet,
    /// `S^K X` for the context with the given id.
    sgc_cache: Option<(u64, Arc<CsrMatrix>)>,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let d = spec.input_dim;
        let c = spec.num_classes;
        let h = spec.hidden;
        let mut params = ParamSet::new();
        match spec.arch {
            Architecture::Mlp if h > 0 => {
                params.push("layer0.weight", glorot(d, h, rng));
                params.push("layer0.bias", Matrix::zeros(1, h));
                params.push(OUT_WEIGHT, glorot(h, c, rng));
                params.push(OUT_BIAS, Matrix::zeros(1, c));
            }
            Architecture::Mlp | Architecture::Sgc => {
                params.push(OUT_WEIGHT, glorot(d, c, rng));
                params.push(OUT_BIAS, Matrix::zeros(1, c));
            }
            Architecture::Sage => {
                params.push("layer0.weight", glorot(2 * d, h, rng));
                params.push("layer0.bias", Matrix::zeros(1, h));
                params.push(OUT_WEIGHT, glorot(2 * h, c, rng));
                params.push(OUT_BIAS, Matrix::zeros(1, c));
            }
            Architecture::Gat => {
                let heads = spec.heads;
                params.push("layer0.weight", glorot(d, heads * h, rng));
                params.push("layer0.attn_src", glorot(heads, h, rng));
                params.push("layer0.attn_dst", glorot(heads, h, rng));
                params.push("layer0.bias", Matrix::zeros(1, heads * h));
                params.push(OUT_WEIGHT, glorot(heads * h, c, rng));
                params.push(OUT_ATTN_SRC, glorot(1, c, rng));
                params.push(OUT_ATTN_DST, glorot(1, c, rng));
                params.push(OUT_BIAS, Matrix::zeros(1, c));
            }
        }
        Ok(Self {
            spec,
            params,
            sgc_cache: None,
        })
    }

    pub fn init_seeded(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::init(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Rebuilds a model from stored parameters, checking their shapes.
    pub fn from_parts(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        let reference = Self::init_seeded(spec, 0)?;
        let same_layout = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
        if !same_layout {
            return Err(Error::InvalidArgument(format!(
                "parameters do not match the {} layout",
                spec.arch
            )));
        }
        Ok(Self {
            spec,
            params,
            sgc_cache: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Adds `extra` output classes. New weight columns are Glorot-initialized
    /// for the widened shape; new bias and attention entries start at zero.
    /// Every existing parameter keeps its exact value.
    pub fn expand_output_layer<R: Rng + ?Sized>(&mut self, extra: usize, rng: &mut R) -> Result<()> {
        if extra == 0 {
            return Err(Error::InvalidArgument("expansion needs at least one class".into()));
        }
        let new_c = self.spec.num_classes + extra;
        let w = self.params.get(OUT_WEIGHT).expect("output weight");
        let fan_in = w.rows();
        let limit = glorot_limit(fan_in, new_c);
        let mut fresh = Matrix::zeros(fan_in, extra);
        for v in fresh.as_mut_slice() {
            *v = rng.gen_range(-limit..=limit);
        }
        let widened = w.hstack(&fresh)?;
        *self.params.get_mut(OUT_WEIGHT).expect("output weight") = widened;
        for name in [OUT_BIAS, OUT_ATTN_SRC, OUT_ATTN_DST] {
            if let Some(p) = self.params.get_mut(name) {
                *p = p.hstack(&Matrix::zeros(1, extra))?;
            }
        }
        self.spec.num_classes = new_c;
        Ok(())
    }

    fn propagated(&mut self, ctx: &GraphContext) -> Arc<CsrMatrix> {
        match &self.sgc_cache {
            Some((id, x)) if *id == ctx.id() => Arc::clone(x),
            _ => {
                let x = ctx.propagated_features(self.spec.propagation_steps);
                self.sgc_cache = Some((ctx.id(), Arc::clone(&x)));
                x
            }
        }
    }

    /// Whether `S^K X` is cached for this context.
    pub fn has_cached_propagation(&self, ctx: &GraphContext) -> bool {
        matches!(&self.sgc_cache, Some((id, _)) if *id == ctx.id())
    }

    /// Records the forward pass on `tape`. Dropout is active only when an
    /// RNG is supplied.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        ctx: &GraphContext,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let x = ctx.features();
        if x.cols() != self.spec.input_dim {
            return Err(Error::Shape {
                op: "forward",
                lhs: (x.rows(), self.spec.input_dim),
                rhs: x.shape(),
            });
        }
        let p = self.params.register(tape);
        let rate = if rng.is_some() { self.spec.dropout } else { 0.0 };
        let sparse_dropout = |m: &Arc<CsrMatrix>, rng: &mut Option<&mut dyn RngCore>| match rng {
            Some(r) if rate > 0.0 => Arc::new(m.dropout(rate, *r)),
            _ => Arc::clone(m),
        };
        let mut attention = Vec::new();
        let logits = match self.spec.arch {
            Architecture::Mlp if self.spec.hidden > 0 => {
                let xd = sparse_dropout(x, &mut rng);
                let h = tape.spmm(&xd, p[0])?;
                let h = tape.add_row(h, p[1])?;
                let h = tape.relu(h)?;
                let h = dense_dropout(tape, h, rate, &mut rng)?;
                let o = tape.matmul(h, p[2])?;
                tape.add_row(o, p[3])?
            }
            Architecture::Mlp | Architecture::Sgc => {
                let input = if self.spec.arch == Architecture::Sgc {
                    self.propagated(ctx)
                } else {
                    Arc::clone(x)
                };
                let xd = sparse_dropout(&input, &mut rng);
                let o = tape.spmm(&xd, p[0])?;
                tape.add_row(o, p[1])?
            }
            Architecture::Sage => {
                let d = self.spec.input_dim;
                let mean = ctx.mean_operator();
                // [X ‖ mean(X)] U = X U_self + mean(X U_neigh)
                let xd = sparse_dropout(x, &mut rng);
                let u_self = tape.slice_rows(p[0], 0, d)?;
                let u_neigh = tape.slice_rows(p[0], d, 2 * d)?;
                let own = tape.spmm(&xd, u_self)?;
                let nb = tape.spmm(&xd, u_neigh)?;
                let nb = tape.row_mean_aggregate(mean, nb)?;
                let h = tape.add(own, nb)?;
                let h = tape.add_row(h, p[1])?;
                let h = tape.relu(h)?;
                let h = dense_dropout(tape, h, rate, &mut rng)?;
                let hm = tape.row_mean_aggregate(mean, h)?;
                let hc = tape.concat_cols(h, hm)?;
                let o = tape.matmul(hc, p[2])?;
                tape.add_row(o, p[3])?
            }
            Architecture::Gat => {
                let structure = ctx.attention_structure();
                let heads = self.spec.heads;
                let hid = self.spec.hidden;
                let xd = sparse_dropout(x, &mut rng);
                let z = tape.spmm(&xd, p[0])?;
                let a1 = tape.attention(
                    z,
                    p[1],
                    p[2],
                    AttentionSpec {
                        structure: Arc::clone(structure),
                        heads,
                        head_dim: hid,
                        negative_slope: self.spec.negative_slope,
                        combine: HeadCombine::Concat,
                    },
                )?;
                attention.push(a1);
                let h = tape.add_row(a1, p[3])?;
                let h = tape.elu(h)?;
                let h = dense_dropout(tape, h, rate, &mut rng)?;
                let z2 = tape.matmul(h, p[4])?;
                let a2 = tape.attention(
                    z2,
                    p[5],
                    p[6],
                    AttentionSpec {
                        structure: Arc::clone(structure),
                        heads: 1,
                        head_dim: self.spec.num_classes,
                        negative_slope: self.spec.negative_slope,
                        combine: HeadCombine::Mean,
                    },
                )?;
                attention.push(a2);
                tape.add_row(a2, p[7])?
            }
        };
        Ok(Forward {
            logits,
            params: p,
            attention,
        })
    }

    /// Evaluation-mode logits for every node of the context.
    pub fn logits(&mut self, ctx: &GraphContext) -> Result<Matrix> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ctx, None)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Output column with the highest logit for each requested node; ties go
    /// to the lowest column.
    pub fn predict(&mut self, ctx: &GraphContext, nodes: &[usize]) -> Result<Vec<usize>> {
        let logits = self.logits(ctx)?;
        Ok(argmax_rows(&logits, nodes))
    }

    /// Masked cross-entropy over `rows` and its gradient for every parameter.
    pub fn loss_and_gradients(
        &mut self,
        ctx: &GraphContext,
        rows: &[usize],
        targets: &[usize],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ctx, rng)?;
        let loss = tape.masked_cross_entropy(fwd.logits, rows, targets)?;
        let value = tape.value(loss).get(0, 0);
        let mut grads = tape.backward(loss)?;
        let g = fwd
            .params
            .iter()
            .enumerate()
            .map(|(i, &v)| grads.take_or_zeros(v, self.params.value(i).shape()))
            .collect();
        Ok((value, g))
    }
}

fn dense_dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<Var> {
    match rng {
        Some(r) if rate > 0.0 => tape.dropout(x, rate, *r),
        _ => Ok(x),
    }
}

/// Index of the largest entry in each requested row, lowest index on ties.
pub fn argmax_rows(logits: &Matrix, rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
