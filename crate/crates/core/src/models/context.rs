use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crate::graph::TemporalGraph;
use crate::sparse::CsrMatrix;

static NEXT_CONTEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Model-facing view of one graph: features plus lazily built propagation
/// operators. Each context carries a unique id so models can tell when the
/// graph under them changed.
#[derive(Debug)]
pub struct GraphContext {
    id: u64,
    features: Arc<CsrMatrix>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    mean_op: OnceLock<Arc<CsrMatrix>>,
    attention: OnceLock<Arc<CsrMatrix>>,
    sym_norm: OnceLock<Arc<CsrMatrix>>,
}

impl GraphContext {
    pub fn new(g: &TemporalGraph) -> Self {
        let n = g.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for u in 0..n {
            neighbors.extend_from_slice(g.neighbors(u));
            offsets.push(neighbors.len());
        }
        Self {
            id: NEXT_CONTEXT_ID.fetch_add(1, Ordering::Relaxed),
            features: Arc::new(g.features().clone()),
            offsets,
            neighbors,
            mean_op: OnceLock::new(),
            attention: OnceLock::new(),
            sym_norm: OnceLock::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn features(&self) -> &Arc<CsrMatrix> {
        &self.features
    }

    fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Row-normalized adjacency: row `i` averages the neighbors of `i`.
    /// Isolated nodes have an empty row.
    pub fn mean_operator(&self) -> &Arc<CsrMatrix> {
        self.mean_op.get_or_init(|| {
            let n = self.num_nodes();
            let values = (0..n)
                .flat_map(|u| {
                    let d = self.neighbors(u).len();
                    std::iter::repeat_n(1.0 / d as f64, d)
                })
                .collect();
            Arc::new(
                CsrMatrix::new(n, n, self.offsets.clone(), self.neighbors.clone(), values)
                    .expect("graph adjacency is valid CSR"),
            )
        })
    }

    /// Pattern of `A + I` (each node attends over its neighbors and itself).
    pub fn attention_structure(&self) -> &Arc<CsrMatrix> {
        self.attention.get_or_init(|| Arc::new(self.with_self_loops(|_, _| 1.0)))
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
    pub fn sym_normalized_adjacency(&self) -> &Arc<CsrMatrix> {
        self.sym_norm.get_or_init(|| {
            let inv_sqrt: Vec<f64> = (0..self.num_nodes())
                .map(|u| 1.0 / ((self.neighbors(u).len() + 1) as f64).sqrt())
                .collect();
            Arc::new(self.with_self_loops(|i, j| inv_sqrt[i] * inv_sqrt[j]))
        })
    }

    fn with_self_loops(&self, weight: impl Fn(usize, usize) -> f64) -> CsrMatrix {
        let n = self.num_nodes();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.neighbors.len() + n);
        let mut values = Vec::with_capacity(self.neighbors.len() + n);
        indptr.push(0);
        for i in 0..n {
            let nb = self.neighbors(i);
            let split = nb.partition_point(|&j| j < i);
            for &j in nb[..split].iter().chain(std::iter::once(&i)).chain(&nb[split..]) {
                indices.push(j);
                values.push(weight(i, j));
            }
            indptr.push(indices.len());
        }
        CsrMatrix::new(n, n, indptr, indices, values).expect("sorted rows")
    }

    /// `S^k X` for the symmetric normalized adjacency `S`.
    pub fn propagated_features(&self, k: usize) -> Arc<CsrMatrix> {
        let mut x = Arc::clone(&self.features);
        for _ in 0..k {
            x = Arc::new(
                self.sym_normalized_adjacency()
                    .mul_sparse(&x)
                    .expect("square operator matches feature rows"),
            );
        }
        x
    }
}
