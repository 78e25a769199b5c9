//! Compressed sparse row matrices, used for node features and propagation
//! operators over graph adjacency.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, PAR_ROWS};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays. Column indices within each row
    /// must be strictly increasing.
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1
            || indices.len() != values.len()
            || indptr.last().copied() != Some(indices.len())
        {
            return Err(Error::InvalidArgument("inconsistent CSR arrays".into()));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::InvalidArgument("indptr must be non-decreasing".into()));
            }
            let cols_r = &indices[indptr[r]..indptr[r + 1]];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has unsorted or duplicate column indices"
                )));
            }
            if let Some(&c) = cols_r.last() {
                if c >= cols {
                    return Err(Error::FeatureIndex { index: c, dim: cols });
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (r, c, v) in triplets {
            if r >= rows {
                return Err(Error::UnknownNode {
                    id: r,
                    num_nodes: rows,
                });
            }
            if c >= cols {
                return Err(Error::FeatureIndex { index: c, dim: cols });
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut entries in per_row {
            entries.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in entries {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let triplets = (0..m.rows()).flat_map(|r| {
            (0..m.cols())
                .filter(move |&c| m.get(r, c) != 0.0)
                .map(move |c| (r, c, m.get(r, c)))
        });
        Self::from_triplets(m.rows(), m.cols(), triplets).expect("in-range triplets")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Sparse × dense product.
    pub fn mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let width = rhs.cols();
        let mut out = Matrix::zeros(self.rows, width);
        if width == 0 {
            return Ok(out);
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &b) in out_row.iter_mut().zip(rhs.row(c)) {
                    *o += v * b;
                }
            }
        };
        if self.rows >= PAR_ROWS {
            out.as_mut_slice()
                .par_chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        } else {
            out.as_mut_slice()
                .chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        }
        Ok(out)
    }

    /// Sparse × sparse product.
    pub fn mul_sparse(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "spgemm",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut acc = vec![0.0; rhs.cols];
        let mut touched = vec![false; rhs.cols];
        let mut pattern: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&c, &b) in rc.iter().zip(rv) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                indices.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
                touched[c] = false;
            }
            pattern.clear();
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: self.rows,
            cols: rhs.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Copy of the listed rows, in order.
    pub fn select_rows(&self, ids: &[usize]) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(ids.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in ids {
            let (c, v) = self.row(r);
            indices.extend_from_slice(c);
            values.extend_from_slice(v);
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: ids.len(),
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Scale every non-zero row to unit L2 norm. Rows already within a few
    /// ulps of unit norm are left untouched, so normalizing is idempotent.
    pub fn normalize_rows_l2(&mut self) {
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let norm = self.values[span.clone()]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 && (norm - 1.0).abs() > 4.0 * f64::EPSILON {
                for v in &mut self.values[span] {
                    *v /= norm;
                }
            }
        }
    }

    pub fn row_l2_norm(&self, r: usize) -> f64 {
        self.row(r).1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Inverted dropout over stored entries: each entry is kept with
    /// probability `1 - rate` and scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> CsrMatrix {
        if rate <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if rng.gen::<f64>() < keep {
                    indices.push(c);
                    values.push(v * scale);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }
}
