use ndarray::{Array2, ArrayView2};

/// Compressed sparse row matrix with `f64` values.
///
/// Column indices within a row are kept in insertion order; constructors
/// in this crate always insert them sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                assert!(c < cols, "column {c} out of bounds for {cols} columns");
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Row-stochastic averaging matrix: row `r` holds `1/|groups[r]|` at
    /// every column in `groups[r]`.
    pub fn mean_pool(cols: usize, groups: &[Vec<usize>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = groups
            .iter()
            .map(|g| {
                let w = if g.is_empty() { 0.0 } else { 1.0 / g.len() as f64 };
                g.iter().map(|&c| (c, w)).collect()
            })
            .collect();
        Csr::from_rows(cols, &rows)
    }

    /// Binary indicator matrix: row `r` has a one at every column in `sets[r]`.
    pub fn indicator(cols: usize, sets: &[Vec<usize>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = sets
            .iter()
            .map(|s| s.iter().map(|&c| (c, 1.0)).collect())
            .collect();
        Csr::from_rows(cols, &rows)
    }

    /// Row selector: output row `r` copies input row `picks[r]`. `None`
    /// produces a zero row (padding).
    pub fn gather(cols: usize, picks: &[Option<usize>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = picks
            .iter()
            .map(|p| p.map(|c| vec![(c, 1.0)]).unwrap_or_default())
            .collect();
        Csr::from_rows(cols, &rows)
    }

    pub fn identity(n: usize) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Csr::from_rows(n, &rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · x`
    pub fn matmul(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, x.nrows(), "sparse matmul inner dimension");
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for r in 0..self.rows {
            let mut dst = out.row_mut(r);
            for (c, v) in self.row(r) {
                dst.scaled_add(v, &x.row(c));
            }
        }
        out
    }

    /// `selfᵀ · x`
    pub fn t_matmul(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, x.nrows(), "sparse transposed matmul inner dimension");
        let mut out = Array2::zeros((self.cols, x.ncols()));
        for r in 0..self.rows {
            let src = x.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_dense() {
        let s = Csr::from_rows(3, &[vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -1.0)]]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(s.matmul(x.view()), s.to_dense().dot(&x));
        let y = array![[1.0], [2.0], [3.0]];
        assert_eq!(s.t_matmul(y.view()), s.to_dense().t().dot(&y));
    }

    #[test]
    fn mean_pool_rows_sum_to_one() {
        let s = Csr::mean_pool(5, &[vec![0, 1, 4], vec![2]]);
        let d = s.to_dense();
        for r in d.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
