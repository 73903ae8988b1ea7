//! Row-compressed sparse matrices and a small row-major dense matrix.
//!
//! All products iterate in a fixed order per output row, so results are
//! bit-identical regardless of how rayon schedules the rows.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Node-by-feature matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Borrowed view of one CSR row.
#[derive(Debug, Clone, Copy)]
pub struct SparseRow<'a> {
    pub dim: usize,
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl SparseRow<'_> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Dot product over the shared support, accumulated in ascending column order.
    pub fn dot(&self, other: &SparseRow<'_>) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// Visits `f(u_c, v_c)` for every column in the union of both supports, ascending.
    pub fn zip_union(&self, other: &SparseRow<'_>, mut f: impl FnMut(f64, f64)) {
        let (mut a, mut b) = (0, 0);
        let (ia, ib) = (self.indices, other.indices);
        while a < ia.len() || b < ib.len() {
            if b == ib.len() || (a < ia.len() && ia[a] < ib[b]) {
                f(self.values[a], 0.0);
                a += 1;
            } else if a == ia.len() || ib[b] < ia[a] {
                f(0.0, other.values[b]);
                b += 1;
            } else {
                f(self.values[a], other.values[b]);
                a += 1;
                b += 1;
            }
        }
    }
}

impl SparseFeatureMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::Shape(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                n_rows + 1
            )));
        }
        if row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::Shape("row_ptr must start at 0 and end at nnz".into()));
        }
        if col_idx.len() != values.len() {
            return Err(Error::Shape("col_idx and values differ in length".into()));
        }
        for r in 0..n_rows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(Error::Shape(format!("row_ptr decreases at row {r}")));
            }
            for w in col_idx[s..e].windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Input(format!(
                        "row {r}: column indices not strictly increasing (duplicate or unsorted)"
                    )));
                }
            }
            if let Some(&c) = col_idx[s..e].last() {
                if c as usize >= n_cols {
                    return Err(Error::Bounds(format!("row {r}: column {c} >= n_cols {n_cols}")));
                }
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature value {v}")));
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    /// Builds from unordered `(row, col, value)` triplets; duplicates are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Bounds(format!(
                    "entry ({r},{c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Input(format!("duplicate entry ({},{})", w[0].0, w[0].1)));
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = triplets.iter().map(|t| t.1 as u32).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    /// Row-major dense data; exact zeros are not stored.
    pub fn from_dense(n_rows: usize, n_cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::Shape(format!(
                "dense buffer has {} values, expected {}",
                data.len(),
                n_rows * n_cols
            )));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = data[r * n_cols + c];
                if v != 0.0 {
                    col_idx.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> SparseRow<'_> {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        SparseRow { dim: self.n_cols, indices: &self.col_idx[s..e], values: &self.values[s..e] }
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let row = self.row(r);
            row.indices.iter().zip(row.values).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// Same sparsity pattern, values replaced column-wise or entry-wise by `f(col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let values = self.col_idx.iter().zip(&self.values).map(|(&c, &v)| f(c as usize, v)).collect();
        Self { values, ..self.clone() }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in ascending order, so each transposed row stays sorted
        for r in 0..self.n_rows {
            let row = self.row(r);
            for (&c, &v) in row.indices.iter().zip(row.values) {
                let slot = next[c as usize];
                col_idx[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        Self { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr, col_idx, values }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            out.set(r, c, v);
        }
        out
    }

    /// `self · rhs`, each output row accumulated over the row's nonzeros in column order.
    pub fn mul_dense(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != rhs.rows() {
            return Err(Error::Shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                rhs.rows(),
                rhs.cols()
            )));
        }
        let k = rhs.cols();
        let mut out = DenseMatrix::zeros(self.n_rows, k);
        if k == 0 {
            return Ok(out);
        }
        out.data_mut().par_chunks_mut(k).enumerate().for_each(|(r, dst)| {
            let row = self.row(r);
            for (&c, &v) in row.indices.iter().zip(row.values) {
                let src = rhs.row(c as usize);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        });
        Ok(out)
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot be {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn check(&self, ok: bool, op: &str, other: &DenseMatrix) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{op}: {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )))
        }
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(self.cols == rhs.rows, "matmul", rhs)?;
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        if rhs.cols == 0 {
            return Ok(out);
        }
        out.data.par_chunks_mut(rhs.cols).enumerate().for_each(|(r, dst)| {
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        });
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(self.rows == rhs.rows, "t_matmul", rhs)?;
        let mut out = DenseMatrix::zeros(self.cols, rhs.cols);
        if rhs.cols == 0 {
            return Ok(out);
        }
        out.data.par_chunks_mut(rhs.cols).enumerate().for_each(|(a, dst)| {
            for i in 0..self.rows {
                let s = self.get(i, a);
                if s == 0.0 {
                    continue;
                }
                for (d, b) in dst.iter_mut().zip(rhs.row(i)) {
                    *d += s * b;
                }
            }
        });
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(self.cols == rhs.cols, "matmul_t", rhs)?;
        let mut out = DenseMatrix::zeros(self.rows, rhs.rows);
        if rhs.rows == 0 {
            return Ok(out);
        }
        out.data.par_chunks_mut(rhs.rows).enumerate().for_each(|(r, dst)| {
            let a = self.row(r);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        });
        Ok(out)
    }

    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for row in self.data.chunks_mut(self.cols) {
            for (x, b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry in row `r`; ties go to the lowest column.
    pub fn row_argmax(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseFeatureMatrix {
        SparseFeatureMatrix::from_triplets(3, 4, vec![(0, 1, 1.0), (2, 3, -2.0), (0, 0, 3.0), (1, 2, 0.5)])
            .unwrap()
    }

    #[test]
    fn triplets_are_sorted_into_csr() {
        let m = small();
        assert_eq!(m.row_ptr(), &[0, 2, 3, 4]);
        assert_eq!(m.col_idx(), &[0, 1, 2, 3]);
        assert_eq!(m.values(), &[3.0, 1.0, 0.5, -2.0]);
    }

    #[test]
    fn duplicate_and_out_of_bounds_rejected() {
        assert!(matches!(
            SparseFeatureMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            SparseFeatureMatrix::from_triplets(2, 2, vec![(0, 2, 1.0)]),
            Err(Error::Bounds(_))
        ));
        assert!(matches!(
            SparseFeatureMatrix::from_triplets(2, 2, vec![(0, 1, f64::NAN)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn raw_constructor_checks_row_ptr() {
        assert!(SparseFeatureMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseFeatureMatrix::new(2, 2, vec![1, 1, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseFeatureMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let m = small();
        let t = m.transpose();
        assert_eq!(t.n_rows(), 4);
        assert_eq!(t.to_dense().get(3, 2), -2.0);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn sparse_dense_product_matches_dense() {
        let m = small();
        let rhs = DenseMatrix::from_vec(4, 2, (0..8).map(|x| x as f64).collect()).unwrap();
        let got = m.mul_dense(&rhs).unwrap();
        let want = m.to_dense().matmul(&rhs).unwrap();
        assert_eq!(got, want);
        assert_eq!(got.row(0), &[3.0 * 0.0 + 2.0, 3.0 * 1.0 + 3.0]);
    }

    #[test]
    fn transposed_products_agree() {
        let a = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
        let tm = a.t_matmul(&b).unwrap();
        assert_eq!(tm.get(0, 0), 1.0 * 0.5 + 3.0 * 2.0 + 5.0 * 1.0);
        let mt = a.matmul_t(&b).unwrap();
        assert_eq!(mt.rows(), 3);
        assert_eq!(mt.get(2, 0), 5.0 * 0.5 + 6.0 * -1.0);
    }

    #[test]
    fn union_visits_every_column_once() {
        let m = small();
        let t = SparseFeatureMatrix::from_triplets(1, 4, vec![(0, 1, 2.0), (0, 3, 1.0)]).unwrap();
        let mut seen = Vec::new();
        m.row(0).zip_union(&t.row(0), |a, b| seen.push((a, b)));
        assert_eq!(seen, vec![(3.0, 0.0), (1.0, 2.0), (0.0, 1.0)]);
        assert_eq!(m.row(0).dot(&t.row(0)), 2.0);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let m = DenseMatrix::from_vec(1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(m.row_argmax(0), 1);
        let u = DenseMatrix::from_vec(1, 3, vec![1.0; 3]).unwrap();
        assert_eq!(u.row_argmax(0), 0);
    }
}
