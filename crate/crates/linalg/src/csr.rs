//! Compressed-row storage for symmetric sparse operators.
//!
//! Both triangles are stored explicitly. That doubles the memory of a
//! half-stored layout but keeps `matvec` a single streaming pass, and the
//! factorization only reads the entries it needs.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::LinalgError;

/// Symmetric sparse matrix in compressed-row layout.
///
/// Column indices within each row are strictly increasing. The pattern is
/// structurally symmetric when built through [`SparseSymOp::from_pattern`]
/// with a symmetric row list or through [`SparseSymOp::from_triplets`] with
/// symmetric input; [`SparseSymOp::symmetry_defect`] checks the values.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymOp {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymOp {
    /// Builds a zero-valued matrix from per-row column lists.
    ///
    /// Each list is sorted and deduplicated here, so callers may pass
    /// unsorted lists with repeats.
    pub fn from_pattern(n: usize, rows: Vec<Vec<usize>>) -> Result<Self, LinalgError> {
        if rows.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "pattern has {} rows, expected {n}",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            if let Some(&last) = cols.last() {
                if last >= n {
                    return Err(LinalgError::DimensionMismatch(format!(
                        "column index {last} out of range for dimension {n}"
                    )));
                }
            }
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self, LinalgError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut trips: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &trips {
            if i >= n || j >= n {
                return Err(LinalgError::DimensionMismatch(format!(
                    "triplet ({i}, {j}) out of range for dimension {n}"
                )));
            }
        }
        trips.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry exists") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Converts a dense matrix, keeping every entry that is not exactly zero
    /// plus the full diagonal.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::DimensionMismatch(format!(
                "dense matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let trips = (0..n).flat_map(|i| {
            (0..n).filter_map(move |j| {
                let v = a[(i, j)];
                (v != 0.0 || i == j).then_some((i, j, v))
            })
        });
        Self::from_triplets(n, trips)
    }

    /// The `n x n` identity.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|p| start + p)
    }

    /// Entry `(i, j)`, zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) -> Result<(), LinalgError> {
        match self.find(i, j) {
            Some(p) => {
                self.values[p] += v;
                Ok(())
            }
            None => Err(LinalgError::PatternMismatch(format!(
                "entry ({i}, {j}) is not in the pattern"
            ))),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "matvec input length");
        assert_eq!(y.len(), self.n, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// `A x` as a new vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `A X` for a dense block of column vectors.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "block row count");
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            self.matvec(x.column(c).as_slice(), y.column_mut(c).as_mut_slice());
        }
        y
    }

    /// The quadratic form `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let y = self.mul_vec(x);
        y.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// The bilinear form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        ay.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest `|a_ij - a_ji|`, with missing mirror entries read as zero.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// True when every stored `(i, j)` has a stored mirror `(j, i)`.
    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).0.iter().all(|&j| self.find(j, i).is_some()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// True when `other` has exactly the same sparsity pattern.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// `alpha * A + beta * B` on the union of both patterns.
    pub fn lin_comb(alpha: f64, a: &Self, beta: f64, b: &Self) -> Result<Self, LinalgError> {
        if a.n != b.n {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot combine {}x{} with {}x{}",
                a.n, a.n, b.n, b.n
            )));
        }
        if a.same_pattern(b) {
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| alpha * x + beta * y)
                .collect();
            return Ok(Self {
                n: a.n,
                row_ptr: a.row_ptr.clone(),
                col_idx: a.col_idx.clone(),
                values,
            });
        }
        let mut row_ptr = Vec::with_capacity(a.n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(a.nnz().max(b.nnz()));
        let mut values = Vec::with_capacity(a.nnz().max(b.nnz()));
        for i in 0..a.n {
            let (ca, va) = a.row(i);
            let (cb, vb) = b.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    col_idx.push(ja);
                    values.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    col_idx.push(ja);
                    values.push(alpha * va[p]);
                    p += 1;
                } else {
                    col_idx.push(jb);
                    values.push(beta * vb[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n: a.n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Principal submatrix on the index set `keep` (in the given order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &old in keep {
            let (cols, vals) = self.row(old);
            let mut entries: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .filter(|(&j, _)| map[j] != usize::MAX)
                .map(|(&j, &v)| (map[j], v))
                .collect();
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Writes the matrix in coordinate text format: a header line with the
    /// dimension and entry count, then one `row col value` line per stored
    /// entry with zero-based indices.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "% curlcurl-coo v1")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseSymOp {
        SparseSymOp::from_triplets(
            3,
            vec![
                (0, 0, 4.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (2, 2, 2.0),
                (1, 1, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = small();
        assert_eq!(a.get(1, 1), 4.0);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let a = small();
        let x = [1.0, -2.0, 0.5];
        let y = a.mul_vec(&x);
        let d = a.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - d[i]).abs() < 1e-15);
        }
        assert!((a.quad_form(&x) - x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn symmetric_input_has_no_defect() {
        let a = small();
        assert_eq!(a.symmetry_defect(), 0.0);
        assert!(a.is_structurally_symmetric());
    }

    #[test]
    fn lin_comb_on_different_patterns() {
        let a = small();
        let i = SparseSymOp::identity(3);
        let c = SparseSymOp::lin_comb(1.0, &a, -2.0, &i).unwrap();
        let expected = a.to_dense() - DMatrix::<f64>::identity(3, 3) * 2.0;
        assert_eq!(c.to_dense(), expected);
    }

    #[test]
    fn add_at_rejects_missing_entry() {
        let mut a = small();
        assert!(a.add_at(0, 2, 1.0).is_err());
        a.add_at(2, 2, 1.0).unwrap();
        assert_eq!(a.get(2, 2), 3.0);
    }

    #[test]
    fn coordinate_dump_lists_every_entry() {
        let a = small();
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + a.nnz());
        assert!(text.lines().nth(1).unwrap().starts_with("3 3 5"));
    }

    #[test]
    fn principal_submatrix_keeps_entries() {
        let a = small();
        let s = a.principal_submatrix(&[1, 0]);
        assert_eq!(s.get(0, 0), 4.0);
        assert_eq!(s.get(1, 1), 4.0);
        assert_eq!(s.get(0, 1), 1.0);
    }
}
