//! Dense kernels: blocked partial LDLᵀ used by the multifrontal factorization,
//! a dense LDLᵀ solver, and a dense generalized eigensolver used as an oracle.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::LinalgError;

/// Column block width of the right-looking factorization.
const PANEL: usize = 48;

/// Factors the leading `k` columns of the symmetric matrix `f` in place.
///
/// Only the lower triangle of `f` is read. On return, columns `0..k` hold the
/// unit lower factor below the diagonal, `d[0..k]` holds the pivots, and the
/// trailing block `f[k.., k..]` (lower triangle) holds the Schur complement
/// `F22 - L21 D L21ᵀ`. A pivot with `|d| <= pivot_floor` is rejected.
///
/// Returns the number of negative pivots.
pub fn partial_ldlt(
    f: &mut DMatrix<f64>,
    k: usize,
    d: &mut [f64],
    pivot_floor: f64,
    pivot_offset: usize,
) -> Result<usize, LinalgError> {
    let m = f.nrows();
    debug_assert_eq!(m, f.ncols());
    debug_assert!(k <= m);
    debug_assert!(d.len() >= k);
    let mut negatives = 0;
    let mut j0 = 0;
    while j0 < k {
        let jb = PANEL.min(k - j0);
        let j1 = j0 + jb;
        // Unblocked factorization of the panel columns j0..j1 (rows j0..m).
        for j in j0..j1 {
            let dj = f[(j, j)];
            if !dj.is_finite() || dj.abs() <= pivot_floor {
                return Err(LinalgError::FactorizationSingular {
                    pivot: pivot_offset + j,
                    magnitude: dj.abs(),
                });
            }
            if dj < 0.0 {
                negatives += 1;
            }
            d[j] = dj;
            let inv = 1.0 / dj;
            {
                let mut col = f.view_mut((j + 1, j), (m - j - 1, 1));
                col *= inv;
            }
            for c in (j + 1)..j1 {
                let factor = f[(c, j)] * dj;
                if factor == 0.0 {
                    continue;
                }
                let (src, mut dst) = f.columns_range_pair_mut(j, c);
                let src = src.rows_range(c..m);
                let mut dst = dst.rows_range_mut(c..m);
                dst.axpy(-factor, &src, 1.0);
            }
        }
        if j1 < m {
            // Trailing update F[j1.., j1..] -= L_p D_p L_pᵀ on the lower triangle,
            // done in column blocks so the strictly upper part is skipped.
            let rows = m - j1;
            let lp = f.view((j1, j0), (rows, jb)).clone_owned();
            let mut w = lp.clone();
            for (c, dc) in d[j0..j1].iter().enumerate() {
                let mut col = w.column_mut(c);
                col *= *dc;
            }
            let wt = w.transpose();
            let cb = (4 * PANEL).max(64);
            let mut c0 = 0;
            while c0 < rows {
                let c1 = (c0 + cb).min(rows);
                let a = lp.rows_range(c0..rows);
                let b = wt.columns_range(c0..c1);
                let mut target = f.view_mut((j1 + c0, j1 + c0), (rows - c0, c1 - c0));
                target.gemm(-1.0, &a, &b, 1.0);
                c0 = c1;
            }
        }
        j0 = j1;
    }
    Ok(negatives)
}

/// Dense LDLᵀ factorization without pivoting.
#[derive(Clone, Debug)]
pub struct DenseLdlt {
    l: DMatrix<f64>,
    d: Vec<f64>,
    negatives: usize,
}

impl DenseLdlt {
    /// Factors a symmetric matrix. Only the lower triangle is read.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::DimensionMismatch(format!(
                "LDLT needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let mut l = a.clone();
        let mut d = vec![0.0; n];
        let scale = (0..n).fold(0.0f64, |s, i| s.max(a[(i, i)].abs())).max(f64::MIN_POSITIVE);
        let negatives = partial_ldlt(&mut l, n, &mut d, scale * 1e-14, 0)?;
        Ok(Self { l, d, negatives })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Number of negative pivots, which equals the number of negative
    /// eigenvalues of the factored matrix.
    pub fn negative_pivots(&self) -> usize {
        self.negatives
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for j in 0..n {
            let x = b[j];
            if x != 0.0 {
                for i in (j + 1)..n {
                    b[i] -= self.l[(i, j)] * x;
                }
            }
        }
        for (bi, di) in b.iter_mut().zip(&self.d) {
            *bi /= di;
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in (j + 1)..n {
                s -= self.l[(i, j)] * b[i];
            }
            b[j] = s;
        }
    }

    pub fn solve_block(&self, b: &mut DMatrix<f64>) {
        for c in 0..b.ncols() {
            self.solve_in_place(b.column_mut(c).as_mut_slice());
        }
    }
}

/// Dense oracle for `A x = λ M x` with `M` symmetric positive definite.
///
/// Reduces to a standard problem with the Cholesky factor of `M` and returns
/// ascending eigenvalues with `M`-orthonormal eigenvectors as columns.
pub fn dense_generalized_eigen(
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(LinalgError::DimensionMismatch(
            "pencil matrices must be square and of equal size".into(),
        ));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite { pivot: 0 })?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| LinalgError::InvalidArgument("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| LinalgError::InvalidArgument("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut y = DMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        y.set_column(new, &eig.eigenvectors.column(old));
    }
    let x = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| LinalgError::InvalidArgument("singular Cholesky factor".into()))?;
    Ok((values, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn ldlt_solves_spd_system() {
        for &n in &[1usize, 5, 47, 48, 49, 130] {
            let a = random_spd(n, n as u64);
            let f = DenseLdlt::factor(&a).unwrap();
            let x_true = DMatrix::from_fn(n, 1, |i, _| (i as f64).sin());
            let mut b = &a * &x_true;
            f.solve_block(&mut b);
            assert!((b - x_true).amax() < 1e-10, "n = {n}");
            assert_eq!(f.negative_pivots(), 0);
        }
    }

    #[test]
    fn ldlt_counts_negative_eigenvalues() {
        let n = 100;
        let a = random_spd(n, 7);
        let (vals, _) = dense_generalized_eigen(&a, &DMatrix::identity(n, n)).unwrap();
        let sigma = 0.5 * (vals[9] + vals[10]);
        let shifted = &a - DMatrix::identity(n, n) * sigma;
        let f = DenseLdlt::factor(&shifted).unwrap();
        assert_eq!(f.negative_pivots(), 10);
    }

    #[test]
    fn partial_factor_leaves_schur_complement() {
        let n = 70;
        let k = 52;
        let a = random_spd(n, 3);
        let mut f = a.clone();
        let mut d = vec![0.0; k];
        partial_ldlt(&mut f, k, &mut d, 0.0, 0).unwrap();
        let a11 = a.view((0, 0), (k, k)).clone_owned();
        let a21 = a.view((k, 0), (n - k, k)).clone_owned();
        let a22 = a.view((k, k), (n - k, n - k)).clone_owned();
        let s = a22 - &a21 * a11.try_inverse().unwrap() * a21.transpose();
        for j in 0..(n - k) {
            for i in j..(n - k) {
                assert!((f[(k + i, k + j)] - s[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            DenseLdlt::factor(&a),
            Err(LinalgError::FactorizationSingular { pivot: 1, .. })
        ));
    }

    #[test]
    fn generalized_oracle_on_diagonal_pencil() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 2.0]));
        let (vals, vecs) = dense_generalized_eigen(&a, &m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
        assert!((vals[2] - 3.0).abs() < 1e-14);
        let g = vecs.transpose() * &m * &vecs;
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
