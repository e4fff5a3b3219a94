//! Shift-invert block Lanczos for `A x = λ M x`.
//!
//! The iteration runs on the operator `(A - σM)⁻¹ M`, which is self-adjoint in
//! the `M` inner product. Every new block is reorthogonalized twice against
//! the whole basis, and the basis is compressed by a thick restart onto the
//! best Ritz vectors when it reaches its size cap. Blocks keep clusters of
//! equal eigenvalues (up to the block size) from hiding members.
//!
//! Convergence is judged on the exact residual of the pencil: with
//! `Op V = V T + Q B` and `K = A - σM`, a Ritz pair `(θ, Vy)` has
//! `A x - λ M x = -K Q (B y) / θ`, so its `M⁻¹` norm follows from the small
//! Gram matrix `(KQ)ᵀ M⁻¹ (KQ)`.

use std::sync::Arc;

use log::{debug, info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csr::SparseSymOp;
use crate::dense::{dense_generalized_eigen, DenseLdlt};
use crate::error::LinalgError;
use crate::ldlt::{LdltFactor, SymbolicLdlt};
use crate::ordering::Ordering;
use crate::spectrum::Spectrum;

/// Which part of the spectrum to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ShiftMode {
    /// The smallest eigenvalues; the shift is moved below the spectrum if the
    /// factorization shows eigenvalues under it.
    #[default]
    Smallest,
    /// The eigenvalues nearest to the shift.
    Nearest,
}

/// Factorization backend for the shifted matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FactorKind {
    /// Dense below [`DENSE_LIMIT`] unknowns, sparse above.
    #[default]
    Auto,
    Sparse,
    Dense,
}

/// Dimension below which [`FactorKind::Auto`] uses the dense factorization.
pub const DENSE_LIMIT: usize = 2000;

/// Settings of [`solve_gevp`].
#[derive(Clone, Debug, PartialEq)]
pub struct EigenConfig {
    /// Number of eigenpairs.
    pub count: usize,
    pub shift: f64,
    /// Residual tolerance relative to `|λ| + 1`.
    pub tol: f64,
    /// Maximum number of block expansion steps.
    pub max_iter: usize,
    pub block_size: usize,
    /// Basis size cap; zero selects a size from `count` and `block_size`.
    pub max_basis: usize,
    pub mode: ShiftMode,
    pub seed: u64,
    pub ordering: Ordering,
    pub factor: FactorKind,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            count: 6,
            shift: -1.0,
            tol: 1e-8,
            max_iter: 500,
            block_size: 8,
            max_basis: 0,
            mode: ShiftMode::Smallest,
            seed: 20240607,
            ordering: Ordering::NestedDissection,
            factor: FactorKind::Auto,
        }
    }
}

enum Solver {
    Sparse(LdltFactor),
    Dense(DenseLdlt),
}

impl Solver {
    fn solve_block(&self, b: &mut DMatrix<f64>) {
        match self {
            Solver::Sparse(f) => f.solve_block(b),
            Solver::Dense(f) => f.solve_block(b),
        }
    }

    fn negatives(&self) -> usize {
        match self {
            Solver::Sparse(f) => f.negative_pivots(),
            Solver::Dense(f) => f.negative_pivots(),
        }
    }
}

/// Factors symmetric matrices that share one pattern.
struct Factorizer {
    dense: bool,
    symbolic: Option<Arc<SymbolicLdlt>>,
}

impl Factorizer {
    fn new(pattern: &SparseSymOp, kind: FactorKind, ordering: Ordering) -> Result<Self, LinalgError> {
        let dense = match kind {
            FactorKind::Dense => true,
            FactorKind::Sparse => false,
            FactorKind::Auto => pattern.dim() < DENSE_LIMIT,
        };
        let symbolic = if dense {
            None
        } else {
            Some(Arc::new(SymbolicLdlt::analyze(pattern, ordering)?))
        };
        Ok(Self { dense, symbolic })
    }

    fn factor(&self, a: &SparseSymOp) -> Result<Solver, LinalgError> {
        match &self.symbolic {
            Some(sym) => Ok(Solver::Sparse(LdltFactor::factor(sym.clone(), a)?)),
            None => {
                debug_assert!(self.dense);
                Ok(Solver::Dense(DenseLdlt::factor(&a.to_dense())?))
            }
        }
    }
}

/// Number of eigenvalues of `(A, M)` strictly below `sigma` (Sylvester
/// inertia of `A - σM`).
pub fn count_eigenvalues_below(
    a: &SparseSymOp,
    mass: &SparseSymOp,
    sigma: f64,
    kind: FactorKind,
    ordering: Ordering,
) -> Result<usize, LinalgError> {
    let k = SparseSymOp::lin_comb(1.0, a, -sigma, mass)?;
    let f = Factorizer::new(&k, kind, ordering)?;
    Ok(f.factor(&k)?.negatives())
}

/// Computes `cfg.count` eigenpairs of `A x = λ M x`.
///
/// `A` must be symmetric and `M` symmetric positive definite. In
/// [`ShiftMode::Smallest`] the result holds the smallest eigenvalues; in
/// [`ShiftMode::Nearest`] the ones nearest to the shift. Eigenvalues come back
/// ascending with `M`-orthonormal eigenvectors.
pub fn solve_gevp(a: &SparseSymOp, mass: &SparseSymOp, cfg: &EigenConfig) -> Result<Spectrum, LinalgError> {
    let n = a.dim();
    if mass.dim() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "stiffness is {n}x{n} but mass is {}x{}",
            mass.dim(),
            mass.dim()
        )));
    }
    if cfg.count == 0 || n == 0 {
        return Err(LinalgError::InvalidArgument("count and dimension must be positive".into()));
    }
    if !(cfg.tol > 0.0) || !cfg.shift.is_finite() {
        return Err(LinalgError::InvalidArgument("tolerance must be positive and shift finite".into()));
    }
    let want = cfg.count.min(n);

    // Shared pattern so one symbolic analysis serves A - σM and M.
    let mass_ext = SparseSymOp::lin_comb(0.0, a, 1.0, mass)?;
    let factorizer = Factorizer::new(&mass_ext, cfg.factor, cfg.ordering)?;
    let mass_solver = factorizer.factor(&mass_ext).map_err(|e| match e {
        LinalgError::FactorizationSingular { pivot, .. } => LinalgError::NotPositiveDefinite { pivot },
        other => other,
    })?;
    if mass_solver.negatives() > 0 {
        return Err(LinalgError::NotPositiveDefinite { pivot: 0 });
    }

    let mut sigma = cfg.shift;
    let mut shifted: Option<(SparseSymOp, Solver)> = None;
    for attempt in 0..12 {
        let k = SparseSymOp::lin_comb(1.0, a, -sigma, &mass_ext)?;
        match factorizer.factor(&k) {
            Ok(s) => {
                if cfg.mode == ShiftMode::Smallest && s.negatives() > 0 {
                    let lower = -1.0 - 2.0 * sigma.abs();
                    warn!(
                        "shift {sigma} lies above {} eigenvalues; moving it to {lower}",
                        s.negatives()
                    );
                    sigma = lower;
                    continue;
                }
                shifted = Some((k, s));
                break;
            }
            Err(LinalgError::FactorizationSingular { .. }) => {
                let step = 1e-3 * (1.0 + sigma.abs()) * (attempt + 1) as f64;
                warn!("shifted matrix singular at σ = {sigma}; retrying at σ = {}", sigma - step);
                sigma -= step;
            }
            Err(e) => return Err(e),
        }
    }
    let (kmat, solver) = shifted.ok_or(LinalgError::FactorizationSingular {
        pivot: 0,
        magnitude: 0.0,
    })?;

    let b = cfg.block_size.max(1).min(n);
    let mut cap = if cfg.max_basis > 0 {
        cfg.max_basis
    } else {
        (2 * want + 6 * b).max(want + 8 * b).max(64)
    };
    cap = cap.max(want + 2 * b).min(n);
    if cap == n {
        // The Krylov basis would span the whole space: a dense solve is
        // cheaper and avoids the loss of orthogonality of a full recurrence.
        let (vals, vecs) = dense_generalized_eigen(&a.to_dense(), &mass.to_dense())?;
        let mut idx: Vec<usize> = (0..n).collect();
        if cfg.mode == ShiftMode::Nearest {
            idx.sort_by(|&i, &j| (vals[i] - sigma).abs().total_cmp(&(vals[j] - sigma).abs()));
        }
        idx.truncate(want);
        let x = DMatrix::from_fn(n, want, |r, c| vecs[(r, idx[c])]);
        let lambdas = idx.iter().map(|&i| vals[i]).collect();
        info!("eigensolver: {want} pairs from a dense solve (n = {n})");
        return Ok(finalize(a, mass, &mass_solver, x, lambdas, sigma));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut basis = DMatrix::<f64>::zeros(n, cap);
    let mut mbasis = DMatrix::<f64>::zeros(n, cap);
    let mut t = DMatrix::<f64>::zeros(cap, cap);
    let mut k = 0usize;

    let start = DMatrix::from_fn(n, b, |_, _| rng.random_range(-1.0..1.0));
    let (mut q, mut mq, _) = orthonormalize_block(start, mass, &basis, &mbasis, 0, &mut rng);
    let mut coupling = DMatrix::<f64>::zeros(q.ncols(), 0);

    let tol = cfg.tol;
    let wanted_order = |theta: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..theta.len()).collect();
        match cfg.mode {
            ShiftMode::Smallest => idx.sort_by(|&i, &j| theta[j].total_cmp(&theta[i])),
            ShiftMode::Nearest => idx.sort_by(|&i, &j| theta[j].abs().total_cmp(&theta[i].abs())),
        }
        idx
    };

    let mut last_converged = 0;
    for iter in 0..cfg.max_iter {
        if k + q.ncols() > cap {
            if cap == n {
                let keep = n - k;
                q = q.columns(0, keep).clone_owned();
                mq = mq.columns(0, keep).clone_owned();
                coupling = coupling.rows(0, keep).clone_owned();
            } else {
                let eig = SymmetricEigen::new(t.view((0, 0), (k, k)).clone_owned());
                let theta: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                let order = wanted_order(&theta);
                let p = (want + (cap - want - q.ncols()) / 2).max(want).min(cap - q.ncols());
                let y = DMatrix::from_fn(k, p, |i, j| eig.eigenvectors[(i, order[j])]);
                let new_v = basis.columns(0, k) * &y;
                let new_mv = mbasis.columns(0, k) * &y;
                basis.columns_mut(0, p).copy_from(&new_v);
                mbasis.columns_mut(0, p).copy_from(&new_mv);
                t.fill(0.0);
                for j in 0..p {
                    t[(j, j)] = theta[order[j]];
                }
                coupling = &coupling * &y;
                k = p;
                debug!("thick restart at step {iter}: kept {p} Ritz vectors");
            }
        }
        let bq = q.ncols();
        if bq == 0 {
            break;
        }
        // Expand: W = K⁻¹ M Q.
        let mut w = mq.clone();
        solver.solve_block(&mut w);
        basis.columns_mut(k, bq).copy_from(&q);
        mbasis.columns_mut(k, bq).copy_from(&mq);
        for i in 0..bq {
            for j in 0..k {
                t[(k + i, j)] = coupling[(i, j)];
                t[(j, k + i)] = coupling[(i, j)];
            }
        }
        let kk = k + bq;
        let mut h = DMatrix::<f64>::zeros(kk, bq);
        for _ in 0..2 {
            let c = mbasis.columns(0, kk).transpose() * &w;
            w -= basis.columns(0, kk) * &c;
            h += c;
        }
        for i in 0..bq {
            for j in 0..bq {
                t[(k + i, k + j)] = 0.5 * (h[(k + i, j)] + h[(k + j, i)]);
            }
        }
        k = kk;
        let (q_new, mq_new, r) = orthonormalize_block(w, mass, &basis, &mbasis, k, &mut rng);
        let mut coupling_new = DMatrix::<f64>::zeros(q_new.ncols(), k);
        coupling_new.view_mut((0, k - bq), (q_new.ncols(), bq)).copy_from(&r);

        // Rayleigh-Ritz on the projected operator.
        let eig = SymmetricEigen::new(t.view((0, 0), (k, k)).clone_owned());
        let theta: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let order = wanted_order(&theta);
        let nw = want.min(k);
        let full_space = k == n;
        let by: Vec<nalgebra::DVector<f64>> = order[..nw]
            .iter()
            .map(|&i| &coupling_new * eig.eigenvectors.column(i))
            .collect();
        let cheap: Vec<f64> = order[..nw]
            .iter()
            .zip(&by)
            .map(|(&i, v)| v.norm() / theta[i].abs().max(f64::MIN_POSITIVE))
            .collect();
        let worst_cheap = cheap.iter().copied().fold(0.0, f64::max);
        let mut ready = full_space;
        if !ready && nw == want && worst_cheap < 1e-3 {
            // Exact residual norms from the Gram matrix of K Q.
            let kq = kmat.mul_dense(&q_new);
            let mut minv_kq = kq.clone();
            mass_solver.solve_block(&mut minv_kq);
            let gram = kq.transpose() * minv_kq;
            let mut converged = 0;
            for (pos, &i) in order[..nw].iter().enumerate() {
                let v = &by[pos];
                let res = (v.transpose() * &gram * v)[(0, 0)].max(0.0).sqrt() / theta[i].abs();
                let lambda = sigma + 1.0 / theta[i];
                if res <= 0.1 * tol * (lambda.abs() + 1.0) {
                    converged += 1;
                }
            }
            if converged != last_converged {
                debug!("step {iter}: basis {k}, {converged}/{want} pairs converged");
                last_converged = converged;
            }
            ready = converged == want;
        }
        if ready {
            let idx: Vec<usize> = order[..nw].to_vec();
            let y = DMatrix::from_fn(k, nw, |i, j| eig.eigenvectors[(i, idx[j])]);
            let x = basis.columns(0, k) * y;
            let lambdas: Vec<f64> = idx.iter().map(|&i| sigma + 1.0 / theta[i]).collect();
            let spectrum = finalize(a, mass, &mass_solver, x, lambdas, sigma);
            let bad = spectrum
                .eigenvalues
                .iter()
                .zip(&spectrum.residuals)
                .filter(|(l, r)| **r > tol * (l.abs() + 1.0))
                .count();
            if bad == 0 {
                info!(
                    "eigensolver: {nw} pairs after {} block steps (n = {n}, σ = {sigma})",
                    iter + 1
                );
                return Ok(spectrum);
            }
            if full_space {
                return Err(LinalgError::NoConvergence {
                    iterations: iter + 1,
                    converged: nw - bad,
                    wanted: want,
                });
            }
            debug!("step {iter}: {bad} explicit residuals above tolerance, continuing");
        }
        q = q_new;
        mq = mq_new;
        coupling = coupling_new;
    }
    Err(LinalgError::NoConvergence {
        iterations: cfg.max_iter,
        converged: last_converged,
        wanted: want,
    })
}

/// `M`-orthonormalizes the columns of `w` against `basis[.., 0..k]` and among
/// themselves. Returns `(Q, MQ, R)` with `W ≈ Q R` after the projection.
/// Columns that collapse are replaced by fresh random directions.
fn orthonormalize_block(
    w: DMatrix<f64>,
    mass: &SparseSymOp,
    basis: &DMatrix<f64>,
    mbasis: &DMatrix<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = w.nrows();
    let bq = w.ncols().min(n.saturating_sub(k));
    let mut q = DMatrix::<f64>::zeros(n, bq);
    let mut mq = DMatrix::<f64>::zeros(n, bq);
    let mut r = DMatrix::<f64>::zeros(bq, w.ncols());
    let mut col = 0;
    for c in 0..w.ncols() {
        if col >= bq {
            break;
        }
        let mut v: Vec<f64> = w.column(c).iter().copied().collect();
        let norm0 = dot(&v, &mass.mul_vec(&v)).max(0.0).sqrt();
        let mut random_tries = 0;
        loop {
            for _ in 0..2 {
                if k > 0 {
                    let coef = mbasis.columns(0, k).tr_mul(&nalgebra::DVector::from_column_slice(&v));
                    let corr = basis.columns(0, k) * &coef;
                    for (vi, ci) in v.iter_mut().zip(corr.iter()) {
                        *vi -= ci;
                    }
                }
                for p in 0..col {
                    let s = dot(mq.column(p).as_slice(), &v);
                    if random_tries == 0 {
                        r[(p, c)] += s;
                    }
                    let qp = q.column(p);
                    for (vi, qi) in v.iter_mut().zip(qp.iter()) {
                        *vi -= s * qi;
                    }
                }
            }
            let mv = mass.mul_vec(&v);
            let norm = dot(&v, &mv).max(0.0).sqrt();
            if norm > 1e-10 * norm0.max(f64::MIN_POSITIVE) && norm > 1e-300 {
                if random_tries == 0 {
                    r[(col, c)] = norm;
                }
                let inv = 1.0 / norm;
                for (i, (vi, mvi)) in v.iter().zip(&mv).enumerate() {
                    q[(i, col)] = vi * inv;
                    mq[(i, col)] = mvi * inv;
                }
                col += 1;
                break;
            }
            random_tries += 1;
            if random_tries > 5 {
                break;
            }
            for vi in v.iter_mut() {
                *vi = rng.random_range(-1.0..1.0);
            }
        }
    }
    let q = q.columns(0, col).clone_owned();
    let mq = mq.columns(0, col).clone_owned();
    let r = r.rows(0, col).clone_owned();
    (q, mq, r)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sorts, normalizes, and measures residuals of converged Ritz pairs.
fn finalize(
    a: &SparseSymOp,
    mass: &SparseSymOp,
    mass_solver: &Solver,
    x: DMatrix<f64>,
    lambdas: Vec<f64>,
    sigma: f64,
) -> Spectrum {
    let n = x.nrows();
    let m = lambdas.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| lambdas[i].total_cmp(&lambdas[j]));
    let mut vecs = DMatrix::<f64>::zeros(n, m);
    let mut vals = Vec::with_capacity(m);
    for (new, &old) in order.iter().enumerate() {
        let col: Vec<f64> = x.column(old).iter().copied().collect();
        let norm = mass.quad_form(&col).max(0.0).sqrt();
        for i in 0..n {
            vecs[(i, new)] = col[i] / norm;
        }
        vals.push(lambdas[old]);
    }
    let ax = a.mul_dense(&vecs);
    let mx = mass.mul_dense(&vecs);
    let mut r = ax.clone();
    for j in 0..m {
        let mut c = r.column_mut(j);
        c.axpy(-vals[j], &mx.column(j), 1.0);
    }
    let mut minv_r = r.clone();
    mass_solver.solve_block(&mut minv_r);
    let residuals = (0..m)
        .map(|j| r.column(j).dot(&minv_r.column(j)).max(0.0).sqrt())
        .collect();
    Spectrum::new(vals, vecs, residuals, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::dense_generalized_eigen;

    fn diag(values: &[f64]) -> SparseSymOp {
        SparseSymOp::from_triplets(values.len(), values.iter().enumerate().map(|(i, &v)| (i, i, v))).unwrap()
    }

    #[test]
    fn diagonal_pencil() {
        let a = diag(&[1.0, 2.0, 3.0]);
        let m = SparseSymOp::identity(3);
        let cfg = EigenConfig {
            count: 2,
            ..Default::default()
        };
        let s = solve_gevp(&a, &m, &cfg).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_pencil_has_repeated_one() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + (i as f64 * 0.3).sin()));
            if i + 1 < n {
                t.push((i, i + 1, 0.4));
                t.push((i + 1, i, 0.4));
            }
        }
        let m = SparseSymOp::from_triplets(n, t).unwrap();
        let cfg = EigenConfig {
            count: 3,
            ..Default::default()
        };
        let s = solve_gevp(&m, &m, &cfg).unwrap();
        for l in &s.eigenvalues {
            assert!((l - 1.0).abs() < 1e-10);
        }
        assert!(s.orthonormality_defect(&m) < 1e-8);
    }

    #[test]
    fn sparse_and_dense_backends_agree() {
        let n = 300;
        let mut ta = Vec::new();
        let mut tm = Vec::new();
        for i in 0..n {
            ta.push((i, i, 2.0));
            tm.push((i, i, 4.0 / 6.0));
            if i + 1 < n {
                ta.push((i, i + 1, -1.0));
                ta.push((i + 1, i, -1.0));
                tm.push((i, i + 1, 1.0 / 6.0));
                tm.push((i + 1, i, 1.0 / 6.0));
            }
        }
        let a = SparseSymOp::from_triplets(n, ta).unwrap();
        let m = SparseSymOp::from_triplets(n, tm).unwrap();
        let base = EigenConfig {
            count: 8,
            shift: -0.1,
            ..Default::default()
        };
        let dense = solve_gevp(&a, &m, &EigenConfig { factor: FactorKind::Dense, ..base.clone() }).unwrap();
        let sparse = solve_gevp(&a, &m, &EigenConfig { factor: FactorKind::Sparse, ..base }).unwrap();
        let (oracle, _) = dense_generalized_eigen(&a.to_dense(), &m.to_dense()).unwrap();
        for i in 0..8 {
            assert!((dense.eigenvalues[i] - oracle[i]).abs() < 1e-10 * oracle[i].abs());
            assert!((sparse.eigenvalues[i] - oracle[i]).abs() < 1e-10 * oracle[i].abs());
        }
    }

    #[test]
    fn nearest_mode_finds_interior_values() {
        let vals: Vec<f64> = (1..=60).map(|i| i as f64).collect();
        let a = diag(&vals);
        let m = SparseSymOp::identity(60);
        let cfg = EigenConfig {
            count: 4,
            shift: 30.2,
            mode: ShiftMode::Nearest,
            ..Default::default()
        };
        let s = solve_gevp(&a, &m, &cfg).unwrap();
        let got: Vec<f64> = s.eigenvalues.iter().map(|v| v.round()).collect();
        assert_eq!(got, vec![29.0, 30.0, 31.0, 32.0]);
    }

    #[test]
    fn shift_above_spectrum_is_lowered_in_smallest_mode() {
        let vals: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let a = diag(&vals);
        let m = SparseSymOp::identity(50);
        let cfg = EigenConfig {
            count: 3,
            shift: 10.5,
            ..Default::default()
        };
        let s = solve_gevp(&a, &m, &cfg).unwrap();
        assert_eq!(s.eigenvalues.iter().map(|v| v.round()).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn inertia_counts_eigenvalues() {
        let vals: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let a = diag(&vals);
        let m = SparseSymOp::identity(20);
        let c = count_eigenvalues_below(&a, &m, 7.5, FactorKind::Sparse, Ordering::NestedDissection).unwrap();
        assert_eq!(c, 7);
    }
}
