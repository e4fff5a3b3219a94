//! Supernodal multifrontal LDLᵀ factorization for symmetric sparse matrices.
//!
//! The factorization runs without pivoting, which is adequate for the
//! shifted pencils `A - σM` of the eigensolver: a pivot that collapses below a
//! relative floor is reported as [`LinalgError::FactorizationSingular`] and the
//! caller perturbs the shift. The symbolic analysis is reusable for every
//! matrix with the same pattern, so `A - σM` and `M` share one analysis.
//!
//! Negative pivots are counted; by Sylvester's law of inertia their number is
//! the number of negative eigenvalues of the factored matrix.

use std::sync::Arc;

use log::debug;
use nalgebra::DMatrix;

use crate::csr::SparseSymOp;
use crate::dense::partial_ldlt;
use crate::error::LinalgError;
use crate::ordering::{compute_ordering, invert, Ordering};

const NONE: usize = usize::MAX;

/// Pattern-only analysis: ordering, supernode partition, and the map from
/// matrix entries to frontal positions.
#[derive(Debug)]
pub struct SymbolicLdlt {
    n: usize,
    perm: Vec<usize>,
    /// First column of each supernode, plus a final sentinel `n`.
    sn_start: Vec<usize>,
    /// Row structure of each supernode; its own columns come first.
    sn_rows: Vec<Vec<usize>>,
    sn_children: Vec<usize>,
    /// Per supernode: `(storage index, local row, local col)` of each lower entry.
    amap_ptr: Vec<usize>,
    amap: Vec<(usize, u32, u32)>,
    pattern_hash: u64,
    nnz_l: usize,
}

fn pattern_hash(a: &SparseSymOp) -> u64 {
    // FNV-1a over the index arrays.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: usize| {
        for byte in (x as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(a.dim());
    for &p in a.row_ptr() {
        feed(p);
    }
    for &c in a.col_idx() {
        feed(c);
    }
    h
}

impl SymbolicLdlt {
    /// Analyzes the pattern of `a` with the requested ordering.
    pub fn analyze(a: &SparseSymOp, ordering: Ordering) -> Result<Self, LinalgError> {
        if !a.is_structurally_symmetric() {
            return Err(LinalgError::PatternMismatch(
                "matrix pattern is not structurally symmetric".into(),
            ));
        }
        let perm0 = compute_ordering(a, ordering);
        Ok(Self::analyze_with_permutation(a, perm0))
    }

    /// Analyzes the pattern of `a` with a given `perm[new] = old`.
    pub fn analyze_with_permutation(a: &SparseSymOp, perm0: Vec<usize>) -> Self {
        let n = a.dim();
        let inv0 = invert(&perm0);
        let parent0 = etree(a, &perm0, &inv0);
        let post = postorder(&parent0);
        let perm: Vec<usize> = post.iter().map(|&k| perm0[k]).collect();
        let inv = invert(&perm);
        let inv_post = invert(&post);
        let parent: Vec<usize> = post
            .iter()
            .map(|&k| {
                let p = parent0[k];
                if p == NONE {
                    NONE
                } else {
                    inv_post[p]
                }
            })
            .collect();

        // Strictly lower part of the permuted matrix, column by column.
        let mut lower_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..n {
            let i = inv[r];
            for &c in a.row(r).0 {
                let j = inv[c];
                if i > j {
                    lower_cols[j].push(i);
                }
            }
        }
        for col in &mut lower_cols {
            col.sort_unstable();
        }

        let counts = column_counts(&lower_cols, &parent);
        let mut child_count = vec![0usize; n];
        for &p in &parent {
            if p != NONE {
                child_count[p] += 1;
            }
        }

        // Fundamental supernodes.
        let mut starts = vec![0usize];
        for j in 1..n {
            let chain = parent[j - 1] == j && child_count[j] == 1 && counts[j - 1] == counts[j] + 1;
            if !chain {
                starts.push(j);
            }
        }
        if n == 0 {
            starts.clear();
        }
        starts.push(n);

        let starts = relax_supernodes(&starts, &counts, &parent);
        let nsn = starts.len() - 1;
        let mut col2sn = vec![0usize; n];
        for s in 0..nsn {
            for c in starts[s]..starts[s + 1] {
                col2sn[c] = s;
            }
        }
        let sn_parent: Vec<usize> = (0..nsn)
            .map(|s| {
                let p = parent[starts[s + 1] - 1];
                if p == NONE {
                    NONE
                } else {
                    col2sn[p]
                }
            })
            .collect();
        let mut sn_kids: Vec<Vec<usize>> = vec![Vec::new(); nsn];
        for s in 0..nsn {
            if sn_parent[s] != NONE {
                sn_kids[sn_parent[s]].push(s);
            }
        }

        // Supernodal row structures.
        let mut sn_rows: Vec<Vec<usize>> = Vec::with_capacity(nsn);
        let mut mark = vec![NONE; n];
        for s in 0..nsn {
            let (f, l) = (starts[s], starts[s + 1]);
            let mut rows: Vec<usize> = (f..l).collect();
            for c in f..l {
                mark[c] = s;
            }
            let mut extra: Vec<usize> = Vec::new();
            for c in f..l {
                for &i in &lower_cols[c] {
                    if mark[i] != s {
                        mark[i] = s;
                        extra.push(i);
                    }
                }
            }
            for &k in &sn_kids[s] {
                let kk = starts[k + 1] - starts[k];
                for &i in &sn_rows[k][kk..] {
                    if mark[i] != s {
                        mark[i] = s;
                        extra.push(i);
                    }
                }
            }
            extra.sort_unstable();
            rows.extend(extra);
            sn_rows.push(rows);
        }

        // Assembly map from matrix storage to frontal positions.
        let mut per_sn: Vec<Vec<(usize, u32, u32)>> = vec![Vec::new(); nsn];
        for r in 0..n {
            let i = inv[r];
            let start = a.row_ptr()[r];
            for (off, &c) in a.row(r).0.iter().enumerate() {
                let j = inv[c];
                if i >= j {
                    let s = col2sn[j];
                    let rows = &sn_rows[s];
                    let lr = rows.binary_search(&i).expect("row in supernode structure");
                    per_sn[s].push((start + off, lr as u32, (j - starts[s]) as u32));
                }
            }
        }
        let mut amap_ptr = Vec::with_capacity(nsn + 1);
        amap_ptr.push(0);
        let mut amap = Vec::new();
        for list in per_sn {
            amap.extend(list);
            amap_ptr.push(amap.len());
        }

        let nnz_l = (0..nsn)
            .map(|s| {
                let k = starts[s + 1] - starts[s];
                let m = sn_rows[s].len();
                k * m - k * (k - 1) / 2
            })
            .sum();
        let max_front = sn_rows.iter().map(Vec::len).max().unwrap_or(0);
        debug!(
            "symbolic LDLT: n = {n}, supernodes = {nsn}, nnz(L) = {nnz_l}, largest front = {max_front}"
        );
        Self {
            n,
            perm,
            sn_start: starts,
            sn_rows,
            sn_children: sn_kids.iter().map(Vec::len).collect(),
            amap_ptr,
            amap,
            pattern_hash: pattern_hash(a),
            nnz_l,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entries of the factor `L` including the unit diagonal.
    pub fn nnz_l(&self) -> usize {
        self.nnz_l
    }

    pub fn supernode_count(&self) -> usize {
        self.sn_rows.len()
    }

    /// Fill-reducing permutation `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

/// Elimination tree of the permuted matrix (Liu's algorithm with path
/// compression).
fn etree(a: &SparseSymOp, perm: &[usize], inv: &[usize]) -> Vec<usize> {
    let n = a.dim();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &c in a.row(perm[k]).0 {
            let mut r = inv[c];
            if r >= k {
                continue;
            }
            while ancestor[r] != NONE && ancestor[r] != k {
                let next = ancestor[r];
                ancestor[r] = k;
                r = next;
            }
            if ancestor[r] == NONE {
                ancestor[r] = k;
                parent[r] = k;
            }
        }
    }
    parent
}

/// Postorder of a forest given by parent pointers; returns `post[new] = old`.
fn postorder(parent: &[usize]) -> Vec<usize> {
    let n = parent.len();
    let mut head = vec![NONE; n];
    let mut next = vec![NONE; n];
    // Insert in reverse so children are visited in increasing order.
    for j in (0..n).rev() {
        let p = parent[j];
        if p != NONE {
            next[j] = head[p];
            head[p] = j;
        }
    }
    let mut post = Vec::with_capacity(n);
    let mut stack = Vec::new();
    for root in 0..n {
        if parent[root] != NONE {
            continue;
        }
        stack.push(root);
        while let Some(&top) = stack.last() {
            let child = head[top];
            if child == NONE {
                post.push(top);
                stack.pop();
            } else {
                head[top] = next[child];
                stack.push(child);
            }
        }
    }
    post
}

/// Number of strictly-lower entries of each column of `L`, by merging child
/// structures in postorder.
fn column_counts(lower_cols: &[Vec<usize>], parent: &[usize]) -> Vec<usize> {
    let n = lower_cols.len();
    let mut counts = vec![0usize; n];
    let mut pending: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, &p) in parent.iter().enumerate() {
        if p != NONE {
            kids[p].push(j);
        }
    }
    for j in 0..n {
        let mut s = lower_cols[j].clone();
        for &c in &kids[j] {
            if let Some(cs) = pending[c].take() {
                s = merge_sorted_excluding(&s, &cs, j);
            }
        }
        counts[j] = s.len();
        if parent[j] != NONE {
            pending[j] = Some(s);
        }
    }
    counts
}

fn merge_sorted_excluding(a: &[usize], b: &[usize], skip: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut p, mut q) = (0, 0);
    while p < a.len() || q < b.len() {
        let x = a.get(p).copied().unwrap_or(NONE);
        let y = b.get(q).copied().unwrap_or(NONE);
        let v = x.min(y);
        if x == v {
            p += 1;
        }
        if y == v {
            q += 1;
        }
        if v != skip && out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Relaxed amalgamation: merges a supernode into the following one when it
/// is a child of it and the extra explicit zeros stay small.
fn relax_supernodes(starts: &[usize], counts: &[usize], parent: &[usize]) -> Vec<usize> {
    let nsn = starts.len().saturating_sub(1);
    // Per merged supernode: (first, last_exclusive, front size m, actual nonzeros).
    let mut merged: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(nsn);
    for s in 0..nsn {
        let (f, l) = (starts[s], starts[s + 1]);
        let m = counts[f] + 1;
        let actual: usize = (f..l).map(|c| counts[c] + 1).sum();
        let mut cur = (f, l, m, actual);
        while let Some(&(cf, cl, cm, cact)) = merged.last() {
            if cl != cur.0 {
                break;
            }
            let p = parent[cl - 1];
            if p == NONE || p < cur.0 || p >= cur.1 {
                break;
            }
            let k_new = (cl - cf) + (cur.1 - cur.0);
            let m_new = (cl - cf) + cur.2;
            let dense = k_new * m_new - k_new * (k_new - 1) / 2;
            let zeros = dense.saturating_sub(cact + cur.3) as f64;
            let frac = zeros / dense as f64;
            let accept = k_new <= 4
                || (k_new <= 16 && frac < 0.5)
                || (k_new <= 48 && frac < 0.1)
                || frac < 0.05;
            if !accept {
                break;
            }
            let _ = cm;
            merged.pop();
            cur = (cf, cur.1, m_new, cact + cur.3);
        }
        merged.push(cur);
    }
    let mut out: Vec<usize> = merged.iter().map(|m| m.0).collect();
    out.push(starts.last().copied().unwrap_or(0));
    out
}

/// Numeric LDLᵀ factor sharing a [`SymbolicLdlt`].
#[derive(Debug, Clone)]
pub struct LdltFactor {
    symbolic: Arc<SymbolicLdlt>,
    l: Vec<DMatrix<f64>>,
    d: Vec<f64>,
    negatives: usize,
}

impl LdltFactor {
    /// Factors `a`, whose pattern must match the analyzed one.
    ///
    /// Pivots with magnitude at most `1e-13 * max|a_ij|` are rejected.
    pub fn factor(symbolic: Arc<SymbolicLdlt>, a: &SparseSymOp) -> Result<Self, LinalgError> {
        let sym = &*symbolic;
        if a.dim() != sym.n || pattern_hash(a) != sym.pattern_hash {
            return Err(LinalgError::PatternMismatch(
                "matrix does not match the analyzed pattern".into(),
            ));
        }
        let floor = 1e-13 * a.max_abs().max(f64::MIN_POSITIVE);
        let nsn = sym.sn_rows.len();
        let values = a.values();
        let mut relpos = vec![0usize; sym.n];
        let mut d = vec![0.0; sym.n];
        let mut l_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(nsn);
        let mut stack: Vec<(DMatrix<f64>, usize)> = Vec::new();
        let mut negatives = 0;
        for s in 0..nsn {
            let rows = &sym.sn_rows[s];
            let f = sym.sn_start[s];
            let k = sym.sn_start[s + 1] - f;
            let m = rows.len();
            for (pos, &r) in rows.iter().enumerate() {
                relpos[r] = pos;
            }
            let mut front = DMatrix::<f64>::zeros(m, m);
            for &(p, lr, lc) in &sym.amap[sym.amap_ptr[s]..sym.amap_ptr[s + 1]] {
                front[(lr as usize, lc as usize)] += values[p];
            }
            for _ in 0..sym.sn_children[s] {
                let (u, c) = stack.pop().expect("child update present");
                let kc = sym.sn_start[c + 1] - sym.sn_start[c];
                let map: Vec<usize> = sym.sn_rows[c][kc..].iter().map(|&r| relpos[r]).collect();
                for (b, &pb) in map.iter().enumerate() {
                    let ucol = u.column(b);
                    for (a_idx, &pa) in map.iter().enumerate().skip(b) {
                        front[(pa, pb)] += ucol[a_idx];
                    }
                }
            }
            negatives += partial_ldlt(&mut front, k, &mut d[f..f + k], floor, f)?;
            if m > k {
                let u = front.view((k, k), (m - k, m - k)).clone_owned();
                stack.push((u, s));
            }
            l_blocks.push(front.columns(0, k).clone_owned());
        }
        debug_assert!(stack.is_empty());
        Ok(Self {
            symbolic,
            l: l_blocks,
            d,
            negatives,
        })
    }

    /// Analyzes and factors in one step.
    pub fn analyze_and_factor(a: &SparseSymOp, ordering: Ordering) -> Result<Self, LinalgError> {
        let sym = Arc::new(SymbolicLdlt::analyze(a, ordering)?);
        Self::factor(sym, a)
    }

    pub fn symbolic(&self) -> &Arc<SymbolicLdlt> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// Number of negative pivots (negative eigenvalues of the factored matrix).
    pub fn negative_pivots(&self) -> usize {
        self.negatives
    }

    /// Solves `A x = b` in place for one right-hand side.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut block = DMatrix::from_column_slice(b.len(), 1, b);
        self.solve_block(&mut block);
        b.copy_from_slice(block.as_slice());
    }

    /// Solves `A X = B` in place for a block of right-hand sides.
    pub fn solve_block(&self, b: &mut DMatrix<f64>) {
        let sym = &*self.symbolic;
        let n = sym.n;
        assert_eq!(b.nrows(), n, "right-hand side length");
        let nrhs = b.ncols();
        let mut y = DMatrix::<f64>::zeros(n, nrhs);
        for c in 0..nrhs {
            for (i, &old) in sym.perm.iter().enumerate() {
                y[(i, c)] = b[(old, c)];
            }
        }
        let nsn = sym.sn_rows.len();
        // Forward substitution with the unit lower factor.
        for s in 0..nsn {
            let f = sym.sn_start[s];
            let k = sym.sn_start[s + 1] - f;
            let rows = &sym.sn_rows[s];
            let m = rows.len();
            let l = &self.l[s];
            let mut x = y.rows(f, k).clone_owned();
            for c in 0..nrhs {
                let mut xc = x.column_mut(c);
                for j in 0..k {
                    let xj = xc[j];
                    if xj != 0.0 {
                        for i in (j + 1)..k {
                            xc[i] -= l[(i, j)] * xj;
                        }
                    }
                }
            }
            if m > k {
                let z = l.rows(k, m - k) * &x;
                for (a, &r) in rows[k..].iter().enumerate() {
                    for c in 0..nrhs {
                        y[(r, c)] -= z[(a, c)];
                    }
                }
            }
            y.rows_mut(f, k).copy_from(&x);
        }
        for (i, di) in self.d.iter().enumerate() {
            for c in 0..nrhs {
                y[(i, c)] /= di;
            }
        }
        // Backward substitution with Lᵀ.
        for s in (0..nsn).rev() {
            let f = sym.sn_start[s];
            let k = sym.sn_start[s + 1] - f;
            let rows = &sym.sn_rows[s];
            let m = rows.len();
            let l = &self.l[s];
            let mut x = y.rows(f, k).clone_owned();
            if m > k {
                let mut g = DMatrix::<f64>::zeros(m - k, nrhs);
                for (a, &r) in rows[k..].iter().enumerate() {
                    for c in 0..nrhs {
                        g[(a, c)] = y[(r, c)];
                    }
                }
                x.gemm_tr(-1.0, &l.rows(k, m - k), &g, 1.0);
            }
            for c in 0..nrhs {
                let mut xc = x.column_mut(c);
                for j in (0..k).rev() {
                    let mut acc = xc[j];
                    for i in (j + 1)..k {
                        acc -= l[(i, j)] * xc[i];
                    }
                    xc[j] = acc;
                }
            }
            y.rows_mut(f, k).copy_from(&x);
        }
        for c in 0..nrhs {
            for (i, &old) in sym.perm.iter().enumerate() {
                b[(old, c)] = y[(i, c)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseLdlt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 3D 7-point Laplacian with `dofs` coupled components per node.
    fn laplacian_3d(nx: usize, dofs: usize, shift: f64) -> SparseSymOp {
        let id = |i: usize, j: usize, k: usize| i + nx * (j + nx * k);
        let mut t = Vec::new();
        for k in 0..nx {
            for j in 0..nx {
                for i in 0..nx {
                    let p = id(i, j, k);
                    let mut nb = Vec::new();
                    if i + 1 < nx {
                        nb.push(id(i + 1, j, k));
                    }
                    if j + 1 < nx {
                        nb.push(id(i, j + 1, k));
                    }
                    if k + 1 < nx {
                        nb.push(id(i, j, k + 1));
                    }
                    for a in 0..dofs {
                        t.push((dofs * p + a, dofs * p + a, 6.0 - shift));
                        for b in 0..dofs {
                            if a != b {
                                t.push((dofs * p + a, dofs * p + b, 0.1));
                            }
                        }
                        for &q in &nb {
                            for b in 0..dofs {
                                let v = if a == b { -1.0 } else { 0.05 };
                                t.push((dofs * p + a, dofs * q + b, v));
                                t.push((dofs * q + b, dofs * p + a, v));
                            }
                        }
                    }
                }
            }
        }
        SparseSymOp::from_triplets(dofs * nx * nx * nx, t).unwrap()
    }

    fn check_solve(a: &SparseSymOp, ordering: Ordering) {
        let f = LdltFactor::analyze_and_factor(a, ordering).unwrap();
        let n = a.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = a.mul_vec(&x);
        f.solve_in_place(&mut b);
        let err = b.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{ordering:?}: error {err}");
    }

    #[test]
    fn solves_match_for_all_orderings() {
        let a = laplacian_3d(7, 3, 0.0);
        for ord in [
            Ordering::Natural,
            Ordering::ReverseCuthillMcKee,
            Ordering::NestedDissection,
        ] {
            check_solve(&a, ord);
        }
    }

    #[test]
    fn indefinite_matrix_inertia_matches_dense() {
        let a = laplacian_3d(5, 2, 3.7);
        let sparse = LdltFactor::analyze_and_factor(&a, Ordering::NestedDissection).unwrap();
        let dense = DenseLdlt::factor(&a.to_dense()).unwrap();
        assert_eq!(sparse.negative_pivots(), dense.negative_pivots());
        let eig = nalgebra::SymmetricEigen::new(a.to_dense());
        let neg = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
        assert_eq!(sparse.negative_pivots(), neg);
        check_solve(&a, Ordering::NestedDissection);
    }

    #[test]
    fn block_solve_matches_single_solves() {
        let a = laplacian_3d(6, 1, 0.0);
        let f = LdltFactor::analyze_and_factor(&a, Ordering::NestedDissection).unwrap();
        let n = a.dim();
        let b = DMatrix::from_fn(n, 4, |i, j| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let mut blk = b.clone();
        f.solve_block(&mut blk);
        for c in 0..4 {
            let mut col: Vec<f64> = b.column(c).iter().copied().collect();
            f.solve_in_place(&mut col);
            for i in 0..n {
                assert!((col[i] - blk[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refactor_with_same_pattern_and_reject_other() {
        let a = laplacian_3d(5, 1, 0.0);
        let sym = Arc::new(SymbolicLdlt::analyze(&a, Ordering::NestedDissection).unwrap());
        let b = SparseSymOp::lin_comb(1.0, &a, -0.5, &SparseSymOp::identity(a.dim())).unwrap();
        assert!(LdltFactor::factor(sym.clone(), &b).is_ok());
        let other = laplacian_3d(5, 2, 0.0);
        assert!(matches!(
            LdltFactor::factor(sym, &other),
            Err(LinalgError::PatternMismatch(_))
        ));
    }

    #[test]
    fn singular_matrix_is_reported() {
        // Graph Laplacian of a path: singular (constant kernel).
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.push((i, i, 1.0));
            t.push((i + 1, i + 1, 1.0));
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
        let a = SparseSymOp::from_triplets(n, t).unwrap();
        let r = LdltFactor::analyze_and_factor(&a, Ordering::Natural);
        assert!(matches!(r, Err(LinalgError::FactorizationSingular { .. })));
    }

    #[test]
    fn nested_dissection_reduces_fill() {
        let a = laplacian_3d(12, 1, 0.0);
        let nat = SymbolicLdlt::analyze(&a, Ordering::Natural).unwrap();
        let nd = SymbolicLdlt::analyze(&a, Ordering::NestedDissection).unwrap();
        assert!(nd.nnz_l() < nat.nnz_l());
    }

    #[test]
    fn postorder_visits_children_first() {
        let parent = vec![2, 2, 4, 4, NONE];
        let post = postorder(&parent);
        let pos = invert(&post);
        for (j, &p) in parent.iter().enumerate() {
            if p != NONE {
                assert!(pos[j] < pos[p]);
            }
        }
    }
}
