//! Classification of computed eigenpairs into the Maxwell branch
//! (divergence-free fields) and the gradient branch `(τΛ, ∇f)`.

use curlcurl_linalg::{cluster_values, Cluster, ModeTag, SparseSymOp, Spectrum};
use nalgebra::DMatrix;

use crate::error::FemError;
use crate::fem::{assemble_divdiv, assemble_mass, FemSpace};

/// Default threshold on the relative divergence energy.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Relative half-width of the band around the threshold tagged unclassified.
pub const AMBIGUITY_BAND: f64 = 0.1;
/// Relative gap below which eigenvalues are treated as one cluster.
pub const CLUSTER_TOL: f64 = 1e-6;

/// Tags each pair from its relative divergence energy
/// `r = (uᵀDu / uᵀMu) · τ / λ`: gradient modes have `r = 1`, Maxwell modes `r = 0`.
///
/// Inside numerically degenerate clusters the eigenvectors are first rotated
/// to diagonalize `D`, which separates the two branches when they share an
/// eigenvalue.
pub fn classify_with(
    spectrum: &mut Spectrum,
    divdiv: &SparseSymOp,
    mass: &SparseSymOp,
    tau: f64,
    threshold: f64,
) {
    let groups = cluster_values(&spectrum.eigenvalues, CLUSTER_TOL);
    for c in &groups {
        if c.len < 2 {
            continue;
        }
        let (_, q) = group_divergence(spectrum, divdiv, c);
        let rotated = spectrum.eigenvectors.columns(c.start, c.len) * q;
        spectrum.eigenvectors.columns_mut(c.start, c.len).copy_from(&rotated);
    }
    let dx = divdiv.mul_dense(&spectrum.eigenvectors);
    let mx = mass.mul_dense(&spectrum.eigenvectors);
    for i in 0..spectrum.len() {
        let u = spectrum.eigenvectors.column(i);
        let num = u.dot(&dx.column(i));
        let den = u.dot(&mx.column(i));
        let lambda = spectrum.eigenvalues[i];
        let r = if lambda > 1e-12 && den > 0.0 {
            num / den * tau / lambda
        } else {
            f64::NAN
        };
        spectrum.div_ratios[i] = r;
        spectrum.tags[i] = tag_for(r, threshold);
    }
}

/// Classifies by groups of eigenvalues that belong together, such as the
/// discrete approximations of one multiple eigenvalue.
///
/// Discretization splits a multiple eigenvalue into nearby values whose
/// eigenvectors mix the two branches. For each group the eigenvalues `d_k` of
/// `XᵀDX` (with `X` the `M`-orthonormal group basis) are the divergence
/// energies of the branch-separating rotation of the group. The ratios
/// `d_k · τ / λ̄` (with `λ̄` the group mean) are stored in increasing order at
/// the group positions and tagged. Eigenvectors and eigenvalues are left
/// untouched. Indices outside every group are classified individually.
pub fn classify_grouped(
    spectrum: &mut Spectrum,
    divdiv: &SparseSymOp,
    mass: &SparseSymOp,
    tau: f64,
    threshold: f64,
    groups: &[Cluster],
) {
    let mut covered = vec![false; spectrum.len()];
    for g in groups {
        assert!(g.start + g.len <= spectrum.len(), "group exceeds the spectrum");
        let mean = spectrum.eigenvalues[g.range()].iter().sum::<f64>() / g.len as f64;
        let (d, _) = group_divergence(spectrum, divdiv, g);
        for (k, dk) in d.iter().enumerate() {
            let r = if mean > 1e-12 { dk * tau / mean } else { f64::NAN };
            spectrum.div_ratios[g.start + k] = r;
            spectrum.tags[g.start + k] = tag_for(r, threshold);
            covered[g.start + k] = true;
        }
    }
    let dx = divdiv.mul_dense(&spectrum.eigenvectors);
    let mx = mass.mul_dense(&spectrum.eigenvectors);
    for i in (0..spectrum.len()).filter(|&i| !covered[i]) {
        let u = spectrum.eigenvectors.column(i);
        let den = u.dot(&mx.column(i));
        let lambda = spectrum.eigenvalues[i];
        let r = if lambda > 1e-12 && den > 0.0 {
            u.dot(&dx.column(i)) / den * tau / lambda
        } else {
            f64::NAN
        };
        spectrum.div_ratios[i] = r;
        spectrum.tags[i] = tag_for(r, threshold);
    }
}

/// Eigenvalues of `XᵀDX` for the group columns, ascending, with the
/// corresponding orthogonal rotation.
fn group_divergence(spectrum: &Spectrum, divdiv: &SparseSymOp, c: &Cluster) -> (Vec<f64>, DMatrix<f64>) {
    let x = spectrum.eigenvectors.columns(c.start, c.len).into_owned();
    let g = x.transpose() * divdiv.mul_dense(&x);
    let g = (&g + g.transpose()) * 0.5;
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..c.len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let q = DMatrix::from_fn(c.len, c.len, |i, j| eig.eigenvectors[(i, order[j])]);
    (order.iter().map(|&k| eig.eigenvalues[k]).collect(), q)
}

fn tag_for(r: f64, threshold: f64) -> ModeTag {
    let lo = threshold * (1.0 - AMBIGUITY_BAND);
    let hi = threshold * (1.0 + AMBIGUITY_BAND);
    if !r.is_finite() || (r >= lo && r <= hi) {
        ModeTag::Unclassified
    } else if r > hi {
        ModeTag::Gradient
    } else {
        ModeTag::Maxwell
    }
}

/// Assembles `D` and `M` on `space` and classifies the spectrum.
pub fn classify_modes(
    spectrum: &mut Spectrum,
    space: &FemSpace,
    tau: f64,
    threshold: f64,
) -> Result<(), FemError> {
    let d = assemble_divdiv(space)?;
    let m = assemble_mass(space)?;
    classify_with(spectrum, &d, &m, tau, threshold);
    Ok(())
}
