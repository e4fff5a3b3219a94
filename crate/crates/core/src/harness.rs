//! Experiment orchestration: the analytic cube oracle and benchmark, the
//! τ-scaling check of the two spectral branches, ε-sweeps over perturbation
//! families with eigenvalue gap tables, E-distances between eigenspaces on
//! different domains, and the CSV writers for these results.

use std::f64::consts::PI;
use std::io::Write;

use log::info;
use nalgebra::{DMatrix, Vector3};

use crate::atlas::{AtlasDomain, PerturbationFamily, ProfileFunction, Rect2};
use crate::error::{HarnessError, MeshError};
use crate::fem::{assemble_divdiv, assemble_h1, assemble_mass, assemble_stiffness, build_space, FemSpace};
use crate::gaffney::discrete_gaffney_constant;
use crate::linalg::{
    cluster_values, count_eigenvalues_below, solve_gevp, Cluster, EigenConfig, FactorKind, ModeTag, Ordering,
    ShiftMode, SparseSymOp, Spectrum,
};
use crate::mesh::{mesh_box, shear_fit, TetMesh};
use crate::modes::{classify_grouped, DEFAULT_THRESHOLD};
use crate::parallel::par_map;
use crate::quadrature::tet_rule;

/// One cluster of the analytic spectrum on a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticCluster {
    pub lambda: f64,
    pub maxwell: usize,
    pub gradient: usize,
}

impl AnalyticCluster {
    pub fn multiplicity(&self) -> usize {
        self.maxwell + self.gradient
    }

    /// `maxwell`, `gradient`, or `mixed` when both branches contribute.
    pub fn tag(&self) -> &'static str {
        match (self.maxwell, self.gradient) {
            (_, 0) => "maxwell",
            (0, _) => "gradient",
            _ => "mixed",
        }
    }
}

/// First `m` clusters of the penalized problem on `(0, side)³`.
///
/// The Maxwell branch has eigenvalues `(π/side)² (k₁² + k₂² + k₃²)` over
/// triples with at least two positive indices (two fields when all three
/// are positive, one when exactly one index vanishes). The gradient branch
/// has `τ (π/side)² (k₁² + k₂² + k₃²)` over all-positive triples.
pub fn analytic_cube_spectrum(tau: f64, side: f64, m: usize) -> Result<Vec<AnalyticCluster>, HarnessError> {
    if !(side > 0.0) || !(tau > 0.0) {
        return Err(HarnessError::InvalidInput(format!(
            "cube side and tau must be positive (side {side}, tau {tau})"
        )));
    }
    let unit = (PI / side).powi(2);
    let mut s_max = 16usize;
    loop {
        let kmax = (s_max as f64).sqrt() as usize + 1;
        let mut entries: Vec<(f64, usize, usize)> = Vec::new();
        for a in 0..=kmax {
            for b in 0..=kmax {
                for c in 0..=kmax {
                    let s = a * a + b * b + c * c;
                    if s == 0 || s > s_max {
                        continue;
                    }
                    let positive = [a, b, c].iter().filter(|&&k| k > 0).count();
                    match positive {
                        3 => {
                            entries.push((unit * s as f64, 2, 0));
                            if tau * s as f64 <= s_max as f64 {
                                entries.push((tau * unit * s as f64, 0, 1));
                            }
                        }
                        2 => entries.push((unit * s as f64, 1, 0)),
                        _ => {}
                    }
                }
            }
        }
        // Values below this bound are complete for both branches.
        let complete = unit * s_max as f64 * tau.min(1.0);
        entries.retain(|e| e.0 <= complete);
        entries.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<AnalyticCluster> = Vec::new();
        for (v, mx, gr) in entries {
            match out.last_mut() {
                Some(c) if (v - c.lambda).abs() <= 1e-12 * v => {
                    c.maxwell += mx;
                    c.gradient += gr;
                }
                _ => out.push(AnalyticCluster {
                    lambda: v,
                    maxwell: mx,
                    gradient: gr,
                }),
            }
        }
        if out.len() > m {
            out.truncate(m);
            return Ok(out);
        }
        s_max *= 2;
    }
}

/// Assembled penalized problem on the cube `(0, π)³`.
pub struct CubeProblem {
    pub tau: f64,
    pub side: f64,
    pub space: FemSpace,
    pub stiffness: SparseSymOp,
    pub mass: SparseSymOp,
    pub divdiv: SparseSymOp,
}

impl CubeProblem {
    pub fn new(tau: f64, n_mesh: usize, order: usize) -> Result<Self, HarnessError> {
        let side = PI;
        let mesh = mesh_box(Rect2::new((0.0, side), (0.0, side)), 0.0, side, [n_mesh; 3])?;
        let space = build_space(&mesh, order)?;
        Ok(Self {
            tau,
            side,
            stiffness: assemble_stiffness(&space, tau)?,
            mass: assemble_mass(&space)?,
            divdiv: assemble_divdiv(&space)?,
            space,
        })
    }
}

/// Comparison of one analytic cluster with the computed eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeClusterRow {
    pub exact: AnalyticCluster,
    /// Computed eigenvalues at the cluster's positions in the sorted list.
    pub computed: Vec<f64>,
    /// Number of computed eigenvalues whose nearest analytic value is this cluster.
    pub computed_multiplicity: usize,
    pub max_rel_error: f64,
    pub maxwell: usize,
    pub gradient: usize,
    pub unclassified: usize,
    /// Rayleigh values of the Maxwell directions of the separated cluster.
    pub maxwell_values: Vec<f64>,
}

impl CubeClusterRow {
    pub fn mean(&self) -> f64 {
        self.computed.iter().sum::<f64>() / self.computed.len() as f64
    }

    pub fn multiplicity_ok(&self) -> bool {
        self.computed_multiplicity == self.exact.multiplicity()
    }

    pub fn tags_ok(&self) -> bool {
        self.maxwell == self.exact.maxwell && self.gradient == self.exact.gradient && self.unclassified == 0
    }
}

/// Divergence-separated rotation of a cluster of pairs: for each direction
/// `(τ d / q, q)` with `d` its divergence energy and `q` its Rayleigh value.
/// Sorted by the ratio, so Maxwell directions come first.
pub fn branch_values(s: &Spectrum, divdiv: &SparseSymOp, cols: std::ops::Range<usize>, tau: f64) -> Vec<(f64, f64)> {
    let x = s.eigenvectors.columns(cols.start, cols.len()).into_owned();
    let dw = x.transpose() * divdiv.mul_dense(&x);
    let eig = nalgebra::SymmetricEigen::new(0.5 * (&dw + dw.transpose()));
    let mut out: Vec<(f64, f64)> = (0..eig.eigenvalues.len())
        .map(|k| {
            let v = eig.eigenvectors.column(k);
            let q: f64 = (0..v.len()).map(|i| s.eigenvalues[cols.start + i] * v[i] * v[i]).sum();
            (tau * eig.eigenvalues[k] / q, q)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Result of [`cube_benchmark`].
#[derive(Clone, Debug)]
pub struct CubeBenchmark {
    pub tau: f64,
    pub n_mesh: usize,
    pub order: usize,
    pub dofs: usize,
    pub rows: Vec<CubeClusterRow>,
    /// Classified eigenpairs of the tracked clusters.
    pub spectrum: Spectrum,
}

impl CubeBenchmark {
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.max_rel_error <= rel_tol && r.multiplicity_ok() && r.tags_ok())
    }
}

/// Restriction of a spectrum to its first `k` pairs.
pub fn truncate_spectrum(s: &Spectrum, k: usize) -> Spectrum {
    let k = k.min(s.len());
    let mut out = Spectrum::new(
        s.eigenvalues[..k].to_vec(),
        s.eigenvectors.columns(0, k).into_owned(),
        s.residuals[..k].to_vec(),
        s.shift,
    );
    out.tags = s.tags[..k].to_vec();
    out.div_ratios = s.div_ratios[..k].to_vec();
    out
}

/// Solves the cube problem for the first `m` analytic clusters (plus the
/// next one, to detect intruding eigenvalues) and compares clusters,
/// multiplicities and branch tags with [`analytic_cube_spectrum`].
pub fn cube_benchmark(tau: f64, n_mesh: usize, order: usize, m: usize) -> Result<CubeBenchmark, HarnessError> {
    let p = CubeProblem::new(tau, n_mesh, order)?;
    benchmark_on(&p, n_mesh, m)
}

/// [`cube_benchmark`] on an assembled problem.
pub fn benchmark_on(p: &CubeProblem, n_mesh: usize, m: usize) -> Result<CubeBenchmark, HarnessError> {
    if m == 0 {
        return Err(HarnessError::InvalidInput("at least one cluster is required".into()));
    }
    let exact = analytic_cube_spectrum(p.tau, p.side, m + 1)?;
    let tracked: usize = exact[..m].iter().map(AnalyticCluster::multiplicity).sum();
    let count = tracked + exact[m].multiplicity();
    let cfg = EigenConfig {
        count: count.min(p.space.num_dofs()),
        shift: 0.75 * exact[0].lambda,
        ..Default::default()
    };
    let mut spec = solve_gevp(&p.stiffness, &p.mass, &cfg)?;
    let mut groups = Vec::new();
    let mut start = 0;
    for c in &exact {
        let len = c.multiplicity().min(spec.len().saturating_sub(start));
        if len == 0 {
            break;
        }
        groups.push(Cluster {
            start,
            len,
            mean: c.lambda,
        });
        start += len;
    }
    classify_grouped(&mut spec, &p.divdiv, &p.mass, p.tau, DEFAULT_THRESHOLD, &groups);
    let nearest = |v: f64| -> usize {
        (0..exact.len())
            .min_by(|&i, &j| (v - exact[i].lambda).abs().total_cmp(&(v - exact[j].lambda).abs()))
            .unwrap_or(0)
    };
    let mut rows = Vec::with_capacity(m);
    for (ci, g) in groups.iter().take(m).enumerate() {
        let ex = &exact[ci];
        let range = g.range();
        let computed: Vec<f64> = spec.eigenvalues[range.clone()].to_vec();
        let count_tag = |t: ModeTag| spec.tags[range.clone()].iter().filter(|&&x| x == t).count();
        let maxwell_values = branch_values(&spec, &p.divdiv, range.clone(), p.tau)
            .into_iter()
            .filter(|(r, _)| *r < DEFAULT_THRESHOLD)
            .map(|(_, q)| q)
            .collect();
        rows.push(CubeClusterRow {
            maxwell_values,
            computed_multiplicity: spec.eigenvalues.iter().filter(|&&v| nearest(v) == ci).count(),
            max_rel_error: computed
                .iter()
                .map(|v| (v - ex.lambda).abs() / ex.lambda)
                .fold(0.0, f64::max),
            maxwell: count_tag(ModeTag::Maxwell),
            gradient: count_tag(ModeTag::Gradient),
            unclassified: count_tag(ModeTag::Unclassified),
            computed,
            exact: ex.clone(),
        });
    }
    info!(
        "cube benchmark: tau {}, n {n_mesh}, order {}, {} dofs",
        p.tau,
        p.space.order(),
        p.space.num_dofs()
    );
    Ok(CubeBenchmark {
        tau: p.tau,
        n_mesh,
        order: p.space.order(),
        dofs: p.space.num_dofs(),
        rows,
        spectrum: truncate_spectrum(&spec, tracked),
    })
}

/// Gradient cluster of the base run and its counterpart after changing τ.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientShiftRow {
    /// Mean computed eigenvalue of the cluster at the base τ.
    pub base_value: f64,
    pub expected_count: usize,
    /// Gradient-branch Rayleigh values found in the search window at the new τ.
    pub found: Vec<f64>,
    /// `found / base_value`.
    pub factors: Vec<f64>,
}

/// Result of [`tau_scaling_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct TauScalingReport {
    pub tau_base: f64,
    pub tau_new: f64,
    pub gradient: Vec<GradientShiftRow>,
    /// Sorted Maxwell-direction values of both runs, paired in order.
    pub maxwell_pairs: Vec<(f64, f64)>,
    pub max_maxwell_rel_change: f64,
}

impl TauScalingReport {
    /// Every gradient cluster reappears with its multiplicity and every
    /// factor lies within `ratio · (1 ± rel_tol)`.
    pub fn gradient_ok(&self, rel_tol: f64) -> bool {
        let ratio = self.tau_new / self.tau_base;
        !self.gradient.is_empty()
            && self.gradient.iter().all(|r| {
                r.found.len() == r.expected_count && r.factors.iter().all(|f| (f / ratio - 1.0).abs() <= rel_tol)
            })
    }

    pub fn maxwell_ok(&self, rel_tol: f64) -> bool {
        !self.maxwell_pairs.is_empty() && self.max_maxwell_rel_change <= rel_tol
    }
}

/// Relative half-width of the window searched for moved gradient modes.
pub const GRADIENT_WINDOW: f64 = 0.02;

/// Compares a base cube run with a run at another τ on the same mesh.
///
/// Maxwell-tagged eigenvalues of the tracked clusters are paired in sorted
/// order. Each gradient cluster of the base run is searched at the new τ in
/// the window `(τ_new/τ_base) λ̄ (1 ± GRADIENT_WINDOW)`: the number of
/// eigenvalues there comes from the inertia of the shifted pencil, those
/// pairs are computed nearest to the window centre, and the divergence form
/// restricted to them separates the gradient directions.
pub fn tau_scaling_check(
    base: &CubeBenchmark,
    scaled_problem: &CubeProblem,
    scaled: &CubeBenchmark,
) -> Result<TauScalingReport, HarnessError> {
    let ratio = scaled.tau / base.tau;
    let collect = |b: &CubeBenchmark| -> Vec<f64> {
        let mut v: Vec<f64> = b.rows.iter().flat_map(|r| r.maxwell_values.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (m0, m1) = (collect(base), collect(scaled));
    let maxwell_pairs: Vec<(f64, f64)> = m0.iter().copied().zip(m1.iter().copied()).collect();
    let mut max_rel = maxwell_pairs
        .iter()
        .map(|(a, b)| (b - a).abs() / a)
        .fold(0.0, f64::max);
    if m0.len() != m1.len() {
        max_rel = f64::INFINITY;
    }
    let p = scaled_problem;
    let mut gradient = Vec::new();
    for row in base.rows.iter().filter(|r| r.exact.gradient > 0) {
        let centre = ratio * row.mean();
        let (lo, hi) = (centre * (1.0 - GRADIENT_WINDOW), centre * (1.0 + GRADIENT_WINDOW));
        let below = |s: f64| count_eigenvalues_below(&p.stiffness, &p.mass, s, FactorKind::Auto, Ordering::NestedDissection);
        let count = below(hi)? - below(lo)?;
        let mut found = Vec::new();
        if count > 0 {
            let cfg = EigenConfig {
                count,
                shift: centre,
                mode: ShiftMode::Nearest,
                ..Default::default()
            };
            let s = solve_gevp(&p.stiffness, &p.mass, &cfg)?;
            found = branch_values(&s, &p.divdiv, 0..s.len(), p.tau)
                .into_iter()
                .filter(|(r, _)| *r > DEFAULT_THRESHOLD + 0.05)
                .map(|(_, q)| q)
                .collect();
            found.sort_by(f64::total_cmp);
        }
        gradient.push(GradientShiftRow {
            base_value: row.mean(),
            expected_count: row.exact.gradient,
            factors: found.iter().map(|q| q / row.mean()).collect(),
            found,
        });
    }
    Ok(TauScalingReport {
        tau_base: base.tau,
        tau_new: scaled.tau,
        gradient,
        maxwell_pairs,
        max_maxwell_rel_change: max_rel,
    })
}

/// Subspace distance between eigenspaces on two domains.
#[derive(Clone, Debug, PartialEq)]
pub struct EDistance {
    /// `(Σ_i ‖u_ε,i - (U₀Q)_i‖²_{L²(Ω_ε)} / k)^{1/2}` with the optimal orthogonal `Q`
    /// (extension of `U₀` by zero outside `Ω`).
    pub distance: f64,
    /// Singular values of the cross Gram matrix `⟨u₀,j, u_ε,i⟩`.
    pub cosines: Vec<f64>,
    pub points: usize,
    pub location_failures: usize,
}

/// Largest tolerated fraction of quadrature points that cannot be located.
pub const LOCATION_FAILURE_LIMIT: f64 = 1e-3;

/// Values of the fields `cols` of `space` at a point of element `t`.
fn field_values(space: &FemSpace, u: &DMatrix<f64>, cols: &[usize], t: usize, bary: [f64; 4]) -> Vec<Vector3<f64>> {
    let n = u.nrows();
    cols.iter()
        .map(|&c| space.eval(t, bary, &u.as_slice()[c * n..(c + 1) * n]).0)
        .collect()
}

/// E-distance between the span of `u_eps[:, cols_eps]` on `space_eps` and the
/// span of `u_0[:, cols_0]` on `space_0`, by quadrature over the elements of
/// `space_eps` with `quad_n³` collapsed Gauss points per element.
///
/// `inside_0` decides membership in the reference domain; reference fields
/// are extended by zero outside it and evaluated by point location inside.
pub fn e_distance(
    space_eps: &FemSpace,
    u_eps: &DMatrix<f64>,
    cols_eps: &[usize],
    space_0: &FemSpace,
    u_0: &DMatrix<f64>,
    cols_0: &[usize],
    inside_0: &(dyn Fn([f64; 3]) -> bool + Sync),
    quad_n: usize,
) -> Result<EDistance, HarnessError> {
    let k = cols_eps.len();
    if k == 0 || cols_0.len() != k {
        return Err(HarnessError::InvalidInput(format!(
            "E-distance needs equal nonzero subspace sizes ({} vs {})",
            k,
            cols_0.len()
        )));
    }
    let mesh = space_eps.mesh();
    let mesh0 = space_0.mesh();
    let rule = tet_rule(quad_n.max(1));
    type PointData = (f64, Vec<Vector3<f64>>, Vec<Vector3<f64>>, bool);
    let per_tet: Vec<Vec<PointData>> = par_map(mesh.num_tets(), |t| {
        let vol6 = 6.0 * mesh.tet_volume(t);
        let q = mesh.tet_points(t);
        rule.iter()
            .map(|r| {
                let b = r.bary;
                let p: [f64; 3] =
                    std::array::from_fn(|d| b[0] * q[0][d] + b[1] * q[1][d] + b[2] * q[2][d] + b[3] * q[3][d]);
                let ue = field_values(space_eps, u_eps, cols_eps, t, b);
                let (u0, failed) = if inside_0(p) {
                    match mesh0.locate(p, 1e-8) {
                        Some((t0, b0)) => (field_values(space_0, u_0, cols_0, t0, b0), false),
                        None => (vec![Vector3::zeros(); k], true),
                    }
                } else {
                    (vec![Vector3::zeros(); k], false)
                };
                (r.weight * vol6, ue, u0, failed)
            })
            .collect()
    });
    let points: usize = per_tet.iter().map(Vec::len).sum();
    let failures = per_tet.iter().flatten().filter(|d| d.3).count();
    if failures as f64 > LOCATION_FAILURE_LIMIT * points as f64 {
        return Err(HarnessError::InvalidInput(format!(
            "point location failed for {failures} of {points} quadrature points"
        )));
    }
    // Cross Gram G[j][i] = ⟨u₀_j, u_ε_i⟩ and the optimal rotation Q = U Vᵀ.
    let mut g = DMatrix::<f64>::zeros(k, k);
    for (w, ue, u0, _) in per_tet.iter().flatten() {
        for j in 0..k {
            for i in 0..k {
                g[(j, i)] += w * u0[j].dot(&ue[i]);
            }
        }
    }
    let svd = g.clone().svd(true, true);
    let q = svd.u.as_ref().expect("u requested") * svd.v_t.as_ref().expect("v_t requested");
    let mut sq = 0.0;
    for (w, ue, u0, _) in per_tet.iter().flatten() {
        for i in 0..k {
            let mut d = ue[i];
            for j in 0..k {
                d -= u0[j] * q[(j, i)];
            }
            sq += w * d.norm_squared();
        }
    }
    let mut cosines: Vec<f64> = svd.singular_values.iter().copied().collect();
    cosines.sort_by(|a, b| b.total_cmp(a));
    Ok(EDistance {
        distance: (sq / k as f64).max(0.0).sqrt(),
        cosines,
        points,
        location_failures: failures,
    })
}

/// Settings of [`sweep_epsilon`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    /// Cells per horizontal axis of the common mesh.
    pub n_horizontal: usize,
    pub n_vertical: usize,
    pub order: usize,
    pub tau: f64,
    /// Number of tracked eigenvalues `n = 1..=modes`.
    pub modes: usize,
    /// Number of leading eigenvalue clusters whose E-distances are computed.
    pub e_clusters: usize,
    /// Relative gap required at the last ε.
    pub gap_tol: f64,
    pub solver_tol: f64,
    /// Relative tolerance grouping eigenvalues into clusters.
    pub cluster_tol: f64,
    pub quad_n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![0.2, 0.1, 0.05],
            n_horizontal: 16,
            n_vertical: 8,
            order: 2,
            tau: 1.0,
            modes: 6,
            e_clusters: 2,
            gap_tol: 0.05,
            solver_tol: 1e-9,
            cluster_tol: 1e-3,
            quad_n: 4,
        }
    }
}

/// Per-ε outcome of a sweep (ε = 0 for the reference domain).
#[derive(Clone, Debug, PartialEq)]
pub struct EpsResult {
    pub eps: f64,
    pub mesh_counts: [usize; 3],
    pub dofs: usize,
    /// First `modes` eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub tags: Vec<ModeTag>,
    /// Multiplicities of the clusters among the tracked eigenvalues.
    pub multiplicities: Vec<usize>,
    /// `μ_n = (λ_n + 1)⁻¹`.
    pub mu: Vec<f64>,
    /// `|λ_n(ε) - λ_n(0)|`.
    pub gaps: Vec<f64>,
    /// One entry per tracked reference cluster.
    pub e_distances: Vec<f64>,
    pub location_failures: usize,
    /// Largest Gaffney ratio over the computed eigenvectors.
    pub gaffney: f64,
    /// `|Ω_ε| - |Ω|` from the meshes.
    pub volume_delta: f64,
    /// Whether the mesh had to be refined after an inverted element.
    pub refined: bool,
}

impl EpsResult {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// `max_n |λ_n(ε) - λ_n(0)| / λ_n(0)` against the given reference.
    pub fn max_rel_gap(&self, reference: &EpsResult) -> f64 {
        self.gaps
            .iter()
            .zip(&reference.eigenvalues)
            .map(|(g, l)| g / l.abs())
            .fold(0.0, f64::max)
    }
}

/// Result of [`sweep_epsilon`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub eps_list: Vec<f64>,
    pub reference: EpsResult,
    /// One entry per ε in `eps_list`, in order.
    pub rows: Vec<EpsResult>,
    /// Reference clusters tracked for E-distances (index ranges).
    pub tracked_clusters: Vec<Cluster>,
    pub gap_tol: f64,
    pub cluster_tol: f64,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

impl ConvergenceReport {
    /// `max_n |λ_n(ε) - λ_n(0)|` along the sweep.
    pub fn max_gaps(&self) -> Vec<f64> {
        self.rows.iter().map(EpsResult::max_gap).collect()
    }

    pub fn max_rel_gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.max_rel_gap(&self.reference)).collect()
    }

    pub fn max_gap_decreasing(&self) -> bool {
        strictly_decreasing(&self.max_gaps())
    }

    /// `max_{n ∈ c} |λ_n(ε) - λ_n(0)|` along the sweep for reference cluster `c`
    /// among the tracked eigenvalues.
    pub fn cluster_gap_series(&self, c: &Cluster) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| c.range().filter(|&n| n < r.gaps.len()).map(|n| r.gaps[n]).fold(0.0, f64::max))
            .collect()
    }

    /// Clusters of the tracked reference eigenvalues.
    pub fn gap_clusters(&self) -> Vec<Cluster> {
        cluster_values(&self.reference.eigenvalues, self.cluster_tol)
    }

    /// Every tracked cluster gap sequence decreases (ties at zero count as decreasing).
    pub fn cluster_gaps_decreasing(&self) -> bool {
        self.gap_clusters().iter().all(|c| {
            self.cluster_gap_series(c)
                .windows(2)
                .all(|w| w[1] < w[0] || w[1] == 0.0)
        })
    }

    /// Every per-n gap sequence decreases (ties at zero count as decreasing).
    /// Pairing by index inside a split cluster depends on the rotation of the
    /// computed basis, so this is reported for information only.
    pub fn all_gaps_decreasing(&self) -> bool {
        (0..self.reference.eigenvalues.len()).all(|n| {
            self.rows
                .windows(2)
                .all(|w| w[1].gaps[n] < w[0].gaps[n] || w[1].gaps[n] == 0.0)
        })
    }

    pub fn final_gap_ok(&self) -> bool {
        self.max_rel_gaps().last().is_some_and(|g| *g < self.gap_tol)
    }

    /// E-distance sequence of tracked cluster `c` along the sweep.
    pub fn e_distance_series(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.e_distances[c]).collect()
    }

    pub fn e_distances_decreasing(&self) -> bool {
        (0..self.tracked_clusters.len()).all(|c| strictly_decreasing(&self.e_distance_series(c)))
    }

    /// `μ_n` decreasing in `n` for every run.
    pub fn mu_consistent(&self) -> bool {
        std::iter::once(&self.reference)
            .chain(&self.rows)
            .all(|r| r.mu.windows(2).all(|w| w[1] <= w[0]))
    }

    /// Sweeps with `α ≤ 3/2` are exploratory and carry no verdict.
    pub fn exploratory(&self) -> bool {
        self.alpha <= 1.5
    }

    /// Stability verdict: every tracked cluster gap sequence decreases and
    /// the last relative gap is below the tolerance; `None` for exploratory
    /// sweeps.
    pub fn pass(&self) -> Option<bool> {
        (!self.exploratory()).then(|| self.cluster_gaps_decreasing() && self.final_gap_ok())
    }

    /// Relative spread `(max - min) / min` of the Gaffney probes over ε.
    pub fn gaffney_spread(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.gaffney).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(0.0, f64::max);
        (hi - lo) / lo
    }
}

/// Box geometry of a single axis-aligned boundary chart: `(W, z_lo)`.
fn box_geometry(dom: &AtlasDomain) -> Result<(Rect2, f64), HarnessError> {
    let atlas = dom.atlas();
    if atlas.s() != 1 || atlas.s_prime() != 1 {
        return Err(HarnessError::InvalidInput(
            "meshing needs a domain described by a single boundary chart".into(),
        ));
    }
    let chart = atlas.chart(0);
    if (chart.rotation() - nalgebra::Matrix3::identity()).amax() > 1e-14 {
        return Err(HarnessError::InvalidInput("meshing needs an axis-aligned chart".into()));
    }
    Ok((chart.base_rect(), chart.bounds()[2].0))
}

/// Meshes a single-chart domain `{(x, y, z): (x, y) ∈ W, z_lo < z < g(x, y)}`
/// by shearing an `n[0] × n[1] × n[2]` box grid onto the profile.
pub fn mesh_domain(dom: &AtlasDomain, n: [usize; 3]) -> Result<TetMesh, HarnessError> {
    let (w, z_lo) = box_geometry(dom)?;
    let g = dom.profile(0);
    let z_ref = g.value([0.5 * (w.x.0 + w.x.1), 0.5 * (w.y.0 + w.y.1)]);
    Ok(fit_mesh(w, z_lo, z_ref, g, n)?)
}

/// Solves the penalized problem on a meshed single-chart domain and
/// classifies the pairs by clusters of relative width `cluster_tol`.
pub fn solve_domain(
    dom: &AtlasDomain,
    n: [usize; 3],
    order: usize,
    tau: f64,
    eig: &EigenConfig,
    cluster_tol: f64,
) -> Result<(FemSpace, Spectrum), HarnessError> {
    if !(tau > 0.0) {
        return Err(HarnessError::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let mesh = mesh_domain(dom, n)?;
    let space = build_space(&mesh, order)?;
    let a = assemble_stiffness(&space, tau)?;
    let m = assemble_mass(&space)?;
    let cfg = EigenConfig {
        count: eig.count.min(space.num_dofs()),
        ..eig.clone()
    };
    let mut spectrum = solve_gevp(&a, &m, &cfg)?;
    let groups = cluster_values(&spectrum.eigenvalues, cluster_tol);
    classify_grouped(&mut spectrum, &assemble_divdiv(&space)?, &m, tau, DEFAULT_THRESHOLD, &groups);
    Ok((space, spectrum))
}

/// Shift used by every run of a sweep, so that identical domains give
/// identical spectra.
const SWEEP_SHIFT: f64 = -1.0;

struct Case {
    space: FemSpace,
    spectrum: Spectrum,
    mesh_counts: [usize; 3],
    volume: f64,
    gaffney: f64,
    refined: bool,
}

fn fit_mesh(w: Rect2, z_lo: f64, z_ref: f64, g: &ProfileFunction, n: [usize; 3]) -> Result<TetMesh, MeshError> {
    shear_fit(&mesh_box(w, z_lo, z_ref, n)?, g, z_lo, z_ref)
}

fn solve_case(
    g: &ProfileFunction,
    w: Rect2,
    z_lo: f64,
    z_ref: f64,
    cfg: &SweepConfig,
    count: usize,
    shift: f64,
) -> Result<Case, HarnessError> {
    let mut n = [cfg.n_horizontal, cfg.n_horizontal, cfg.n_vertical];
    let mut refined = false;
    let mesh = match fit_mesh(w, z_lo, z_ref, g, n) {
        Ok(m) => m,
        Err(MeshError::InvertedElement { .. }) => {
            n = [2 * n[0], 2 * n[1], n[2]];
            refined = true;
            fit_mesh(w, z_lo, z_ref, g, n)?
        }
        Err(e) => return Err(e.into()),
    };
    let space = build_space(&mesh, cfg.order)?;
    let a = assemble_stiffness(&space, cfg.tau)?;
    let m = assemble_mass(&space)?;
    let eig = EigenConfig {
        count: count.min(space.num_dofs()),
        shift,
        tol: cfg.solver_tol,
        ..Default::default()
    };
    let mut spectrum = solve_gevp(&a, &m, &eig)?;
    let groups = cluster_values(&spectrum.eigenvalues, cfg.cluster_tol);
    classify_grouped(&mut spectrum, &assemble_divdiv(&space)?, &m, cfg.tau, DEFAULT_THRESHOLD, &groups);
    let h1 = assemble_h1(&space)?;
    let gaffney = discrete_gaffney_constant(&space, &spectrum, &h1)?;
    Ok(Case {
        volume: mesh.volume(),
        space,
        spectrum,
        mesh_counts: n,
        gaffney,
        refined,
    })
}

/// Runs the family at every ε of `cfg.eps_list` and at the base domain.
///
/// All domains are meshed from one box grid sheared to their profile, so the
/// reference and the perturbed runs share the discretization. The first
/// `cfg.modes` eigenvalues are paired in ascending order; E-distances are
/// computed for the first `cfg.e_clusters` clusters of the reference
/// spectrum, using the same index ranges at every ε.
pub fn sweep_epsilon(fam: &PerturbationFamily, alpha: f64, cfg: &SweepConfig) -> Result<ConvergenceReport, HarnessError> {
    if cfg.eps_list.is_empty() || cfg.eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(HarnessError::InvalidInput("eps_list must hold positive values".into()));
    }
    if cfg.modes == 0 || !(cfg.tau > 0.0) {
        return Err(HarnessError::InvalidInput("modes must be positive and tau > 0".into()));
    }
    let (w, z_lo) = box_geometry(fam.base())?;
    let g0 = fam.base().profile(0).clone();
    let centre = [0.5 * (w.x.0 + w.x.1), 0.5 * (w.y.0 + w.y.1)];
    let z_ref = g0.value(centre);
    let count = cfg.modes + 4;
    info!("sweep: reference domain");
    let reference = solve_case(&g0, w, z_lo, z_ref, cfg, count, SWEEP_SHIFT)?;
    let ref_clusters = cluster_values(&reference.spectrum.eigenvalues, cfg.cluster_tol);
    // Track only clusters that end before the last computed pair.
    let tracked: Vec<Cluster> = ref_clusters
        .iter()
        .filter(|c| c.start + c.len < reference.spectrum.len())
        .take(cfg.e_clusters)
        .cloned()
        .collect();
    if tracked.len() < cfg.e_clusters {
        return Err(HarnessError::InvalidInput(format!(
            "only {} complete clusters among {} computed pairs",
            tracked.len(),
            reference.spectrum.len()
        )));
    }
    let inside_0 = move |p: [f64; 3]| w.contains([p[0], p[1]]) && p[2] > z_lo && p[2] <= g0.value([p[0], p[1]]);
    let summarize = |eps: f64, case: &Case, e: Vec<f64>, fails: usize| -> EpsResult {
        let s = &case.spectrum;
        let k = cfg.modes.min(s.len());
        let eig = s.eigenvalues[..k].to_vec();
        EpsResult {
            eps,
            mesh_counts: case.mesh_counts,
            dofs: case.space.num_dofs(),
            multiplicities: cluster_values(&eig, cfg.cluster_tol).iter().map(|c| c.len).collect(),
            mu: eig.iter().map(|l| 1.0 / (l + 1.0)).collect(),
            gaps: eig
                .iter()
                .zip(&reference.spectrum.eigenvalues)
                .map(|(a, b)| (a - b).abs())
                .collect(),
            tags: s.tags[..k].to_vec(),
            eigenvalues: eig,
            e_distances: e,
            location_failures: fails,
            gaffney: case.gaffney,
            volume_delta: case.volume - reference.volume,
            refined: case.refined,
        }
    };
    let mut rows = Vec::with_capacity(cfg.eps_list.len());
    for &eps in &cfg.eps_list {
        info!("sweep: eps = {eps}");
        let dom = fam.perturbed(eps)?;
        let case = solve_case(dom.profile(0), w, z_lo, z_ref, cfg, count, SWEEP_SHIFT)?;
        let mut dists = Vec::with_capacity(tracked.len());
        let mut fails = 0;
        for c in &tracked {
            let cols: Vec<usize> = c.range().collect();
            if c.start + c.len > case.spectrum.len() {
                return Err(HarnessError::InvalidInput(format!("eps = {eps}: too few pairs for cluster tracking")));
            }
            let d = e_distance(
                &case.space,
                &case.spectrum.eigenvectors,
                &cols,
                &reference.space,
                &reference.spectrum.eigenvectors,
                &cols,
                &inside_0,
                cfg.quad_n,
            )?;
            fails += d.location_failures;
            dists.push(d.distance);
        }
        rows.push(summarize(eps, &case, dists, fails));
    }
    let reference_row = summarize(0.0, &reference, vec![0.0; tracked.len()], 0);
    Ok(ConvergenceReport {
        alpha,
        eps_list: cfg.eps_list.clone(),
        reference: reference_row,
        rows,
        tracked_clusters: tracked,
        gap_tol: cfg.gap_tol,
        cluster_tol: cfg.cluster_tol,
    })
}

/// Version line of the spectrum CSV.
pub const SPECTRUM_CSV_VERSION: &str = "# curlcurl-spectrum v1";
/// Version line of the sweep report CSV.
pub const REPORT_CSV_VERSION: &str = "# curlcurl-report v1";
/// Version line of the cube comparison CSV.
pub const CUBE_CSV_VERSION: &str = "# curlcurl-cube v1";

/// Writes `index,lambda,residual,div_energy_ratio,tag`, one row per pair.
pub fn write_spectrum_csv<W: Write>(mut w: W, s: &Spectrum) -> std::io::Result<()> {
    writeln!(w, "{SPECTRUM_CSV_VERSION}")?;
    writeln!(w, "index,lambda,residual,div_energy_ratio,tag")?;
    for i in 0..s.len() {
        writeln!(
            w,
            "{i},{:.12e},{:.3e},{:.6e},{}",
            s.eigenvalues[i],
            s.residuals[i],
            s.div_ratios[i],
            s.tags[i].as_str()
        )?;
    }
    Ok(())
}

/// Writes one row per analytic cluster of a cube benchmark.
pub fn write_cube_csv<W: Write>(mut w: W, b: &CubeBenchmark) -> std::io::Result<()> {
    writeln!(w, "{CUBE_CSV_VERSION}")?;
    writeln!(
        w,
        "cluster,exact,multiplicity,computed_multiplicity,mean,max_rel_error,maxwell,gradient,unclassified,expected_tag"
    )?;
    for (i, r) in b.rows.iter().enumerate() {
        writeln!(
            w,
            "{i},{:.12e},{},{},{:.12e},{:.6e},{},{},{},{}",
            r.exact.lambda,
            r.exact.multiplicity(),
            r.computed_multiplicity,
            r.mean(),
            r.max_rel_error,
            r.maxwell,
            r.gradient,
            r.unclassified,
            r.exact.tag()
        )?;
    }
    Ok(())
}

/// Writes one row per `(eps, n)`, reference rows first with `eps = 0`.
pub fn write_report_csv<W: Write>(mut w: W, r: &ConvergenceReport) -> std::io::Result<()> {
    writeln!(w, "{REPORT_CSV_VERSION}")?;
    writeln!(
        w,
        "eps,n,lambda,lambda_ref,gap,rel_gap,tag,cluster,e_distance,gaffney,volume_delta"
    )?;
    let cluster_of = |n: usize| r.tracked_clusters.iter().position(|c| c.range().contains(&n));
    for row in std::iter::once(&r.reference).chain(&r.rows) {
        for n in 0..row.eigenvalues.len() {
            let lref = r.reference.eigenvalues[n];
            let (cl, ed) = match cluster_of(n) {
                Some(c) => (c.to_string(), format!("{:.6e}", row.e_distances[c])),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.6e},{:.6e},{},{cl},{ed},{:.6e},{:.6e}",
                row.eps,
                n + 1,
                row.eigenvalues[n],
                lref,
                row.gaps[n],
                row.gaps[n] / lref.abs(),
                row.tags[n].as_str(),
                row.gaffney,
                row.volume_delta
            )?;
        }
    }
    Ok(())
}

/// Plain-text summary of a sweep.
pub fn sweep_summary(r: &ConvergenceReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("alpha = {}\n", r.alpha));
    s.push_str(&format!("reference eigenvalues: {:?}\n", r.reference.eigenvalues));
    for row in &r.rows {
        s.push_str(&format!(
            "eps = {}: max gap {:.4e} (rel {:.4e}), E-distances {:?}, gaffney {:.4}, volume delta {:.3e}\n",
            row.eps,
            row.max_gap(),
            row.max_rel_gap(&r.reference),
            row.e_distances,
            row.gaffney,
            row.volume_delta
        ));
    }
    let verdict = match r.pass() {
        None => "exploratory (alpha <= 3/2, no verdict)".to_string(),
        Some(p) => (if p { "pass" } else { "fail" }).to_string(),
    };
    s.push_str(&format!(
        "max gap decreasing: {}, cluster gaps decreasing: {}, per-index gaps decreasing: {}, final gap below {}: {}, E-distances decreasing: {}\nverdict: {verdict}\n",
        r.max_gap_decreasing(),
        r.cluster_gaps_decreasing(),
        r.all_gaps_decreasing(),
        r.gap_tol,
        r.final_gap_ok(),
        r.e_distances_decreasing()
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{CosProduct, Cutoff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Brute-force count of analytic eigenvalues equal to `s` (in units of
    /// `(π/side)²`), split by branch.
    fn brute_count(s: usize, tau: usize) -> (usize, usize) {
        let mut maxwell = 0;
        let mut gradient = 0;
        for a in 0..=s {
            for b in 0..=s {
                for c in 0..=s {
                    let q = a * a + b * b + c * c;
                    let pos = (a > 0) as usize + (b > 0) as usize + (c > 0) as usize;
                    if q == s && pos >= 2 {
                        maxwell += pos - 1;
                    }
                    if tau * q == s && pos == 3 {
                        gradient += 1;
                    }
                }
            }
        }
        (maxwell, gradient)
    }

    #[test]
    fn cube_oracle_matches_enumeration() {
        let c = analytic_cube_spectrum(1.0, PI, 4).unwrap();
        let got: Vec<(f64, usize, usize)> = c.iter().map(|x| (x.lambda, x.maxwell, x.gradient)).collect();
        assert_eq!(got, vec![(2.0, 3, 0), (3.0, 2, 1), (5.0, 6, 0), (6.0, 6, 3)]);
        for tau in [1usize, 2, 4] {
            for cl in analytic_cube_spectrum(tau as f64, PI, 12).unwrap() {
                let s = cl.lambda.round() as usize;
                assert_eq!((cl.maxwell, cl.gradient), brute_count(s, tau), "tau {tau}, s {s}");
            }
        }
    }

    #[test]
    fn penalty_moves_only_the_gradient_branch() {
        let c = analytic_cube_spectrum(4.0, PI, 20).unwrap();
        assert_eq!(c[0].lambda, 2.0);
        let first_grad = c.iter().find(|x| x.gradient > 0).unwrap();
        assert_eq!(first_grad.lambda, 12.0);
    }

    #[test]
    fn doubling_the_side_quarters_the_values() {
        let a = analytic_cube_spectrum(1.0, PI, 8).unwrap();
        let b = analytic_cube_spectrum(1.0, 2.0 * PI, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.lambda - x.lambda / 4.0).abs() < 1e-12);
            assert_eq!(x.multiplicity(), y.multiplicity());
        }
    }

    #[test]
    fn invalid_cube_inputs_are_rejected() {
        assert!(analytic_cube_spectrum(1.0, 0.0, 3).is_err());
        assert!(analytic_cube_spectrum(-1.0, 1.0, 3).is_err());
    }

    fn small_cube_pairs() -> (FemSpace, Spectrum) {
        let mesh = mesh_box(Rect2::new((0.0, PI), (0.0, PI)), 0.0, PI, [3, 3, 3]).unwrap();
        let space = build_space(&mesh, 2).unwrap();
        let a = assemble_stiffness(&space, 1.0).unwrap();
        let m = assemble_mass(&space).unwrap();
        let s = solve_gevp(&a, &m, &EigenConfig { count: 6, shift: 1.5, ..Default::default() }).unwrap();
        (space, s)
    }

    fn whole_box(p: [f64; 3]) -> bool {
        p.iter().all(|&x| (0.0..=PI).contains(&x))
    }

    #[test]
    fn identical_fields_have_zero_distance() {
        let (space, s) = small_cube_pairs();
        let d = e_distance(&space, &s.eigenvectors, &[0], &space, &s.eigenvectors, &[0], &whole_box, 4).unwrap();
        assert!(d.distance < 1e-10, "{}", d.distance);
        assert_eq!(d.location_failures, 0);
        let neg = -s.eigenvectors.clone();
        let d = e_distance(&space, &neg, &[1], &space, &s.eigenvectors, &[1], &whole_box, 4).unwrap();
        assert!(d.distance < 1e-10, "{}", d.distance);
    }

    #[test]
    fn rotated_cluster_basis_has_zero_subspace_distance() {
        let (space, s) = small_cube_pairs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = r.qr().q();
        let mut rotated = s.eigenvectors.clone();
        let block = s.eigenvectors.columns(0, 3) * &q;
        rotated.columns_mut(0, 3).copy_from(&block);
        let d = e_distance(&space, &rotated, &[0, 1, 2], &space, &s.eigenvectors, &[0, 1, 2], &whole_box, 4).unwrap();
        assert!(d.distance < 1e-9, "{}", d.distance);
        assert!(d.cosines.iter().all(|c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn procrustes_distance_beats_random_rotations() {
        // Distance between the span of pairs 0..3 and the span of pairs 1..4:
        // the optimal alignment must not be improved by any sampled rotation,
        // and the distance must follow from the principal cosines.
        let (space, s) = small_cube_pairs();
        let (ce, c0) = ([0usize, 1, 2], [1usize, 2, 3]);
        let d = e_distance(&space, &s.eigenvectors, &ce, &space, &s.eigenvectors, &c0, &whole_box, 4).unwrap();
        let from_cosines = ((6.0 - 2.0 * d.cosines.iter().sum::<f64>()) / 3.0).sqrt();
        assert!((d.distance - from_cosines).abs() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = s.eigenvectors.columns(1, 3).into_owned();
        let xe = s.eigenvectors.columns(0, 3).into_owned();
        let m = assemble_mass(&space).unwrap();
        for _ in 0..200 {
            let q = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let diff = &xe - &x0 * q;
            let sq: f64 = (0..3).map(|i| m.quad_form(diff.column(i).as_slice())).sum();
            assert!((sq / 3.0).sqrt() >= d.distance - 1e-9);
        }
    }

    fn unit_box_family(identical: bool) -> PerturbationFamily {
        let base = AtlasDomain::single_chart(
            Rect2::new((0.0, 1.0), (0.0, 1.0)),
            -1.0,
            0.5,
            0.02,
            ProfileFunction::Constant { c: 0.0 },
        )
        .unwrap();
        if identical {
            PerturbationFamily::identical(base, Arc::new(|e: f64| e))
        } else {
            PerturbationFamily::oscillatory(
                base,
                0,
                2.0,
                CosProduct::new([1.0, 1.0]),
                Cutoff::Bump {
                    center: [0.5, 0.5],
                    half_width: [0.35, 0.35],
                },
                7.0 / 6.0,
            )
        }
    }

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            eps_list: vec![0.2, 0.1],
            n_horizontal: 4,
            n_vertical: 3,
            ..Default::default()
        }
    }

    #[test]
    fn trivial_family_has_zero_gaps_and_distances() {
        let r = sweep_epsilon(&unit_box_family(true), 2.0, &tiny_sweep()).unwrap();
        for row in &r.rows {
            assert!(row.gaps.iter().all(|g| *g == 0.0), "{:?}", row.gaps);
            assert!(row.e_distances.iter().all(|d| *d < 1e-10), "{:?}", row.e_distances);
            assert_eq!(row.volume_delta, 0.0);
        }
        assert!(r.mu_consistent());
        assert_eq!(r.tracked_clusters.len(), 2);
        let mut out = Vec::new();
        write_report_csv(&mut out, &r).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2 + 3 * 6);
    }

    #[test]
    fn oscillatory_volume_change_is_small() {
        let r = sweep_epsilon(&unit_box_family(false), 2.0, &tiny_sweep()).unwrap();
        for row in &r.rows {
            // |Ω_ε| - |Ω| = ε^α ∫ b(x̄/ε) ψ, bounded by ε^α |W|.
            assert!(row.volume_delta.abs() <= row.eps.powi(2));
            assert!(row.gaffney > 0.0);
        }
        assert!(!r.exploratory());
    }

    #[test]
    fn small_alpha_sweeps_are_exploratory() {
        let mut r = sweep_epsilon(&unit_box_family(true), 2.0, &tiny_sweep()).unwrap();
        r.alpha = 1.2;
        assert_eq!(r.pass(), None);
    }

    #[test]
    fn coarse_cube_benchmark_keeps_the_cluster_structure() {
        let b = cube_benchmark(1.0, 4, 2, 2).unwrap();
        assert_eq!(b.rows.len(), 2);
        assert!(b.rows.iter().all(|r| r.multiplicity_ok() && r.tags_ok()), "{:?}", b.rows);
        assert!(b.max_rel_error() < 0.05);
        let mut out = Vec::new();
        write_spectrum_csv(&mut out, &b.spectrum).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some(SPECTRUM_CSV_VERSION));
        assert_eq!(text.lines().count(), 2 + 6);
    }
}
