//! Atlas Piola transform between the `X_N` spaces of two domains sharing an
//! atlas, its chart maps, and quadrature-based verification of its
//! convergence properties for perturbation families.
//!
//! For a boundary chart `j` with base profile `g` and perturbed profile `g̃`,
//! `ĝ = g̃ - k` and in local coordinates
//!
//! ```text
//! h(x̄, x₃) = 0                                  for x₃ ≤ ĝ(x̄)
//! h(x̄, x₃) = (g̃ - g)(x̄) ((x₃ - ĝ(x̄)) / k)³      for ĝ(x̄) < x₃ ≤ g̃(x̄)
//! Φ(x̄, x₃) = (x̄, x₃ - h(x̄, x₃)),   Ψ = r⁻¹ ∘ Φ ∘ r.
//! ```
//!
//! A field `φ` on `Ω` is pulled back chart by chart with the covariant rule
//! `(ψ_j φ)(Ψ_j(x)) DΨ_j(x)` and the pieces are summed.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::atlas::{AtlasChart, AtlasDomain, PerturbationFamily};
use crate::error::PiolaError;
use crate::parallel::par_map;
use crate::quadrature::{KahanSum, gauss_legendre_interval};

/// Value map of a vector field.
pub type FieldFn = Arc<dyn Fn([f64; 3]) -> Vector3<f64> + Send + Sync>;
/// Jacobian map of a vector field, `J[(k, l)] = ∂_l u_k`.
pub type JacobianFn = Arc<dyn Fn([f64; 3]) -> Matrix3<f64> + Send + Sync>;

/// Step of the central differences used when no Jacobian is supplied.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Vector field given in closed form, with an analytic or finite-difference
/// Jacobian and a flag stating that its tangential trace vanishes.
#[derive(Clone)]
pub struct AnalyticVectorField {
    name: String,
    value: FieldFn,
    jacobian: Option<JacobianFn>,
    tangential_trace_zero: bool,
    fd_step: f64,
}

impl std::fmt::Debug for AnalyticVectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticVectorField")
            .field("name", &self.name)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("tangential_trace_zero", &self.tangential_trace_zero)
            .finish()
    }
}

impl AnalyticVectorField {
    pub fn new(
        name: impl Into<String>,
        value: FieldFn,
        jacobian: Option<JacobianFn>,
        tangential_trace_zero: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            jacobian,
            tangential_trace_zero,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// Mode of the box `lo < x < hi` with components
    /// `u_k = a_k cos(κ_k (x_k - lo_k)) Π_{i≠k} sin(κ_i (x_i - lo_i))`,
    /// `κ_i = m_i π / (hi_i - lo_i)`. Its tangential trace vanishes on the box faces.
    pub fn box_mode(name: impl Into<String>, lo: [f64; 3], hi: [f64; 3], m: [f64; 3], a: [f64; 3]) -> Self {
        let kappa: [f64; 3] = std::array::from_fn(|i| m[i] * std::f64::consts::PI / (hi[i] - lo[i]));
        let trig = move |p: [f64; 3]| -> ([f64; 3], [f64; 3]) {
            let mut s = [0.0; 3];
            let mut c = [0.0; 3];
            for i in 0..3 {
                let (si, ci) = (kappa[i] * (p[i] - lo[i])).sin_cos();
                s[i] = si;
                c[i] = ci;
            }
            (s, c)
        };
        let value: FieldFn = Arc::new(move |p| {
            let (s, c) = trig(p);
            Vector3::new(a[0] * c[0] * s[1] * s[2], a[1] * s[0] * c[1] * s[2], a[2] * s[0] * s[1] * c[2])
        });
        let jacobian: JacobianFn = Arc::new(move |p| {
            let (s, c) = trig(p);
            Matrix3::from_fn(|k, l| {
                if k == l {
                    let others: f64 = (0..3).filter(|&i| i != k).map(|i| s[i]).product();
                    -a[k] * kappa[k] * s[k] * others
                } else {
                    let rest: f64 = (0..3).filter(|&i| i != k && i != l).map(|i| s[i]).product();
                    a[k] * c[k] * kappa[l] * c[l] * rest
                }
            })
        });
        Self::new(name, value, Some(jacobian), true)
    }

    /// Gradient of `Π sin(κ_i (x_i - lo_i))`, which vanishes on the box faces.
    pub fn box_gradient(name: impl Into<String>, lo: [f64; 3], hi: [f64; 3], m: [f64; 3]) -> Self {
        let a: [f64; 3] = std::array::from_fn(|i| m[i] * std::f64::consts::PI / (hi[i] - lo[i]));
        Self::box_mode(name, lo, hi, m, a)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tangential_trace_zero(&self) -> bool {
        self.tangential_trace_zero
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn value(&self, p: [f64; 3]) -> Vector3<f64> {
        (self.value)(p)
    }

    /// Analytic Jacobian when supplied, central differences otherwise.
    pub fn jacobian(&self, p: [f64; 3]) -> Matrix3<f64> {
        match &self.jacobian {
            Some(j) => j(p),
            None => self.fd_jacobian(p, self.fd_step),
        }
    }

    /// Central-difference Jacobian with step `step`.
    pub fn fd_jacobian(&self, p: [f64; 3], step: f64) -> Matrix3<f64> {
        let mut j = Matrix3::zeros();
        for l in 0..3 {
            let mut a = p;
            let mut b = p;
            a[l] += step;
            b[l] -= step;
            let d = ((self.value)(a) - (self.value)(b)) / (2.0 * step);
            j.set_column(l, &d);
        }
        j
    }

    pub fn curl(&self, p: [f64; 3]) -> Vector3<f64> {
        curl_of(&self.jacobian(p))
    }

    pub fn div(&self, p: [f64; 3]) -> f64 {
        self.jacobian(p).trace()
    }

    /// Largest entry of the difference between the analytic Jacobian and a
    /// central-difference Jacobian over `points`; zero without an analytic Jacobian.
    pub fn check_jacobian(&self, points: &[[f64; 3]], step: f64) -> f64 {
        match &self.jacobian {
            None => 0.0,
            Some(j) => points
                .iter()
                .map(|&p| (j(p) - self.fd_jacobian(p, step)).amax())
                .fold(0.0, f64::max),
        }
    }
}

fn curl_of(j: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(j[(2, 1)] - j[(1, 2)], j[(0, 2)] - j[(2, 0)], j[(1, 0)] - j[(0, 1)])
}

/// Smooth partition of unity subordinate to the atlas charts: each chart
/// carries a tensor product of the bump `exp(1 - 1/(1 - t²))` over its cuboid, and the bumps are
/// normalized by their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOfUnity {
    charts: Vec<AtlasChart>,
}

impl PartitionOfUnity {
    pub fn new(charts: &[AtlasChart]) -> Self {
        Self {
            charts: charts.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    /// Logarithm of the chart bump and its gradient, `None` outside the open cuboid.
    fn log_raw(&self, j: usize, p: [f64; 3]) -> Option<(f64, Vector3<f64>)> {
        let chart = &self.charts[j];
        let q = chart.to_local(p);
        let mut l = 0.0;
        let mut d = Vector3::zeros();
        for (i, &(a, b)) in chart.bounds().iter().enumerate() {
            let half = 0.5 * (b - a);
            let t = (q[i] - 0.5 * (a + b)) / half;
            if t.abs() >= 1.0 {
                return None;
            }
            let s = 1.0 - t * t;
            l += 1.0 - 1.0 / s;
            d[i] = -2.0 * t / (s * s) / half;
        }
        Some((l, chart.rotation().transpose() * d))
    }

    /// Value and gradient of `ψ_j` at `p`.
    ///
    /// The normalization is carried out on the logarithms of the bumps, so
    /// the values stay accurate where every bump underflows.
    pub fn eval(&self, j: usize, p: [f64; 3]) -> (f64, Vector3<f64>) {
        let Some((lj, gj)) = self.log_raw(j, p) else {
            return (0.0, Vector3::zeros());
        };
        let others: Vec<(f64, Vector3<f64>)> = (0..self.charts.len())
            .filter(|&k| k != j)
            .filter_map(|k| self.log_raw(k, p))
            .collect();
        if others.is_empty() {
            return (1.0, Vector3::zeros());
        }
        let lmax = others.iter().map(|o| o.0).fold(lj, f64::max);
        let wj = (lj - lmax).exp();
        let mut sum = wj;
        let mut mean_grad = gj * wj;
        for (l, g) in &others {
            let w = (l - lmax).exp();
            sum += w;
            mean_grad += g * w;
        }
        let psi = wj / sum;
        (psi, (gj - mean_grad / sum) * psi)
    }

    /// `Σ_j ψ_j(p)`.
    pub fn sum(&self, p: [f64; 3]) -> f64 {
        (0..self.charts.len()).map(|j| self.eval(j, p).0).sum()
    }
}

/// Value, gradient and Hessian of `h_j` in local coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HJet {
    pub value: f64,
    pub gradient: Vector3<f64>,
    /// `None` where a profile Hessian is undefined.
    pub hessian: Option<Matrix3<f64>>,
}

impl HJet {
    fn zero() -> Self {
        Self {
            value: 0.0,
            gradient: Vector3::zeros(),
            hessian: Some(Matrix3::zeros()),
        }
    }
}

/// Image, Jacobian and determinant of `Ψ_j` at a physical point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartMap {
    pub image: [f64; 3],
    pub jacobian: Matrix3<f64>,
    pub det: f64,
    /// `ΔΨ_j` componentwise, `None` where `h_j` has no Hessian.
    pub laplacian: Option<Vector3<f64>>,
    /// True where the point lies in the identity region `x₃ ≤ ĝ_j`.
    pub identity: bool,
}

/// Value, curl and divergence of the pulled-back field at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PullbackJet {
    pub value: Vector3<f64>,
    pub curl: Vector3<f64>,
    pub div: f64,
}

/// Grid resolution used to sample the parameter conditions.
const CONDITION_GRID: usize = 257;
/// Relative slack for points on the perturbed boundary.
const SUBGRAPH_SLACK: f64 = 1e-12;

/// Atlas Piola transform from `source` (Ω) to `target` (Ω̃) with offset `k`.
#[derive(Clone, Debug)]
pub struct PiolaMap {
    source: AtlasDomain,
    target: AtlasDomain,
    k: f64,
    partition: PartitionOfUnity,
    max_profile_gap: f64,
}

impl PiolaMap {
    /// Builds the map and checks on a sample grid that
    /// `k > max_j ‖g̃_j - g_j‖_∞` and `g̃_j - k > a₃ⱼ + ρ`.
    pub fn new(source: AtlasDomain, target: AtlasDomain, k: f64) -> Result<Self, PiolaError> {
        if source.atlas() != target.atlas() {
            return Err(PiolaError::InvalidParameters("source and target must share one atlas".into()));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(PiolaError::InvalidParameters(format!("k must be positive, got {k}")));
        }
        let atlas = source.atlas();
        let rho = atlas.rho();
        let mut gap: f64 = 0.0;
        for j in 0..atlas.s_prime() {
            let chart = atlas.chart(j);
            let a3 = chart.bounds()[2].0;
            let w = chart.base_rect();
            for iy in 0..CONDITION_GRID {
                for ix in 0..CONDITION_GRID {
                    let x = w.grid_point(CONDITION_GRID, ix, iy);
                    let gt = target.profile(j).value(x);
                    gap = gap.max((gt - source.profile(j).value(x)).abs());
                    if gt - k <= a3 + rho {
                        return Err(PiolaError::InvalidParameters(format!(
                            "g̃ - k = {} falls below a3 + rho = {} in chart {j} at {x:?}",
                            gt - k,
                            a3 + rho
                        )));
                    }
                }
            }
        }
        if !(k > gap) {
            return Err(PiolaError::InvalidParameters(format!(
                "k = {k} must exceed the sampled profile gap {gap}"
            )));
        }
        let partition = PartitionOfUnity::new(atlas.charts());
        Ok(Self {
            source,
            target,
            k,
            partition,
            max_profile_gap: gap,
        })
    }

    /// Transform from the base domain of `family` to `Ω_ε` with `k = 6κ_ε`.
    pub fn from_family(family: &PerturbationFamily, eps: f64) -> Result<Self, PiolaError> {
        let target = family.perturbed(eps)?;
        Self::new(family.base().clone(), target, 6.0 * family.kappa(eps))
    }

    pub fn source(&self) -> &AtlasDomain {
        &self.source
    }

    pub fn target(&self) -> &AtlasDomain {
        &self.target
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn partition(&self) -> &PartitionOfUnity {
        &self.partition
    }

    /// Sampled `max_j ‖g̃_j - g_j‖_∞`.
    pub fn max_profile_gap(&self) -> f64 {
        self.max_profile_gap
    }

    /// The constant `ᾱ = 3 max‖g̃ - g‖ / k`; `det DΨ_j ∈ [1 - ᾱ, 1 + ᾱ]`.
    pub fn det_bound(&self) -> f64 {
        3.0 * self.max_profile_gap / self.k
    }

    /// `ĝ_j(x̄) = g̃_j(x̄) - k`.
    pub fn g_hat(&self, j: usize, xbar: [f64; 2]) -> f64 {
        self.target.profile(j).value(xbar) - self.k
    }

    fn boundary_chart(&self, j: usize) -> Result<&AtlasChart, PiolaError> {
        if j >= self.source.atlas().s_prime() {
            return Err(PiolaError::InvalidParameters(format!("chart {j} is not a boundary chart")));
        }
        Ok(self.source.atlas().chart(j))
    }

    /// Jet of `h_j` at local coordinates `q`.
    pub fn h_jet(&self, j: usize, q: [f64; 3]) -> Result<HJet, PiolaError> {
        Ok(self.h_jet_flagged(j, q)?.0)
    }

    /// Jet of `h_j` and whether `q` lies in the identity region `x₃ ≤ ĝ_j`.
    fn h_jet_flagged(&self, j: usize, q: [f64; 3]) -> Result<(HJet, bool), PiolaError> {
        let chart = self.boundary_chart(j)?;
        let xbar = [q[0], q[1]];
        let et = self.target.profile(j).eval(xbar);
        let (a3, _) = chart.bounds()[2];
        let slack = SUBGRAPH_SLACK * (1.0 + et.value.abs());
        if !chart.base_rect().contains(xbar) || q[2] < a3 - slack || q[2] > et.value + slack {
            return Err(PiolaError::OutOfSubgraph { chart: j });
        }
        let k = self.k;
        let ghat = et.value - k;
        if q[2] <= ghat {
            return Ok((HJet::zero(), true));
        }
        let es = self.source.profile(j).eval(xbar);
        let t = (q[2] - ghat) / k;
        let d = et.value - es.value;
        let dd = Vector3::new(et.gradient[0] - es.gradient[0], et.gradient[1] - es.gradient[1], 0.0);
        let dt = Vector3::new(-et.gradient[0] / k, -et.gradient[1] / k, 1.0 / k);
        let (t2, t3) = (t * t, t * t * t);
        let gradient = dd * t3 + dt * (3.0 * d * t2);
        let hessian = match (et.hessian, es.hessian) {
            (Some(ht), Some(hs)) => {
                let mut hd = Matrix3::zeros();
                let mut htt = Matrix3::zeros();
                for a in 0..2 {
                    for b in 0..2 {
                        hd[(a, b)] = ht[(a, b)] - hs[(a, b)];
                        htt[(a, b)] = -ht[(a, b)] / k;
                    }
                }
                let cross = dd * dt.transpose();
                Some(
                    hd * t3
                        + (cross + cross.transpose()) * (3.0 * t2)
                        + dt * dt.transpose() * (6.0 * d * t)
                        + htt * (3.0 * d * t2),
                )
            }
            _ => None,
        };
        Ok((
            HJet {
                value: d * t3,
                gradient,
                hessian,
            },
            false,
        ))
    }

    /// `h_j(x̄, x₃)` in local coordinates.
    pub fn h_map(&self, j: usize, xbar: [f64; 2], x3: f64) -> Result<f64, PiolaError> {
        Ok(self.h_jet(j, [xbar[0], xbar[1], x3])?.value)
    }

    /// `Ψ_j(p)` with its Jacobian, determinant and Laplacian.
    pub fn phi_psi_map(&self, j: usize, p: [f64; 3]) -> Result<ChartMap, PiolaError> {
        let chart = self.boundary_chart(j)?;
        let q = chart.to_local(p);
        let (jet, below) = self.h_jet_flagged(j, q)?;
        if below {
            return Ok(ChartMap {
                image: p,
                jacobian: Matrix3::identity(),
                det: 1.0,
                laplacian: Some(Vector3::zeros()),
                identity: true,
            });
        }
        let r = chart.rotation();
        let mut dphi = Matrix3::identity();
        for c in 0..3 {
            dphi[(2, c)] -= jet.gradient[c];
        }
        let image = chart.from_local([q[0], q[1], q[2] - jet.value]);
        let laplacian = jet.hessian.map(|h| {
            let lap = -h.trace();
            Vector3::new(r[(2, 0)] * lap, r[(2, 1)] * lap, r[(2, 2)] * lap)
        });
        Ok(ChartMap {
            image,
            jacobian: r.transpose() * dphi * r,
            det: 1.0 - jet.gradient[2],
            laplacian,
            identity: false,
        })
    }

    fn check_field(phi: &AnalyticVectorField) -> Result<(), PiolaError> {
        if phi.tangential_trace_zero() {
            Ok(())
        } else {
            Err(PiolaError::TangentialTraceMissing(phi.name().to_string()))
        }
    }

    /// `(𝒫φ)(p)` for `p` in the target domain.
    pub fn pullback(&self, phi: &AnalyticVectorField, p: [f64; 3]) -> Result<Vector3<f64>, PiolaError> {
        Self::check_field(phi)?;
        let mut out = Vector3::zeros();
        let atlas = self.source.atlas();
        for (j, chart) in atlas.charts().iter().enumerate() {
            let q = chart.to_local(p);
            if !chart.contains_local_open(q) {
                continue;
            }
            if j < atlas.s_prime() {
                let m = self.phi_psi_map(j, p)?;
                let (psi, _) = self.partition.eval(j, m.image);
                if psi == 0.0 {
                    continue;
                }
                let v = phi.value(m.image) * psi;
                out += if m.identity { v } else { m.jacobian.transpose() * v };
            } else {
                let (psi, _) = self.partition.eval(j, p);
                if psi > 0.0 {
                    out += phi.value(p) * psi;
                }
            }
        }
        Ok(out)
    }

    /// Value, curl and divergence of `𝒫φ` at `p`.
    ///
    /// The curl uses `curl u = det(DΨ) DΨ⁻¹ (curl v)∘Ψ` and the divergence
    /// `div u = ΔΨ · v∘Ψ + tr(DΨᵀ (Dv∘Ψ) DΨ)` for `u = DΨᵀ v∘Ψ`.
    pub fn pullback_jet(&self, phi: &AnalyticVectorField, p: [f64; 3]) -> Result<PullbackJet, PiolaError> {
        Self::check_field(phi)?;
        Ok(self.jet_detail(phi, p)?.jet)
    }

    fn jet_detail(&self, phi: &AnalyticVectorField, p: [f64; 3]) -> Result<JetDetail, PiolaError> {
        let mut min_det = f64::INFINITY;
        let mut max_det = f64::NEG_INFINITY;
        let mut identity = true;
        let mut out = PullbackJet {
            value: Vector3::zeros(),
            curl: Vector3::zeros(),
            div: 0.0,
        };
        let atlas = self.source.atlas();
        for (j, chart) in atlas.charts().iter().enumerate() {
            let q = chart.to_local(p);
            if !chart.contains_local_open(q) {
                continue;
            }
            let m = if j < atlas.s_prime() {
                let m = self.phi_psi_map(j, p)?;
                min_det = min_det.min(m.det);
                max_det = max_det.max(m.det);
                identity &= m.identity;
                m
            } else {
                ChartMap {
                    image: p,
                    jacobian: Matrix3::identity(),
                    det: 1.0,
                    laplacian: Some(Vector3::zeros()),
                    identity: true,
                }
            };
            let (psi, dpsi) = self.partition.eval(j, m.image);
            if psi == 0.0 && dpsi == Vector3::zeros() {
                continue;
            }
            let f = phi.value(m.image);
            let jf = phi.jacobian(m.image);
            let v = f * psi;
            let dv = f * dpsi.transpose() + jf * psi;
            let curl_v = curl_of(&jf) * psi + dpsi.cross(&f);
            if m.identity {
                out.value += v;
                out.curl += curl_v;
                out.div += dv.trace();
                continue;
            }
            if m.det.abs() < 1e-8 {
                return Err(PiolaError::DetNearZero { det: m.det });
            }
            let lap = m.laplacian.ok_or_else(|| PiolaError::InvalidParameters(format!(
                "profile Hessian undefined at {p:?}; the divergence of the pullback needs second derivatives"
            )))?;
            let jac = m.jacobian;
            let inv = jac
                .try_inverse()
                .ok_or(PiolaError::DetNearZero { det: m.det })?;
            out.value += jac.transpose() * v;
            out.curl += inv * curl_v * m.det;
            out.div += lap.dot(&v) + (jac.transpose() * dv * jac).trace();
        }
        Ok(JetDetail {
            jet: out,
            min_det,
            max_det,
            identity,
        })
    }

    /// `curl 𝒫φ` at `p`.
    pub fn pullback_curl(&self, phi: &AnalyticVectorField, p: [f64; 3]) -> Result<Vector3<f64>, PiolaError> {
        Ok(self.pullback_jet(phi, p)?.curl)
    }

    /// `div 𝒫φ` at `p`.
    pub fn pullback_div(&self, phi: &AnalyticVectorField, p: [f64; 3]) -> Result<f64, PiolaError> {
        Ok(self.pullback_jet(phi, p)?.div)
    }

    /// Whether `p` lies below `ĝ_j` in every boundary chart containing it.
    pub fn in_identity_region(&self, p: [f64; 3]) -> bool {
        let atlas = self.source.atlas();
        (0..atlas.s_prime()).all(|j| {
            let chart = atlas.chart(j);
            let q = chart.to_local(p);
            !chart.contains_local_open(q) || q[2] < self.g_hat(j, [q[0], q[1]])
        })
    }
}

struct JetDetail {
    jet: PullbackJet,
    min_det: f64,
    max_det: f64,
    /// True when every boundary chart containing the point maps it by the identity.
    identity: bool,
}

/// The pulled-back field `𝒫φ` as a lazily evaluated object.
#[derive(Clone, Debug)]
pub struct PulledBackField<'a> {
    map: &'a PiolaMap,
    phi: &'a AnalyticVectorField,
}

impl PulledBackField<'_> {
    pub fn value(&self, p: [f64; 3]) -> Result<Vector3<f64>, PiolaError> {
        self.map.pullback(self.phi, p)
    }

    pub fn jet(&self, p: [f64; 3]) -> Result<PullbackJet, PiolaError> {
        self.map.pullback_jet(self.phi, p)
    }
}

/// `h_j` of `map` at `(x̄, x₃)`.
pub fn h_map(chart_idx: usize, xbar: [f64; 2], x3: f64, map: &PiolaMap) -> Result<f64, PiolaError> {
    map.h_map(chart_idx, xbar, x3)
}

/// `Ψ_j(p)` of `map` with its Jacobian and determinant.
pub fn phi_psi_map(chart_idx: usize, p: [f64; 3], map: &PiolaMap) -> Result<ChartMap, PiolaError> {
    map.phi_psi_map(chart_idx, p)
}

/// `𝒫φ`; fails for fields without the zero tangential trace flag.
pub fn piola_pullback<'a>(
    phi: &'a AnalyticVectorField,
    map: &'a PiolaMap,
) -> Result<PulledBackField<'a>, PiolaError> {
    PiolaMap::check_field(phi)?;
    Ok(PulledBackField { map, phi })
}

/// Quadrature settings for [`verify_piolamain`]: tensor Gauss–Legendre with
/// `points` nodes per axis on square base cells of side at most `cell`, and
/// `points` nodes on each vertical segment between breakpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiolaQuadrature {
    pub points: usize,
    pub cell: f64,
}

impl Default for PiolaQuadrature {
    fn default() -> Self {
        Self { points: 8, cell: 0.05 }
    }
}

impl PiolaQuadrature {
    /// Cells of side `eps / 2`, two per oscillation period.
    pub fn for_eps(points: usize, eps: f64) -> Self {
        Self { points, cell: 0.5 * eps }
    }
}

/// Norms and checks produced by [`verify_piolamain`].
#[derive(Clone, Debug, PartialEq)]
pub struct PiolaReport {
    pub field: String,
    pub eps: Option<f64>,
    /// `‖φ‖_{X_N(Ω)}`.
    pub norm_source: f64,
    /// `‖𝒫φ‖_{X_N(Ω̃)}`.
    pub norm_target: f64,
    /// `‖𝒫φ - φ‖_{X(Ω̃ ∩ Ω)}`.
    pub overlap_distance: f64,
    /// Extreme sampled `det DΨ_j` over the quadrature nodes.
    pub min_det: f64,
    pub max_det: f64,
    /// Nodes of the target quadrature in the identity region.
    pub identity_nodes: usize,
    /// Largest `|𝒫φ(p) - φ(p)|` over those nodes.
    pub identity_max_deviation: f64,
    /// True when the deviation is at roundoff level.
    pub identity_on_compact: bool,
}

impl PiolaReport {
    /// `|‖𝒫φ‖ - ‖φ‖|`.
    pub fn norm_gap(&self) -> f64 {
        (self.norm_target - self.norm_source).abs()
    }
}

/// Roundoff threshold of the identity check relative to the field scale.
pub const IDENTITY_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Default)]
struct Partial {
    source: f64,
    target: f64,
    overlap: f64,
    min_det: f64,
    max_det: f64,
    identity_nodes: usize,
    identity_dev: f64,
    field_scale: f64,
}

/// Computes `‖φ‖_{X_N(Ω)}`, `‖𝒫φ‖_{X_N(Ω̃)}` and `‖𝒫φ - φ‖_{X(Ω̃ ∩ Ω)}` by
/// chart-wise tensor quadrature weighted with the partition of unity, and
/// checks `𝒫φ = φ` at every target node in the identity region.
///
/// Columns of each boundary chart are split at `ĝ_j` and at `min(g_j, g̃_j)`,
/// where the integrands lose smoothness.
pub fn verify_piolamain(
    phi: &AnalyticVectorField,
    map: &PiolaMap,
    quad: &PiolaQuadrature,
) -> Result<PiolaReport, PiolaError> {
    PiolaMap::check_field(phi)?;
    if quad.points == 0 || !(quad.cell > 0.0) {
        return Err(PiolaError::QuadratureDegenerate(format!(
            "need positive points and cell size, got {} and {}",
            quad.points, quad.cell
        )));
    }
    let atlas = map.source.atlas();
    let mut total = Partial {
        min_det: f64::INFINITY,
        max_det: f64::NEG_INFINITY,
        ..Default::default()
    };
    let (ref_x, ref_w): (Vec<f64>, Vec<f64>) = gauss_legendre_interval(0.0, 1.0, quad.points).into_iter().unzip();
    for (j, chart) in atlas.charts().iter().enumerate() {
        let boundary = j < atlas.s_prime();
        let w = chart.base_rect();
        let nx = ((w.x.1 - w.x.0) / quad.cell).ceil().max(1.0) as usize;
        let ny = ((w.y.1 - w.y.0) / quad.cell).ceil().max(1.0) as usize;
        let hx = (w.x.1 - w.x.0) / nx as f64;
        let hy = (w.y.1 - w.y.0) / ny as f64;
        let (a3, b3) = chart.bounds()[2];
        let rows: Vec<Result<Partial, PiolaError>> = par_map(ny * quad.points, |row| {
            let cy = row / quad.points;
            let iy = row % quad.points;
            let y = w.y.0 + hy * (cy as f64 + ref_x[iy]);
            let wy = hy * ref_w[iy];
            let mut acc = Accumulator::new();
            for cx in 0..nx {
                for (&rx, &rw) in ref_x.iter().zip(&ref_w) {
                    let x = w.x.0 + hx * (cx as f64 + rx);
                    let wxy = wy * hx * rw;
                    column(phi, map, j, chart, boundary, [x, y], wxy, (a3, b3), &ref_x, &ref_w, &mut acc)?;
                }
            }
            Ok(acc.finish())
        });
        for r in rows {
            let r = r?;
            total.source += r.source;
            total.target += r.target;
            total.overlap += r.overlap;
            total.min_det = total.min_det.min(r.min_det);
            total.max_det = total.max_det.max(r.max_det);
            total.identity_nodes += r.identity_nodes;
            total.identity_dev = total.identity_dev.max(r.identity_dev);
            total.field_scale = total.field_scale.max(r.field_scale);
        }
    }
    if !total.min_det.is_finite() {
        total.min_det = 1.0;
        total.max_det = 1.0;
    }
    let identity_ok = total.identity_dev <= IDENTITY_TOL * total.field_scale.max(1.0);
    Ok(PiolaReport {
        field: phi.name().to_string(),
        eps: None,
        norm_source: total.source.max(0.0).sqrt(),
        norm_target: total.target.max(0.0).sqrt(),
        overlap_distance: total.overlap.max(0.0).sqrt(),
        min_det: total.min_det,
        max_det: total.max_det,
        identity_nodes: total.identity_nodes,
        identity_max_deviation: total.identity_dev,
        identity_on_compact: identity_ok,
    })
}

struct Accumulator {
    source: KahanSum,
    target: KahanSum,
    overlap: KahanSum,
    part: Partial,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            source: KahanSum::default(),
            target: KahanSum::default(),
            overlap: KahanSum::default(),
            part: Partial {
                min_det: f64::INFINITY,
                max_det: f64::NEG_INFINITY,
                ..Default::default()
            },
        }
    }

    fn finish(self) -> Partial {
        Partial {
            source: self.source.value(),
            target: self.target.value(),
            overlap: self.overlap.value(),
            ..self.part
        }
    }
}

fn x_norm_sq(v: &Vector3<f64>, curl: &Vector3<f64>, div: f64) -> f64 {
    v.norm_squared() + curl.norm_squared() + div * div
}

/// Integrates one vertical column of chart `j` at base point `xbar`.
#[allow(clippy::too_many_arguments)]
fn column(
    phi: &AnalyticVectorField,
    map: &PiolaMap,
    j: usize,
    chart: &AtlasChart,
    boundary: bool,
    xbar: [f64; 2],
    wxy: f64,
    (a3, b3): (f64, f64),
    ref_x: &[f64],
    ref_w: &[f64],
    acc: &mut Accumulator,
) -> Result<(), PiolaError> {
    let (g_src, g_tgt, ghat) = if boundary {
        let gs = map.source.profile(j).value(xbar);
        let gt = map.target.profile(j).value(xbar);
        (gs, gt, gt - map.k)
    } else {
        (b3, b3, b3)
    };
    let g_min = g_src.min(g_tgt);
    let node = |x3: f64| chart.from_local([xbar[0], xbar[1], x3]);

    // Source domain: (a3, g), split at ĝ.
    let mut breaks = vec![a3];
    if ghat > a3 && ghat < g_src {
        breaks.push(ghat);
    }
    breaks.push(g_src);
    for seg in breaks.windows(2) {
        let len = seg[1] - seg[0];
        for (&r, &rw) in ref_x.iter().zip(ref_w) {
            let p = node(seg[0] + len * r);
            let wt = wxy * len * rw;
            let (psi, _) = map.partition.eval(j, p);
            if psi == 0.0 {
                continue;
            }
            let jf = phi.jacobian(p);
            acc.source.add(wt * psi * x_norm_sq(&phi.value(p), &curl_of(&jf), jf.trace()));
        }
    }

    // Target domain: (a3, g̃), split at ĝ and min(g, g̃); the overlap is the part below min(g, g̃).
    let mut breaks = vec![a3];
    for b in [ghat, g_min] {
        if b > a3 && b < g_tgt && !breaks.contains(&b) {
            breaks.push(b);
        }
    }
    breaks.push(g_tgt);
    breaks.sort_by(f64::total_cmp);
    for seg in breaks.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let in_overlap = seg[1] <= g_min;
        for (&r, &rw) in ref_x.iter().zip(ref_w) {
            let p = node(seg[0] + len * r);
            let wt = wxy * len * rw;
            let (psi, _) = map.partition.eval(j, p);
            if psi == 0.0 {
                continue;
            }
            let detail = map.jet_detail(phi, p)?;
            let u = detail.jet;
            acc.target.add(wt * psi * x_norm_sq(&u.value, &u.curl, u.div));
            acc.part.min_det = acc.part.min_det.min(detail.min_det);
            acc.part.max_det = acc.part.max_det.max(detail.max_det);
            if in_overlap {
                let jf = phi.jacobian(p);
                let f = phi.value(p);
                let dv = u.value - f;
                let dc = u.curl - curl_of(&jf);
                let dd = u.div - jf.trace();
                acc.overlap.add(wt * psi * x_norm_sq(&dv, &dc, dd));
                if detail.identity {
                    acc.part.identity_nodes += 1;
                    acc.part.identity_dev = acc.part.identity_dev.max(dv.amax());
                    acc.part.field_scale = acc.part.field_scale.max(f.amax());
                }
            }
        }
    }
    Ok(())
}

/// Runs [`verify_piolamain`] along a family for each ε.
pub fn verify_family(
    phi: &AnalyticVectorField,
    family: &PerturbationFamily,
    eps_list: &[f64],
    points: usize,
) -> Result<Vec<PiolaReport>, PiolaError> {
    eps_list
        .iter()
        .map(|&eps| {
            let map = PiolaMap::from_family(family, eps)?;
            let mut r = verify_piolamain(phi, &map, &PiolaQuadrature::for_eps(points, eps))?;
            r.eps = Some(eps);
            Ok(r)
        })
        .collect()
}

/// Version line of the Piola report CSV.
pub const PIOLA_CSV_VERSION: &str = "# curlcurl-piola v1";

/// Writes reports as CSV with columns
/// `eps,norm_source,norm_target,overlap_distance,min_det,max_det`.
pub fn write_piola_csv<W: Write>(mut w: W, reports: &[PiolaReport]) -> std::io::Result<()> {
    writeln!(w, "{PIOLA_CSV_VERSION}")?;
    writeln!(w, "eps,norm_source,norm_target,overlap_distance,min_det,max_det")?;
    for r in reports {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.eps.map_or_else(|| "nan".to_string(), |e| format!("{e}")),
            r.norm_source,
            r.norm_target,
            r.overlap_distance,
            r.min_det,
            r.max_det
        )?;
    }
    Ok(())
}
