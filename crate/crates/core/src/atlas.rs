//! Atlas descriptions of domains: rotated cuboid charts, boundary profile
//! functions, subgraph domains and ε-indexed perturbation families.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Smooth one-dimensional bump `φ(t) = exp(1 - 1/(1 - t²))` on `(-1, 1)`,
/// zero elsewhere, normalized so that `φ(0) = 1`. Returns `(φ, φ', φ'')`.
pub fn bump1d(t: f64) -> (f64, f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let s = 1.0 - t * t;
    let v = (1.0 - 1.0 / s).exp();
    let g1 = -2.0 * t / (s * s);
    let g2 = -2.0 / (s * s) - 8.0 * t * t / (s * s * s);
    (v, v * g1, v * (g1 * g1 + g2))
}

/// Axis-aligned rectangle `(x0, x1) × (y0, y1)` in the chart base plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect2 {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect2 {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self { x, y }
    }

    pub fn area(&self) -> f64 {
        (self.x.1 - self.x.0) * (self.y.1 - self.y.0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x.0 && p[0] <= self.x.1 && p[1] >= self.y.0 && p[1] <= self.y.1
    }

    /// Grid point `(i, j)` of a uniform `n × n` grid including the corners.
    pub fn grid_point(&self, n: usize, i: usize, j: usize) -> [f64; 2] {
        let d = (n.max(2) - 1) as f64;
        [
            self.x.0 + (self.x.1 - self.x.0) * i as f64 / d,
            self.y.0 + (self.y.1 - self.y.0) * j as f64 / d,
        ]
    }
}

/// Local coordinates `(x̄, x₃)` of a point in a chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalCoords {
    pub xbar: [f64; 2],
    pub x3: f64,
}

/// A rotated cuboid chart: `r(p) = R p` maps physical points to local
/// coordinates, and the chart is the cuboid `Π (a_i, b_i)` in local coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasChart {
    rotation: Matrix3<f64>,
    bounds: [(f64, f64); 3],
    touches_boundary: bool,
}

impl AtlasChart {
    pub fn new(
        rotation: Matrix3<f64>,
        bounds: [(f64, f64); 3],
        touches_boundary: bool,
    ) -> Result<Self, GeometryError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(defect < 1e-12) || (rotation.determinant() - 1.0).abs() > 1e-12 {
            return Err(GeometryError::InvalidAtlas(format!(
                "rotation is not a proper orthogonal matrix (defect {defect:.3e})"
            )));
        }
        for (axis, &(a, b)) in bounds.iter().enumerate() {
            if !(a < b) {
                return Err(GeometryError::InvalidAtlas(format!(
                    "axis {axis} has empty interval ({a}, {b})"
                )));
            }
        }
        Ok(Self {
            rotation,
            bounds,
            touches_boundary,
        })
    }

    /// Chart with the identity rotation.
    pub fn axis_aligned(bounds: [(f64, f64); 3], touches_boundary: bool) -> Result<Self, GeometryError> {
        Self::new(Matrix3::identity(), bounds, touches_boundary)
    }

    /// Chart rotated by `angle` radians about `axis`.
    pub fn from_axis_angle(
        axis: [f64; 3],
        angle: f64,
        bounds: [(f64, f64); 3],
        touches_boundary: bool,
    ) -> Result<Self, GeometryError> {
        let v = Vector3::from(axis);
        if v.norm() == 0.0 || !v.norm().is_finite() {
            return Err(GeometryError::InvalidAtlas("rotation axis must be nonzero".into()));
        }
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(v), angle);
        Self::new(*rot.matrix(), bounds, touches_boundary)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn bounds(&self) -> [(f64, f64); 3] {
        self.bounds
    }

    pub fn touches_boundary(&self) -> bool {
        self.touches_boundary
    }

    /// The base rectangle `W` spanned by the first two local axes.
    pub fn base_rect(&self) -> Rect2 {
        Rect2::new(self.bounds[0], self.bounds[1])
    }

    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        (self.rotation * Vector3::from(p)).into()
    }

    pub fn from_local(&self, q: [f64; 3]) -> [f64; 3] {
        (self.rotation.transpose() * Vector3::from(q)).into()
    }

    /// Whether local coordinates `q` lie in the closed cuboid.
    pub fn contains_local(&self, q: [f64; 3]) -> bool {
        q.iter()
            .zip(&self.bounds)
            .all(|(&x, &(a, b))| x >= a - 1e-12 && x <= b + 1e-12)
    }

    /// Whether local coordinates `q` lie in the open cuboid.
    pub fn contains_local_open(&self, q: [f64; 3]) -> bool {
        q.iter().zip(&self.bounds).all(|(&x, &(a, b))| x > a && x < b)
    }
}

/// Local coordinates of `p` in `chart`, failing when `p` is outside the cuboid.
pub fn chart_local_coords(chart: &AtlasChart, p: [f64; 3]) -> Result<LocalCoords, GeometryError> {
    let q = chart.to_local(p);
    if !chart.contains_local(q) {
        return Err(GeometryError::PointOutsideChart { chart: 0, point: p });
    }
    Ok(LocalCoords {
        xbar: [q[0], q[1]],
        x3: q[2],
    })
}

/// Ordered chart list with the length parameter ρ. The first `s'` charts
/// describe the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Atlas {
    rho: f64,
    charts: Vec<AtlasChart>,
}

impl Atlas {
    pub fn new(rho: f64, charts: Vec<AtlasChart>) -> Result<Self, GeometryError> {
        if !(rho > 0.0) {
            return Err(GeometryError::InvalidAtlas(format!("rho must be positive, got {rho}")));
        }
        if charts.is_empty() {
            return Err(GeometryError::InvalidAtlas("atlas needs at least one chart".into()));
        }
        let s_prime = charts.iter().take_while(|c| c.touches_boundary).count();
        if charts[s_prime..].iter().any(|c| c.touches_boundary) {
            return Err(GeometryError::InvalidAtlas(
                "boundary charts must precede interior charts".into(),
            ));
        }
        Ok(Self { rho, charts })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn charts(&self) -> &[AtlasChart] {
        &self.charts
    }

    pub fn chart(&self, j: usize) -> &AtlasChart {
        &self.charts[j]
    }

    /// Total chart count `s`.
    pub fn s(&self) -> usize {
        self.charts.len()
    }

    /// Boundary chart count `s'`.
    pub fn s_prime(&self) -> usize {
        self.charts.iter().filter(|c| c.touches_boundary).count()
    }
}

/// Periodic cell function `b(y) = offset + amplitude · cos(2π f₁ y₁) cos(2π f₂ y₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosProduct {
    pub freq: [f64; 2],
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl CosProduct {
    pub fn new(freq: [f64; 2]) -> Self {
        Self {
            freq,
            amplitude: 1.0,
            offset: 0.0,
        }
    }

    /// Value, gradient and Hessian at `y`.
    pub fn eval(&self, y: [f64; 2]) -> (f64, Vector2<f64>, Matrix2<f64>) {
        let tau = 2.0 * std::f64::consts::PI;
        let (k1, k2) = (tau * self.freq[0], tau * self.freq[1]);
        let (s1, c1) = (k1 * y[0]).sin_cos();
        let (s2, c2) = (k2 * y[1]).sin_cos();
        let a = self.amplitude;
        let v = self.offset + a * c1 * c2;
        let g = Vector2::new(-a * k1 * s1 * c2, -a * k2 * c1 * s2);
        let h = Matrix2::new(
            -a * k1 * k1 * c1 * c2,
            a * k1 * k2 * s1 * s2,
            a * k1 * k2 * s1 * s2,
            -a * k2 * k2 * c1 * c2,
        );
        (v, g, h)
    }
}

/// Cutoff factor ψ of an oscillatory profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cutoff {
    One,
    /// Tensor product of [`bump1d`] scaled to `center ± half_width`.
    Bump { center: [f64; 2], half_width: [f64; 2] },
}

impl Cutoff {
    pub fn eval(&self, x: [f64; 2]) -> (f64, Vector2<f64>, Matrix2<f64>) {
        match *self {
            Cutoff::One => (1.0, Vector2::zeros(), Matrix2::zeros()),
            Cutoff::Bump { center, half_width } => {
                let (a, a1, a2) = bump1d((x[0] - center[0]) / half_width[0]);
                let (b, b1, b2) = bump1d((x[1] - center[1]) / half_width[1]);
                let (w1, w2) = (half_width[0], half_width[1]);
                let g = Vector2::new(a1 / w1 * b, a * b1 / w2);
                let h = Matrix2::new(
                    a2 / (w1 * w1) * b,
                    a1 * b1 / (w1 * w2),
                    a1 * b1 / (w1 * w2),
                    a * b2 / (w2 * w2),
                );
                (a * b, g, h)
            }
        }
    }
}

/// Bicubic Catmull-Rom interpolant on a uniform grid, extended by constant
/// continuation outside the grid. Values are stored row-major, `values[j * nx + i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedProfile {
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
        [
            0.5 * (-6.0 * t + 4.0),
            0.5 * (18.0 * t - 10.0),
            0.5 * (-18.0 * t + 8.0),
            0.5 * (6.0 * t - 2.0),
        ],
    )
}

impl TabulatedProfile {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let [nx, ny] = self.shape;
        if nx < 2 || ny < 2 || self.values.len() != nx * ny {
            return Err(GeometryError::InvalidProfile(format!(
                "tabulated profile needs at least 2x2 values matching shape {nx}x{ny}, got {}",
                self.values.len()
            )));
        }
        if !(self.spacing[0] > 0.0 && self.spacing[1] > 0.0) {
            return Err(GeometryError::InvalidProfile("tabulated spacing must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidProfile("tabulated values must be finite".into()));
        }
        Ok(())
    }

    fn axis(&self, x: f64, d: usize) -> (usize, f64, bool) {
        let n = self.shape[d];
        let s = (x - self.origin[d]) / self.spacing[d];
        let max = (n - 1) as f64;
        if s <= 0.0 {
            (0, 0.0, s < 0.0)
        } else if s >= max {
            (n - 2, 1.0, s > max)
        } else {
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64, false)
        }
    }

    fn raw(&self, i: isize, j: isize) -> f64 {
        self.values[j as usize * self.shape[0] + i as usize]
    }

    /// Grid value with linear extrapolation one cell beyond the edges, so the
    /// interpolant reproduces affine data exactly.
    fn at(&self, i: isize, j: isize) -> f64 {
        let (nx, ny) = (self.shape[0] as isize, self.shape[1] as isize);
        let ghost = |k: isize, n: isize| -> (isize, isize) {
            if k < 0 {
                (0, 1)
            } else if k >= n {
                (n - 1, n - 2)
            } else {
                (k, k)
            }
        };
        let (i0, i1) = ghost(i, nx);
        let (j0, j1) = ghost(j, ny);
        let fx = |jj: isize| {
            if i0 == i1 {
                self.raw(i0, jj)
            } else {
                2.0 * self.raw(i0, jj) - self.raw(i1, jj)
            }
        };
        if j0 == j1 {
            fx(j0)
        } else {
            2.0 * fx(j0) - fx(j1)
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> (f64, Vector2<f64>, Matrix2<f64>) {
        let (i, tx, cx) = self.axis(x[0], 0);
        let (j, ty, cy) = self.axis(x[1], 1);
        let (wx, dx, ddx) = catmull_rom(tx);
        let (wy, dy, ddy) = catmull_rom(ty);
        let mut v = 0.0;
        let mut g = Vector2::zeros();
        let mut h = Matrix2::zeros();
        for (b, (&wyb, (&dyb, &ddyb))) in wy.iter().zip(dy.iter().zip(&ddy)).enumerate() {
            for (a, (&wxa, (&dxa, &ddxa))) in wx.iter().zip(dx.iter().zip(&ddx)).enumerate() {
                let f = self.at(i as isize + a as isize - 1, j as isize + b as isize - 1);
                v += f * wxa * wyb;
                g[0] += f * dxa * wyb;
                g[1] += f * wxa * dyb;
                h[(0, 0)] += f * ddxa * wyb;
                h[(0, 1)] += f * dxa * dyb;
                h[(1, 1)] += f * wxa * ddyb;
            }
        }
        let (sx, sy) = (self.spacing[0], self.spacing[1]);
        g[0] /= sx;
        g[1] /= sy;
        h[(0, 0)] /= sx * sx;
        h[(0, 1)] /= sx * sy;
        h[(1, 1)] /= sy * sy;
        if cx {
            g[0] = 0.0;
            h[(0, 0)] = 0.0;
            h[(0, 1)] = 0.0;
        }
        if cy {
            g[1] = 0.0;
            h[(1, 1)] = 0.0;
            h[(0, 1)] = 0.0;
        }
        h[(1, 0)] = h[(0, 1)];
        (v, g, h)
    }
}

/// Boundary profile `x₃ = g(x̄)` from the catalog. Every kind is defined on
/// all of ℝ².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileFunction {
    Constant {
        c: f64,
    },
    /// `g(x̄) = ε^α b(x̄/ε) ψ(x̄)`.
    Oscillatory {
        alpha: f64,
        eps: f64,
        b: CosProduct,
        psi: Cutoff,
    },
    /// `g(x̄) = c |x₁|^{1+β}`.
    HoelderPower {
        c: f64,
        beta: f64,
    },
    /// `g(x̄) = |x₁| / log|x₁|` for `|x₁| ≤ e⁻²`, continued linearly (C¹) beyond.
    LogCounterexample,
    Tabulated(TabulatedProfile),
    Sum {
        terms: Vec<ProfileFunction>,
    },
    Scaled {
        factor: f64,
        profile: Box<ProfileFunction>,
    },
}

/// Value, gradient and (where defined) Hessian of a profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileEval {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub hessian: Option<Matrix2<f64>>,
}

const LOG_CUT: f64 = 0.135_335_283_236_612_7; // e^{-2}

fn log_profile_1d(x: f64) -> (f64, f64, Option<f64>) {
    let a = x.abs();
    let sgn = x.signum();
    if a == 0.0 {
        return (0.0, 0.0, None);
    }
    if a <= LOG_CUT {
        let l = a.ln();
        let v = a / l;
        let d = (l - 1.0) / (l * l);
        let dd = (2.0 - l) / (a * l * l * l);
        (v, sgn * d, Some(dd))
    } else {
        let v0 = -LOG_CUT / 2.0;
        let d0 = -0.75;
        (v0 + d0 * (a - LOG_CUT), sgn * d0, Some(0.0))
    }
}

impl ProfileFunction {
    pub fn zero() -> Self {
        ProfileFunction::Constant { c: 0.0 }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProfileFunction::Constant { .. } => "constant",
            ProfileFunction::Oscillatory { .. } => "oscillatory",
            ProfileFunction::HoelderPower { .. } => "hoelder_power",
            ProfileFunction::LogCounterexample => "log_counterexample",
            ProfileFunction::Tabulated(_) => "tabulated",
            ProfileFunction::Sum { .. } => "sum",
            ProfileFunction::Scaled { .. } => "scaled",
        }
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidProfile(m));
        match self {
            ProfileFunction::Constant { c } if !c.is_finite() => bad("constant must be finite".into()),
            ProfileFunction::Oscillatory { alpha, eps, psi, .. } => {
                if !(*eps > 0.0) || !alpha.is_finite() {
                    return bad(format!("oscillatory profile needs eps > 0 and finite alpha, got eps={eps}"));
                }
                if let Cutoff::Bump { half_width, .. } = psi {
                    if !(half_width[0] > 0.0 && half_width[1] > 0.0) {
                        return bad("bump half widths must be positive".into());
                    }
                }
                Ok(())
            }
            ProfileFunction::HoelderPower { beta, c } => {
                if !(*beta > 0.0) || !c.is_finite() {
                    bad(format!("hoelder_power needs beta > 0, got {beta}"))
                } else {
                    Ok(())
                }
            }
            ProfileFunction::Tabulated(t) => t.validate(),
            ProfileFunction::Sum { terms } => terms.iter().try_for_each(|t| t.validate()),
            ProfileFunction::Scaled { factor, profile } => {
                if !factor.is_finite() {
                    return bad("scale factor must be finite".into());
                }
                profile.validate()
            }
            _ => Ok(()),
        }
    }

    /// Evaluates value, gradient and Hessian (`None` where undefined).
    pub fn eval(&self, x: [f64; 2]) -> ProfileEval {
        match self {
            ProfileFunction::Constant { c } => ProfileEval {
                value: *c,
                gradient: Vector2::zeros(),
                hessian: Some(Matrix2::zeros()),
            },
            ProfileFunction::Oscillatory { alpha, eps, b, psi } => {
                let y = [x[0] / eps, x[1] / eps];
                let (bv, bg, bh) = b.eval(y);
                let (pv, pg, ph) = psi.eval(x);
                let ea = eps.powf(*alpha);
                let ea1 = ea / eps;
                let ea2 = ea1 / eps;
                let cross = bg * pg.transpose();
                ProfileEval {
                    value: ea * bv * pv,
                    gradient: bg * (ea1 * pv) + pg * (ea * bv),
                    hessian: Some(bh * (ea2 * pv) + (cross + cross.transpose()) * ea1 + ph * (ea * bv)),
                }
            }
            ProfileFunction::HoelderPower { c, beta } => {
                let a = x[0].abs();
                let value = c * a.powf(1.0 + beta);
                let d = c * (1.0 + beta) * a.powf(*beta) * x[0].signum();
                let hessian = if a == 0.0 && *beta < 1.0 {
                    None
                } else {
                    let dd = if a == 0.0 {
                        if *beta == 1.0 { 2.0 * c } else { 0.0 }
                    } else {
                        c * (1.0 + beta) * beta * a.powf(beta - 1.0)
                    };
                    Some(Matrix2::new(dd, 0.0, 0.0, 0.0))
                };
                ProfileEval {
                    value,
                    gradient: Vector2::new(d, 0.0),
                    hessian,
                }
            }
            ProfileFunction::LogCounterexample => {
                let (v, d, dd) = log_profile_1d(x[0]);
                ProfileEval {
                    value: v,
                    gradient: Vector2::new(d, 0.0),
                    hessian: dd.map(|h| Matrix2::new(h, 0.0, 0.0, 0.0)),
                }
            }
            ProfileFunction::Tabulated(t) => {
                let (v, g, h) = t.eval(x);
                ProfileEval {
                    value: v,
                    gradient: g,
                    hessian: Some(h),
                }
            }
            ProfileFunction::Sum { terms } => {
                let mut out = ProfileEval {
                    value: 0.0,
                    gradient: Vector2::zeros(),
                    hessian: Some(Matrix2::zeros()),
                };
                for t in terms {
                    let e = t.eval(x);
                    out.value += e.value;
                    out.gradient += e.gradient;
                    out.hessian = match (out.hessian, e.hessian) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
                out
            }
            ProfileFunction::Scaled { factor, profile } => {
                let e = profile.eval(x);
                ProfileEval {
                    value: factor * e.value,
                    gradient: e.gradient * *factor,
                    hessian: e.hessian.map(|h| h * *factor),
                }
            }
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.eval(x).value
    }

    /// Hessian, failing where the profile is not twice differentiable.
    pub fn hessian(&self, x: [f64; 2]) -> Result<Matrix2<f64>, GeometryError> {
        self.eval(x).hessian.ok_or_else(|| GeometryError::HessianUndefined {
            profile: self.kind_name().to_string(),
            at: x,
        })
    }
}

/// Evaluates a profile (value, gradient, Hessian or undefined flag).
pub fn profile_eval(g: &ProfileFunction, x: [f64; 2]) -> ProfileEval {
    g.eval(x)
}

/// Declared regularity class `C^{k,γ}_M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityClass {
    pub k: usize,
    pub gamma: f64,
    pub m: f64,
}

/// Domain described by an atlas and one profile per boundary chart.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasDomain {
    atlas: Atlas,
    profiles: Vec<ProfileFunction>,
    regularity: Option<RegularityClass>,
}

/// Grid resolution used by the constructor to check the profile range.
const RANGE_CHECK_GRID: usize = 65;

impl AtlasDomain {
    /// Builds a domain and checks `a₃ + ρ ≤ g ≤ b₃ - ρ` on a sample grid of each `W_j`.
    pub fn new(
        atlas: Atlas,
        profiles: Vec<ProfileFunction>,
        regularity: Option<RegularityClass>,
    ) -> Result<Self, GeometryError> {
        if profiles.len() != atlas.s_prime() {
            return Err(GeometryError::InvalidAtlas(format!(
                "{} profiles given for {} boundary charts",
                profiles.len(),
                atlas.s_prime()
            )));
        }
        for p in &profiles {
            p.validate()?;
        }
        let dom = Self {
            atlas,
            profiles,
            regularity,
        };
        dom.check_profile_range(RANGE_CHECK_GRID)?;
        Ok(dom)
    }

    /// Single boundary chart over `W × (z_lo, z_hi)` with identity rotation.
    pub fn single_chart(
        w: Rect2,
        z_lo: f64,
        z_hi: f64,
        rho: f64,
        profile: ProfileFunction,
    ) -> Result<Self, GeometryError> {
        let chart = AtlasChart::axis_aligned([w.x, w.y, (z_lo, z_hi)], true)?;
        Self::new(Atlas::new(rho, vec![chart])?, vec![profile], None)
    }

    pub fn atlas(&self) -> &Atlas {
        &self.atlas
    }

    pub fn profiles(&self) -> &[ProfileFunction] {
        &self.profiles
    }

    pub fn profile(&self, j: usize) -> &ProfileFunction {
        &self.profiles[j]
    }

    pub fn regularity(&self) -> Option<RegularityClass> {
        self.regularity
    }

    /// Same atlas with replaced profiles.
    pub fn with_profiles(&self, profiles: Vec<ProfileFunction>) -> Result<Self, GeometryError> {
        Self::new(self.atlas.clone(), profiles, self.regularity)
    }

    fn check_profile_range(&self, n: usize) -> Result<(), GeometryError> {
        let rho = self.atlas.rho;
        for (j, g) in self.profiles.iter().enumerate() {
            let chart = self.atlas.chart(j);
            let (a3, b3) = chart.bounds[2];
            let w = chart.base_rect();
            for i in 0..n {
                for k in 0..n {
                    let x = w.grid_point(n, i, k);
                    let v = g.value(x);
                    if !v.is_finite() || v < a3 + rho || v > b3 - rho {
                        return Err(GeometryError::InvalidAtlas(format!(
                            "profile of chart {j} leaves [a3 + rho, b3 - rho] = [{}, {}] at {x:?} (value {v})",
                            a3 + rho,
                            b3 - rho
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full validation: profile range on a `grid_n` grid and, if a class is
    /// declared, that its `M` dominates the sampled norm.
    pub fn validate(&self, grid_n: usize) -> Result<(), GeometryError> {
        self.check_profile_range(grid_n)?;
        if let Some(class) = self.regularity {
            let m = check_atlas_class(self, class.k, class.gamma, grid_n)?;
            if m > class.m {
                return Err(GeometryError::InvalidAtlas(format!(
                    "declared M = {} is below the sampled estimate {m}",
                    class.m
                )));
            }
        }
        Ok(())
    }

    /// Local subgraph membership in boundary chart `j`.
    pub fn in_chart_subgraph(&self, j: usize, q: [f64; 3]) -> bool {
        let chart = self.atlas.chart(j);
        chart.contains_local_open(q) && q[2] < self.profiles[j].value([q[0], q[1]])
    }
}

/// Whether `p` lies in the domain: inside the subgraph of a boundary chart
/// containing it, or inside an interior chart.
pub fn domain_contains(dom: &AtlasDomain, p: [f64; 3]) -> bool {
    dom.atlas.charts.iter().enumerate().any(|(j, chart)| {
        let q = chart.to_local(p);
        if !chart.contains_local_open(q) {
            return false;
        }
        if chart.touches_boundary {
            q[2] < dom.profiles[j].value([q[0], q[1]])
        } else {
            true
        }
    })
}

/// Derivatives of a profile up to order two on a grid.
struct GridDerivatives {
    n: usize,
    /// Per multi-index `α` with `|α| = order`, values on the grid.
    fields: Vec<Vec<f64>>,
}

fn grid_derivatives(
    g: &ProfileFunction,
    w: Rect2,
    n: usize,
    order: usize,
) -> Result<GridDerivatives, GeometryError> {
    let count = order + 1;
    let mut fields = vec![vec![0.0; n * n]; count];
    for j in 0..n {
        for i in 0..n {
            let x = w.grid_point(n, i, j);
            let e = g.eval(x);
            let vals: Vec<f64> = match order {
                0 => vec![e.value],
                1 => vec![e.gradient[0], e.gradient[1]],
                2 => {
                    let h = e.hessian.ok_or_else(|| GeometryError::DerivativeUnavailable {
                        profile: g.kind_name().to_string(),
                        order: 2,
                    })?;
                    vec![h[(0, 0)], h[(0, 1)], h[(1, 1)]]
                }
                _ => unreachable!("orders above two are rejected earlier"),
            };
            for (f, v) in fields.iter_mut().zip(vals) {
                f[j * n + i] = v;
            }
        }
    }
    Ok(GridDerivatives { n, fields })
}

/// Sampled Hölder seminorm of a grid field over pairs separated by
/// power-of-two multiples of the grid step in four directions.
fn sampled_seminorm(field: &[f64], n: usize, w: Rect2, gamma: f64) -> f64 {
    let d = (n.max(2) - 1) as f64;
    let hx = (w.x.1 - w.x.0) / d;
    let hy = (w.y.1 - w.y.0) / d;
    let dirs: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
    let mut best: f64 = 0.0;
    let mut s = 1isize;
    while (s as usize) < n {
        for &(dx, dy) in &dirs {
            let (ox, oy) = (dx * s, dy * s);
            let dist = ((ox as f64 * hx).powi(2) + (oy as f64 * hy).powi(2)).sqrt();
            let denom = dist.powf(gamma);
            for j in 0..n as isize {
                let j2 = j + oy;
                if j2 < 0 || j2 >= n as isize {
                    continue;
                }
                for i in 0..n as isize {
                    let i2 = i + ox;
                    if i2 < 0 || i2 >= n as isize {
                        continue;
                    }
                    let a = field[j as usize * n + i as usize];
                    let b = field[j2 as usize * n + i2 as usize];
                    best = best.max((a - b).abs() / denom);
                }
            }
        }
        s *= 2;
    }
    best
}

/// Sampled lower-bound estimate of the class norm
/// `max_{|α|≤k} sup|D^α g| + max_{|α|=k} [D^α g]_γ`, maximized over boundary charts.
pub fn check_atlas_class(
    dom: &AtlasDomain,
    k: usize,
    gamma: f64,
    grid_n: usize,
) -> Result<f64, GeometryError> {
    let n = grid_n.max(2);
    let mut m: f64 = 0.0;
    for (j, g) in dom.profiles.iter().enumerate() {
        if k > 2 {
            return Err(GeometryError::DerivativeUnavailable {
                profile: g.kind_name().to_string(),
                order: k,
            });
        }
        let w = dom.atlas.chart(j).base_rect();
        let mut sup: f64 = 0.0;
        let mut top = None;
        for order in 0..=k {
            let d = grid_derivatives(g, w, n, order)?;
            for f in &d.fields {
                sup = sup.max(f.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            }
            if order == k {
                top = Some(d);
            }
        }
        let top = top.expect("order k is always sampled");
        let semi = top
            .fields
            .iter()
            .map(|f| sampled_seminorm(f, top.n, w, gamma))
            .fold(0.0f64, f64::max);
        m = m.max(sup + semi);
    }
    Ok(m)
}

/// Closure type for ε-indexed quantities.
pub type EpsMap<T> = Arc<dyn Fn(f64) -> T + Send + Sync>;

/// Family `Ω_ε` sharing the atlas of a base domain `Ω`, with the
/// comparison scale `κ_ε`.
#[derive(Clone)]
pub struct PerturbationFamily {
    base: AtlasDomain,
    perturbed: EpsMap<Result<AtlasDomain, GeometryError>>,
    kappa: EpsMap<f64>,
}

impl std::fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationFamily").field("base", &self.base).finish_non_exhaustive()
    }
}

impl PerturbationFamily {
    pub fn new(
        base: AtlasDomain,
        perturbed: EpsMap<Result<AtlasDomain, GeometryError>>,
        kappa: EpsMap<f64>,
    ) -> Self {
        Self {
            base,
            perturbed,
            kappa,
        }
    }

    /// Family with `Ω_ε = Ω` for every ε.
    pub fn identical(base: AtlasDomain, kappa: EpsMap<f64>) -> Self {
        let b = base.clone();
        Self::new(base, Arc::new(move |_| Ok(b.clone())), kappa)
    }

    /// Oscillating family on boundary chart `chart`:
    /// `g_ε = g + ε^α b(x̄/ε) ψ(x̄)` with `κ_ε = ε^{kappa_exponent}`.
    pub fn oscillatory(
        base: AtlasDomain,
        chart: usize,
        alpha: f64,
        b: CosProduct,
        psi: Cutoff,
        kappa_exponent: f64,
    ) -> Self {
        let b0 = base.clone();
        let perturbed: EpsMap<Result<AtlasDomain, GeometryError>> = Arc::new(move |eps| {
            let mut profiles = b0.profiles().to_vec();
            let osc = ProfileFunction::Oscillatory { alpha, eps, b, psi };
            profiles[chart] = match &profiles[chart] {
                ProfileFunction::Constant { c } if *c == 0.0 => osc,
                g => ProfileFunction::Sum {
                    terms: vec![g.clone(), osc],
                },
            };
            b0.with_profiles(profiles)
        });
        Self::new(base, perturbed, Arc::new(move |eps: f64| eps.powf(kappa_exponent)))
    }

    pub fn base(&self) -> &AtlasDomain {
        &self.base
    }

    pub fn perturbed(&self, eps: f64) -> Result<AtlasDomain, GeometryError> {
        let d = (self.perturbed)(eps)?;
        if d.atlas() != self.base.atlas() {
            return Err(GeometryError::InvalidAtlas(
                "perturbed domain must share the atlas of the base domain".into(),
            ));
        }
        Ok(d)
    }

    pub fn kappa(&self, eps: f64) -> f64 {
        (self.kappa)(eps)
    }
}

/// One row of the convergence-condition report.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceConditionRow {
    pub eps: f64,
    pub kappa: f64,
    /// `max_j sup |D^β(g_ε - g)|` for `|β| = 0, 1, 2`.
    pub sup_norms: [f64; 3],
    /// `sup_norms[b] / κ^{3/2 - b}`.
    pub ratios: [f64; 3],
    /// Condition (i): `κ_ε > max_j ‖g_ε - g‖_∞`.
    pub kappa_dominates: bool,
}

/// Convergence-condition report over an ε list.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceConditionReport {
    pub rows: Vec<ConvergenceConditionRow>,
    /// Per `|β|`, whether the ratio sequence decreases along the ε list
    /// (sequences that stay exactly zero count as decreasing).
    pub decreasing: [bool; 3],
}

/// Samples the profile differences of a family against κ_ε.
pub fn check_convergence_conditions(
    fam: &PerturbationFamily,
    eps_list: &[f64],
    grid_n: usize,
) -> Result<ConvergenceConditionReport, GeometryError> {
    let n = grid_n.max(2);
    let base = fam.base();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let pert = fam.perturbed(eps)?;
        let kappa = fam.kappa(eps);
        if !(kappa > 0.0) {
            return Err(GeometryError::InvalidAtlas(format!("kappa must be positive, got {kappa}")));
        }
        let mut sups = [0.0f64; 3];
        for j in 0..base.atlas().s_prime() {
            let w = base.atlas().chart(j).base_rect();
            let (g0, g1) = (base.profile(j), pert.profile(j));
            for a in 0..n {
                for c in 0..n {
                    let x = w.grid_point(n, a, c);
                    let (e0, e1) = (g0.eval(x), g1.eval(x));
                    sups[0] = sups[0].max((e1.value - e0.value).abs());
                    sups[1] = sups[1].max((e1.gradient - e0.gradient).amax());
                    if let (Some(h0), Some(h1)) = (e0.hessian, e1.hessian) {
                        sups[2] = sups[2].max((h1 - h0).amax());
                    }
                }
            }
        }
        let ratios = [
            sups[0] / kappa.powf(1.5),
            sups[1] / kappa.powf(0.5),
            sups[2] * kappa.powf(0.5),
        ];
        rows.push(ConvergenceConditionRow {
            eps,
            kappa,
            sup_norms: sups,
            ratios,
            kappa_dominates: kappa > sups[0],
        });
    }
    let mut decreasing = [true; 3];
    for (b, flag) in decreasing.iter_mut().enumerate() {
        *flag = rows.windows(2).all(|w| {
            let (p, q) = (w[0].ratios[b], w[1].ratios[b]);
            q < p || (p == 0.0 && q == 0.0)
        });
    }
    Ok(ConvergenceConditionReport { rows, decreasing })
}

// ---------------------------------------------------------------------------
// Domain specification files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct AtlasSection {
    rho: f64,
}

#[derive(Debug, Deserialize, Serialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct RotationSpec {
    axis: [f64; 3],
    angle: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ChartSpec {
    bounds: [[f64; 2]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<RotationSpec>,
    #[serde(default)]
    boundary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<toml::Spanned<ProfileFunction>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    atlas: toml::Spanned<AtlasSection>,
    #[serde(rename = "chart")]
    charts: Vec<toml::Spanned<ChartSpec>>,
    #[serde(default)]
    class: Option<RegularityClass>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses a TOML domain specification. Errors carry the 1-based line.
///
/// ```toml
/// [atlas]
/// rho = 0.05
///
/// [[chart]]
/// bounds = [[0.0, 1.0], [0.0, 1.0], [-1.0, 1.0]]
/// rotation = { axis = [0.0, 0.0, 1.0], angle = 0.0 }
/// boundary = true
/// profile = { kind = "constant", c = 0.0 }
/// ```
pub fn parse_domain_spec(text: &str) -> Result<AtlasDomain, GeometryError> {
    let file: DomainFile = toml::from_str(text).map_err(|e| GeometryError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    let at_line = |span: std::ops::Range<usize>, e: GeometryError| GeometryError::Parse {
        line: line_of(text, span.start),
        message: e.to_string(),
    };
    let mut charts = Vec::new();
    let mut profiles = Vec::new();
    for spec in &file.charts {
        let span = spec.span();
        let c = spec.get_ref();
        let bounds = [
            (c.bounds[0][0], c.bounds[0][1]),
            (c.bounds[1][0], c.bounds[1][1]),
            (c.bounds[2][0], c.bounds[2][1]),
        ];
        let chart = match c.rotation {
            Some(r) => AtlasChart::from_axis_angle(r.axis, r.angle, bounds, c.boundary),
            None => AtlasChart::axis_aligned(bounds, c.boundary),
        }
        .map_err(|e| at_line(span.clone(), e))?;
        match (&c.profile, c.boundary) {
            (Some(p), true) => {
                p.get_ref().validate().map_err(|e| at_line(p.span(), e))?;
                profiles.push(p.get_ref().clone());
            }
            (None, true) => {
                return Err(at_line(
                    span,
                    GeometryError::InvalidAtlas("boundary chart needs a profile".into()),
                ))
            }
            (Some(p), false) => {
                return Err(at_line(
                    p.span(),
                    GeometryError::InvalidAtlas("interior chart must not carry a profile".into()),
                ))
            }
            (None, false) => {}
        }
        charts.push(chart);
    }
    let atlas_span = file.atlas.span();
    let atlas = Atlas::new(file.atlas.get_ref().rho, charts).map_err(|e| at_line(atlas_span.clone(), e))?;
    AtlasDomain::new(atlas, profiles, file.class).map_err(|e| at_line(atlas_span, e))
}

/// Reads and parses a domain specification file.
pub fn load_domain_spec(path: &Path) -> Result<AtlasDomain, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Parse {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_domain_spec(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    fn box_domain(g: ProfileFunction) -> AtlasDomain {
        AtlasDomain::single_chart(Rect2::new((0.0, 1.0), (0.0, 1.0)), -1.0, 1.0, 0.05, g).unwrap()
    }

    fn osc(alpha: f64, eps: f64) -> ProfileFunction {
        ProfileFunction::Oscillatory {
            alpha,
            eps,
            b: CosProduct::new([1.0, 1.0]),
            psi: Cutoff::One,
        }
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        *Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random::<f64>() * 6.0).matrix()
    }

    #[test]
    fn identity_chart_coordinates() {
        let c = AtlasChart::axis_aligned([(0.0, 1.0); 3], true).unwrap();
        let l = chart_local_coords(&c, [0.3, 0.4, 0.1]).unwrap();
        assert_eq!(l.xbar, [0.3, 0.4]);
        assert_eq!(l.x3, 0.1);
        assert!(matches!(
            chart_local_coords(&c, [2.0, 0.0, 0.0]),
            Err(GeometryError::PointOutsideChart { .. })
        ));
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = AtlasChart::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [(-2.0, 2.0); 3], true)
            .unwrap();
        let q = c.to_local([1.0, 0.0, 0.0]);
        assert!(close(q[0], 0.0, 1e-15) && close(q[1], 1.0, 1e-15) && close(q[2], 0.0, 1e-15));
    }

    #[test]
    fn random_rotations_round_trip_and_preserve_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let c = AtlasChart::new(r, [(-10.0, 10.0); 3], false).unwrap();
            let p = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let q = c.to_local(p);
            let back = c.from_local(q);
            let np = Vector3::from(p).norm();
            assert!(close(Vector3::from(q).norm(), np, 1e-12));
            for i in 0..3 {
                assert!(close(back[i], p[i], 1e-12));
            }
        }
    }

    #[test]
    fn rejects_improper_rotation() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(AtlasChart::new(reflect, [(0.0, 1.0); 3], true).is_err());
        assert!(AtlasChart::axis_aligned([(0.0, 1.0), (1.0, 1.0), (0.0, 1.0)], true).is_err());
    }

    #[test]
    fn profile_catalog_values() {
        let z = ProfileFunction::zero().eval([0.3, 0.2]);
        assert_eq!(z.value, 0.0);
        assert_eq!(z.gradient, Vector2::zeros());
        assert_eq!(z.hessian, Some(Matrix2::zeros()));

        let e = osc(2.0, 0.1).eval([0.0, 0.0]);
        assert!(close(e.value, 0.01, 1e-15));
        assert!(e.gradient.norm() < 1e-15);

        let x = (-2.0f64).exp();
        let l = ProfileFunction::LogCounterexample.eval([x, 0.0]);
        assert!(close(l.value, -x / 2.0, 1e-15));
        assert!(matches!(
            ProfileFunction::LogCounterexample.hessian([0.0, 0.3]),
            Err(GeometryError::HessianUndefined { .. })
        ));
    }

    fn fd_check(g: &ProfileFunction, x: [f64; 2]) {
        let e = g.eval(x);
        let h = 1e-5;
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let (ep, em) = (g.eval(xp), g.eval(xm));
            let fd = (ep.value - em.value) / (2.0 * h);
            assert!((fd - e.gradient[d]).abs() < 1e-6 * (1.0 + e.gradient[d].abs()), "{g:?} grad {d}");
            if let (Some(hh), Some(hp), Some(hm)) = (e.hessian, ep.hessian, em.hessian) {
                let _ = (hp, hm);
                let fdg = (ep.gradient - em.gradient) / (2.0 * h);
                for c in 0..2 {
                    assert!((fdg[c] - hh[(d, c)]).abs() < 1e-5 * (1.0 + hh[(d, c)].abs()), "{g:?} hess {d}{c}");
                }
            }
        }
    }

    #[test]
    fn catalog_derivatives_match_finite_differences() {
        let bumped = ProfileFunction::Oscillatory {
            alpha: 2.0,
            eps: 0.2,
            b: CosProduct {
                freq: [1.0, 2.0],
                amplitude: 0.7,
                offset: 0.3,
            },
            psi: Cutoff::Bump {
                center: [0.5, 0.4],
                half_width: [0.4, 0.35],
            },
        };
        let tab = ProfileFunction::Tabulated(TabulatedProfile {
            origin: [0.0, 0.0],
            spacing: [0.25, 0.2],
            shape: [5, 6],
            values: (0..30).map(|i| ((i * 7 % 11) as f64) * 0.01).collect(),
        });
        let cases = [
            bumped,
            ProfileFunction::HoelderPower { c: 0.3, beta: 0.75 },
            ProfileFunction::LogCounterexample,
            tab,
            ProfileFunction::Scaled {
                factor: -2.0,
                profile: Box::new(osc(1.5, 0.3)),
            },
        ];
        for g in &cases {
            for x in [[0.31, 0.47], [0.62, 0.13], [0.07, 0.71], [-0.3, 0.23]] {
                fd_check(g, x);
            }
        }
    }

    #[test]
    fn tabulated_profile_interpolates_and_extends_constantly() {
        let t = TabulatedProfile {
            origin: [0.0, 0.0],
            spacing: [1.0, 1.0],
            shape: [3, 3],
            values: vec![0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 4.0],
        };
        let g = ProfileFunction::Tabulated(t);
        assert!(close(g.value([1.0, 1.0]), 2.0, 1e-14));
        assert!(close(g.value([0.5, 1.0]), 1.5, 1e-14));
        assert!(close(g.value([5.0, 1.0]), 3.0, 1e-14));
        assert_eq!(g.eval([5.0, 1.0]).gradient[0], 0.0);
    }

    #[test]
    fn contains_box_and_oscillatory_points() {
        let d = box_domain(ProfileFunction::zero());
        assert!(domain_contains(&d, [0.5, 0.5, -0.5]));
        assert!(!domain_contains(&d, [0.5, 0.5, 0.5]));
        let od = box_domain(osc(2.0, 0.1));
        let x = [0.37, 0.52];
        let g = od.profile(0).value(x);
        assert!(domain_contains(&od, [x[0], x[1], g - 1e-9]));
        assert!(!domain_contains(&od, [x[0], x[1], g + 1e-9]));
    }

    #[test]
    fn overlapping_charts_agree() {
        // Two boundary charts over the same flat boundary, one rotated about the vertical axis.
        let c1 = AtlasChart::axis_aligned([(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)], true).unwrap();
        let c2 = AtlasChart::from_axis_angle([0.0, 0.0, 1.0], 0.4, [(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)], true)
            .unwrap();
        let d = AtlasDomain::new(
            Atlas::new(0.1, vec![c1, c2]).unwrap(),
            vec![ProfileFunction::zero(), ProfileFunction::zero()],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() * 1.6 - 0.8];
            let a = d.in_chart_subgraph(0, d.atlas().chart(0).to_local(p));
            let b = d.in_chart_subgraph(1, d.atlas().chart(1).to_local(p));
            assert_eq!(a, b);
            assert_eq!(domain_contains(&d, p), a);
        }
    }

    #[test]
    fn rejects_profile_outside_chart_margin() {
        let r = AtlasDomain::single_chart(
            Rect2::new((0.0, 1.0), (0.0, 1.0)),
            -1.0,
            1.0,
            0.05,
            ProfileFunction::Constant { c: 0.99 },
        );
        assert!(matches!(r, Err(GeometryError::InvalidAtlas(_))));
    }

    #[test]
    fn atlas_class_constant_profiles() {
        assert_eq!(check_atlas_class(&box_domain(ProfileFunction::zero()), 1, 1.0, 32).unwrap(), 0.0);
        let m = check_atlas_class(&box_domain(ProfileFunction::Constant { c: -0.4 }), 1, 1.0, 32).unwrap();
        assert!(close(m, 0.4, 1e-15));
        assert!(matches!(
            check_atlas_class(&box_domain(ProfileFunction::zero()), 3, 1.0, 8),
            Err(GeometryError::DerivativeUnavailable { .. })
        ));
    }

    #[test]
    fn atlas_class_matches_dense_oracle() {
        let g = osc(2.0, 0.1);
        let d = box_domain(g.clone());
        let m = check_atlas_class(&d, 1, 1.0, 256).unwrap();
        // Oracle: sup |g|, sup |∇g| and the Lipschitz constant of each partial
        // derivative from the row norms of the Hessian on a dense grid.
        let n = 1201;
        let w = Rect2::new((0.0, 1.0), (0.0, 1.0));
        let (mut s0, mut s1, mut lip) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let e = g.eval(w.grid_point(n, i, j));
                let h = e.hessian.unwrap();
                s0 = s0.max(e.value.abs());
                s1 = s1.max(e.gradient.amax());
                lip = lip.max(h.row(0).norm()).max(h.row(1).norm());
            }
        }
        let oracle = s0.max(s1) + lip;
        assert!((m - oracle).abs() < 0.05 * oracle, "{m} vs {oracle}");
        assert!(m <= oracle * (1.0 + 1e-9));
    }

    #[test]
    fn atlas_class_scales_linearly() {
        let g = ProfileFunction::Oscillatory {
            alpha: 1.0,
            eps: 0.25,
            b: CosProduct::new([1.0, 0.0]),
            psi: Cutoff::One,
        };
        let base = check_atlas_class(&box_domain(g.clone()), 1, 1.0, 64).unwrap();
        for c in [0.5, -3.0] {
            let s = ProfileFunction::Scaled {
                factor: c,
                profile: Box::new(g.clone()),
            };
            let v = check_atlas_class(&box_domain(s), 1, 1.0, 64).unwrap();
            assert!(close(v, c.abs() * base, 1e-12 * base));
        }
    }

    fn family(alpha: f64) -> PerturbationFamily {
        PerturbationFamily::oscillatory(
            box_domain(ProfileFunction::zero()),
            0,
            alpha,
            CosProduct::new([1.0, 1.0]),
            Cutoff::Bump {
                center: [0.5, 0.5],
                half_width: [0.45, 0.45],
            },
            7.0 / 6.0,
        )
    }

    #[test]
    fn identical_family_has_zero_ratios() {
        let fam = PerturbationFamily::identical(box_domain(osc(2.0, 0.1)), Arc::new(|e: f64| e));
        let r = check_convergence_conditions(&fam, &[0.2, 0.1], 32).unwrap();
        for row in &r.rows {
            assert_eq!(row.ratios, [0.0; 3]);
        }
        assert_eq!(r.decreasing, [true; 3]);
    }

    #[test]
    fn oscillatory_ratios_follow_exponent_arithmetic() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let r = check_convergence_conditions(&family(2.0), &eps, 256).unwrap();
        assert_eq!(r.decreasing, [true; 3]);
        assert!(r.rows.iter().all(|row| row.kappa_dominates));
        // |β| = 0 ratio scales like ε^{1/4}.
        let q = r.rows[2].ratios[0] / r.rows[1].ratios[0];
        assert!((q - 0.5f64.powf(0.25)).abs() < 0.05, "{q}");

        let rough = check_convergence_conditions(&family(1.2), &eps, 256).unwrap();
        assert!(!rough.decreasing[2]);
        assert!(rough.rows[3].ratios[2] > rough.rows[0].ratios[2]);
    }

    #[test]
    fn parses_domain_spec() {
        let text = r#"
[atlas]
rho = 0.05

[[chart]]
bounds = [[0.0, 1.0], [0.0, 1.0], [-1.0, 1.0]]
rotation = { axis = [0.0, 0.0, 1.0], angle = 0.0 }
boundary = true

[chart.profile]
kind = "oscillatory"
alpha = 2.0
eps = 0.1
b = { freq = [1.0, 1.0] }
psi = { kind = "one" }

[[chart]]
bounds = [[0.2, 0.8], [0.2, 0.8], [-0.9, -0.2]]
"#;
        let d = parse_domain_spec(text).unwrap();
        assert_eq!(d.atlas().s(), 2);
        assert_eq!(d.atlas().s_prime(), 1);
        assert!(close(d.profile(0).value([0.0, 0.0]), 0.01, 1e-15));
    }

    #[test]
    fn domain_spec_errors_carry_lines() {
        let text = "[atlas]\nrho = 0.05\n\n[[chart]]\nbounds = [[0.0, 1.0], [0.0, 1.0], [-1.0, 1.0]]\nboundary = true\nprofile = { kind = \"wobbly\" }\n";
        match parse_domain_spec(text) {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        let text = "[atlas]\nrho = 0.05\n\n[[chart]]\nbounds = [[0.0, 1.0], [1.0, 0.5], [-1.0, 1.0]]\n";
        match parse_domain_spec(text) {
            Err(GeometryError::Parse { line, message }) => {
                assert_eq!(line, 4, "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn bump_stays_in_unit_interval(t in -1.5f64..1.5) {
            let (v, _, _) = bump1d(t);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn oscillatory_value_is_product_formula(x in 0.0f64..1.0, y in 0.0f64..1.0, eps in 0.02f64..0.5, alpha in 1.0f64..3.0) {
            let b = CosProduct::new([1.0, 1.0]);
            let psi = Cutoff::Bump { center: [0.5, 0.5], half_width: [0.5, 0.5] };
            let g = ProfileFunction::Oscillatory { alpha, eps, b, psi };
            let expected = eps.powf(alpha) * b.eval([x / eps, y / eps]).0 * psi.eval([x, y]).0;
            prop_assert!((g.value([x, y]) - expected).abs() <= 1e-15);
        }
    }
}
