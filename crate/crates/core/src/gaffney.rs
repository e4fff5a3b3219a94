//! Sufficient-condition analytics for the Gaffney inequality: Dini
//! integrals of gradient moduli of continuity, their scaling under
//! oscillating profiles, the localized `D_{3/2}` seminorm entering the Maz'ya
//! criterion, and a discrete Gaffney-constant probe on finite-element spaces.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::atlas::{CosProduct, Cutoff, ProfileFunction};
use crate::error::GaffneyError;
use crate::fem::{assemble_mass, assemble_stiffness, FemSpace};
use crate::linalg::{SparseSymOp, Spectrum};
use crate::quadrature::{adaptive_gk, gauss_legendre_interval, KahanSum};

/// `e⁻²`, where the logarithmic modulus switches to its constant continuation.
const LOG_SWITCH: f64 = 0.135_335_283_236_612_7;

/// Non-decreasing modulus of continuity `ω(t)`, `t > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusOfContinuity {
    /// `min(c t^β, cap)`; no cap when `cap` is absent.
    Power {
        c: f64,
        beta: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `min(c t, cap)`.
    LipschitzCapped {
        c: f64,
        #[serde(default = "one")]
        cap: f64,
    },
    /// `c / |log t|` for `t ≤ e⁻²`, constant `c / 2` beyond.
    Log {
        #[serde(default = "one")]
        c: f64,
    },
    /// `ε^{α-1} ω_b(t / ε)`.
    Scaled {
        alpha: f64,
        eps: f64,
        base: Box<ModulusOfContinuity>,
    },
}

fn one() -> f64 {
    1.0
}

impl ModulusOfContinuity {
    /// `min(t^β, 1)`.
    pub fn capped_power(beta: f64) -> Self {
        ModulusOfContinuity::Power {
            c: 1.0,
            beta,
            cap: Some(1.0),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        match self {
            ModulusOfContinuity::Power { c, beta, cap } => {
                let v = c * t.powf(*beta);
                cap.map_or(v, |m| v.min(m))
            }
            ModulusOfContinuity::LipschitzCapped { c, cap } => (c * t).min(*cap),
            ModulusOfContinuity::Log { c } => {
                if t <= LOG_SWITCH {
                    c / t.ln().abs()
                } else {
                    0.5 * c
                }
            }
            ModulusOfContinuity::Scaled { alpha, eps, base } => eps.powf(alpha - 1.0) * base.eval(t / eps),
        }
    }

    /// Parameter validation: nonnegative scales, positive exponents and ε.
    pub fn validate(&self) -> Result<(), GaffneyError> {
        let bad = |m: &str| Err(GaffneyError::InvalidInput(m.to_string()));
        match self {
            ModulusOfContinuity::Power { c, beta, cap } => {
                if !(*c >= 0.0) || !(*beta > 0.0) || cap.is_some_and(|m| !(m > 0.0)) {
                    return bad("power modulus needs c >= 0, beta > 0 and a positive cap");
                }
            }
            ModulusOfContinuity::LipschitzCapped { c, cap } => {
                if !(*c >= 0.0) || !(*cap > 0.0) {
                    return bad("Lipschitz modulus needs c >= 0 and cap > 0");
                }
            }
            ModulusOfContinuity::Log { c } => {
                if !(*c >= 0.0) {
                    return bad("log modulus needs c >= 0");
                }
            }
            ModulusOfContinuity::Scaled { alpha, eps, base } => {
                if !(*eps > 0.0) || !alpha.is_finite() {
                    return bad("scaled modulus needs eps > 0 and finite alpha");
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Whether ω is non-decreasing on a logarithmic sample grid of `[t_min, t_max]`.
    pub fn is_non_decreasing(&self, t_min: f64, t_max: f64, samples: usize) -> bool {
        let n = samples.max(2);
        let ratio = (t_max / t_min).ln();
        let mut prev = self.eval(t_min);
        (1..n).all(|i| {
            let t = t_min * (ratio * i as f64 / (n - 1) as f64).exp();
            let v = self.eval(t);
            let ok = v >= prev * (1.0 - 1e-14);
            prev = v;
            ok
        })
    }

    /// Exact `∫_0^∞ (ω(t)/t)² dt` where known in closed form; infinite when
    /// the integral diverges at zero; `None` for the logarithmic kind.
    pub fn closed_form_dini(&self) -> Option<f64> {
        match self {
            ModulusOfContinuity::Power { c, beta, cap } => {
                if *c == 0.0 {
                    return Some(0.0);
                }
                if *beta <= 0.5 {
                    return Some(f64::INFINITY);
                }
                let m = (*cap)?;
                let t_star = (m / c).powf(1.0 / beta);
                Some(c * c * t_star.powf(2.0 * beta - 1.0) / (2.0 * beta - 1.0) + m * m / t_star)
            }
            ModulusOfContinuity::LipschitzCapped { c, cap } => Some(2.0 * c * cap),
            ModulusOfContinuity::Log { .. } => Some(f64::INFINITY),
            ModulusOfContinuity::Scaled { alpha, eps, base } => {
                base.closed_form_dini().map(|v| eps.powf(2.0 * alpha - 3.0) * v)
            }
        }
    }
}

/// Outcome of [`dini_integral`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiniResult {
    /// Estimate of `∫_0^∞ (ω/t)²`, `None` when flagged divergent.
    pub value: Option<f64>,
    /// Quadrature over `[t_min, t_max]`.
    pub quadrature: f64,
    /// Contribution of the halving steps below `t_min`.
    pub halving_part: f64,
    /// Power-law tail estimates below the last halving point and above `t_max`.
    pub tail_estimate: f64,
    pub divergent: bool,
    /// Running integrals after each halving of the lower limit.
    pub halvings: Vec<f64>,
}

/// Number of halvings of the lower limit used by the divergence test.
pub const DINI_HALVINGS: usize = 10;
/// Growth factor of the running integral that counts as divergence when it
/// is exceeded on two consecutive halvings.
pub const DINI_GROWTH_FACTOR: f64 = 1.5;
/// Ratio of consecutive halving increments that counts as divergence when
/// reached twice in a row. Power moduli `t^β` have ratio `2^{1-2β}`, so the
/// value flags `β ≤ 0.525`, including the logarithmically divergent `β = 1/2`.
pub const DINI_INCREMENT_RATIO: f64 = 0.966;

fn log_integral<F: Fn(f64) -> f64>(omega: &F, a: f64, b: f64, panels: usize) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    // Substituting t = e^s turns (ω/t)² dt into ω(e^s)² e^{-s} ds.
    let f = |s: f64| {
        let t = s.exp();
        let w = omega(t);
        w * w / t
    };
    adaptive_gk(f, a.ln(), b.ln(), panels, 1e-15, 1e-12, 200_000).value
}

/// `∫ (ω(t)/t)² dt` with divergence detection at zero.
///
/// The integral over `[t_min, t_max]` uses adaptive Gauss-Kronrod quadrature
/// in `log t` with `quad_n` initial panels. The lower limit is then halved
/// [`DINI_HALVINGS`] times; divergence is flagged when the running value
/// grows by more than [`DINI_GROWTH_FACTOR`] on two consecutive halvings or
/// when consecutive increments keep a ratio of at least
/// [`DINI_INCREMENT_RATIO`] twice in a row. Otherwise the remaining parts
/// are closed with power-law tails fitted to ω at the end points; above
/// `t_max` an exponent of at least 1/2 is treated as a constant continuation,
/// since only integrability at zero matters.
pub fn dini_integral(omega: &ModulusOfContinuity, t_min: f64, t_max: f64, quad_n: usize) -> DiniResult {
    assert!(t_min > 0.0 && t_max > t_min, "need 0 < t_min < t_max");
    let w = |t: f64| omega.eval(t);
    let main = log_integral(&w, t_min, t_max, quad_n.max(1));
    let mut running = main;
    let mut halvings = Vec::with_capacity(DINI_HALVINGS);
    let mut growth_hits = 0;
    let mut ratio_hits = 0;
    let mut prev_inc: Option<f64> = None;
    let mut divergent = false;
    let mut lo = t_min;
    for _ in 0..DINI_HALVINGS {
        let inc = log_integral(&w, 0.5 * lo, lo, 2);
        let next = running + inc;
        growth_hits = if running > 0.0 && next > DINI_GROWTH_FACTOR * running {
            growth_hits + 1
        } else {
            0
        };
        ratio_hits = match prev_inc {
            Some(p) if p > 0.0 && inc >= DINI_INCREMENT_RATIO * p => ratio_hits + 1,
            _ => 0,
        };
        prev_inc = Some(inc);
        running = next;
        lo *= 0.5;
        halvings.push(running);
        if growth_hits >= 2 || ratio_hits >= 2 {
            divergent = true;
            break;
        }
    }
    let halving_part = running - main;
    let mut tail = 0.0;
    if !divergent {
        let (a, b) = (w(lo), w(0.5 * lo));
        if a > 0.0 {
            let p = if b > 0.0 { (a / b).log2() } else { f64::INFINITY };
            if p <= 0.5 {
                divergent = true;
            } else if p.is_finite() {
                tail += a * a / (lo * (2.0 * p - 1.0));
            }
        }
        let (c, d) = (w(t_max), w(2.0 * t_max));
        if c > 0.0 {
            let q = if d > 0.0 { (d / c).log2() } else { 0.0 };
            tail += if q < 0.5 {
                c * c / (t_max * (1.0 - 2.0 * q))
            } else {
                c * c / t_max
            };
        }
    }
    DiniResult {
        value: (!divergent).then_some(running + tail),
        quadrature: main,
        halving_part,
        tail_estimate: tail,
        divergent,
        halvings,
    }
}

/// Per-ε Dini values of `ε^{α-1} ω_b(t/ε)` and the fitted log-log slope.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingLawReport {
    pub alpha: f64,
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares slope of `log value` against `log ε`.
    pub slope: f64,
    /// `2α - 3`.
    pub expected: f64,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Dini integrals of the scaled moduli `ε^{α-1} ω_b(·/ε)` along `eps_list`.
pub fn scaling_law_check(
    alpha: f64,
    omega_b: &ModulusOfContinuity,
    eps_list: &[f64],
) -> Result<ScalingLawReport, GaffneyError> {
    if eps_list.len() < 2 || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(GaffneyError::InvalidInput("need at least two positive eps values".into()));
    }
    omega_b.validate()?;
    let mut values = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let w = ModulusOfContinuity::Scaled {
            alpha,
            eps,
            base: Box::new(omega_b.clone()),
        };
        let r = dini_integral(&w, 1e-6 * eps, 1e6 * eps, 32);
        let v = r.value.ok_or_else(|| {
            GaffneyError::InvalidInput(format!("Dini integral of the base modulus diverges (eps = {eps})"))
        })?;
        values.push(v);
    }
    let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(ScalingLawReport {
        alpha,
        eps: eps_list.to_vec(),
        values,
        slope: fit_slope(&lx, &ly),
        expected: 2.0 * alpha - 3.0,
    })
}

/// Integration set `E`, centred at the base point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ESpec {
    Disk { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl ESpec {
    fn radii(&self) -> (f64, f64) {
        match *self {
            ESpec::Disk { radius } => (0.0, radius),
            ESpec::Annulus { inner, outer } => (inner, outer),
        }
    }

    /// `|E|` as an `(N-1)`-dimensional measure: area for `N = 3`, length for `N = 2`.
    pub fn measure(&self, n_dim: usize) -> f64 {
        let (a, b) = self.radii();
        if n_dim == 2 {
            2.0 * (b - a)
        } else {
            PI * (b * b - a * a)
        }
    }
}

/// Relative difference between two refinements above which the `D_{3/2}`
/// quadrature is reported as nonconvergent.
pub const D32_REFINEMENT_TOL: f64 = 0.05;

fn grad2(g: &ProfileFunction, x: [f64; 2]) -> Vector2<f64> {
    g.eval(x).gradient
}

/// `D_{3/2}(g, B_ρ)(x)²` with `r = ρu²` in the radial integral.
fn d32_squared_at(g: &ProfileFunction, x: [f64; 2], rho: f64, n: usize, n_dim: usize) -> f64 {
    let gx = grad2(g, x);
    let nodes = gauss_legendre_interval(0.0, 1.0, n);
    let mut sum = KahanSum::default();
    if n_dim == 2 {
        for &(u, wu) in &nodes {
            let r = rho * u * u;
            let jac = 2.0 / (rho * u * u * u);
            for s in [-1.0, 1.0] {
                let d = gx[0] - grad2(g, [x[0] + s * r, x[1]])[0];
                sum.add(wu * jac * d * d);
            }
        }
        return sum.value();
    }
    let m = 2 * n;
    let dth = 2.0 * PI / m as f64;
    for k in 0..m {
        let (sn, cs) = (dth * k as f64).sin_cos();
        for &(u, wu) in &nodes {
            let r = rho * u * u;
            let jac = 2.0 / (rho * u * u * u);
            let d = gx - grad2(g, [x[0] + r * cs, x[1] + r * sn]);
            sum.add(dth * wu * jac * d.norm_squared());
        }
    }
    sum.value()
}

fn d32_l2_raw(g: &ProfileFunction, xbar: [f64; 2], rho: f64, e: ESpec, n: usize, n_dim: usize) -> f64 {
    let (a, b) = e.radii();
    let radial = gauss_legendre_interval(a, b, n);
    let mut sum = KahanSum::default();
    if n_dim == 2 {
        for &(r, wr) in &radial {
            for s in [-1.0, 1.0] {
                sum.add(wr * d32_squared_at(g, [xbar[0] + s * r, xbar[1]], rho, n, 2));
            }
        }
        return sum.value().max(0.0).sqrt();
    }
    let m = 2 * n;
    let dth = 2.0 * PI / m as f64;
    for k in 0..m {
        let (sn, cs) = (dth * (k as f64 + 0.5)).sin_cos();
        for &(r, wr) in &radial {
            let x = [xbar[0] + r * cs, xbar[1] + r * sn];
            sum.add(dth * wr * r * d32_squared_at(g, x, rho, n, 3));
        }
    }
    sum.value().max(0.0).sqrt()
}

/// `‖D_{3/2}(g, B_ρ)‖_{L²(E)}` for `E` centred at `x̄`, with
/// `D_{3/2}(g, B_ρ)(x) = (∫_{B_ρ(x)} |∇g(x) - ∇g(y)|² |x - y|^{-N} dy)^{1/2}`.
///
/// `N = 3` treats `g` as a function on the plane. `N = 2` uses the slice
/// `x₁ ↦ g(x₁, x̄₂)` and its derivative. The double integral is computed with
/// `quad_n` and `2 quad_n` nodes per direction; the finer value is returned
/// unless the two differ by more than [`D32_REFINEMENT_TOL`].
pub fn d32_seminorm(
    g: &ProfileFunction,
    xbar: [f64; 2],
    rho: f64,
    e: ESpec,
    quad_n: usize,
    n_dim: usize,
) -> Result<f64, GaffneyError> {
    check_d32_args(rho, e, quad_n, n_dim)?;
    let coarse = d32_l2_raw(g, xbar, rho, e, quad_n, n_dim);
    let fine = d32_l2_raw(g, xbar, rho, e, 2 * quad_n, n_dim);
    if !fine.is_finite() || (fine - coarse).abs() > D32_REFINEMENT_TOL * fine.abs().max(1e-300) {
        if fine.abs() < 1e-300 && coarse.abs() < 1e-300 {
            return Ok(0.0);
        }
        return Err(GaffneyError::QuadratureNonconvergent { coarse, fine });
    }
    Ok(fine)
}

fn check_d32_args(rho: f64, e: ESpec, quad_n: usize, n_dim: usize) -> Result<(), GaffneyError> {
    if !(rho > 0.0) {
        return Err(GaffneyError::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    if !(n_dim == 2 || n_dim == 3) {
        return Err(GaffneyError::InvalidInput(format!("N must be 2 or 3, got {n_dim}")));
    }
    if quad_n < 2 {
        return Err(GaffneyError::InvalidInput("quad_n must be at least 2".into()));
    }
    let (a, b) = e.radii();
    if !(a >= 0.0 && b > a && b <= rho) {
        return Err(GaffneyError::InvalidInput(format!("E must lie in B_rho: radii ({a}, {b}), rho {rho}")));
    }
    Ok(())
}

/// Components of the Maz'ya criterion at one radius.
#[derive(Clone, Debug, PartialEq)]
pub struct MazyaCriterionReport {
    pub profile: String,
    pub rho: f64,
    /// `sup_E ‖D_{3/2}‖_{L²(E)} / |E|^{(N-2)/(2(N-1))}` (or `‖·‖ |log|E||^{1/2}` for
    /// `N = 2`) over disks of radii `ρ/4, ρ/2, ρ`; `None` when the quadrature
    /// does not stabilize.
    pub d32_term: Option<f64>,
    /// Sampled `‖∇g‖_{L∞(B_ρ)}`.
    pub grad_sup: f64,
    /// Comparison threshold supplied by the user.
    pub delta: f64,
}

impl MazyaCriterionReport {
    pub fn nonconvergent(&self) -> bool {
        self.d32_term.is_none()
    }

    /// `d32_term + grad_sup`, when both are available.
    pub fn total(&self) -> Option<f64> {
        self.d32_term.map(|d| d + self.grad_sup)
    }
}

/// Sampled `sup |∇g|` on the ball (or segment for `N = 2`) of radius `rho`.
pub fn grad_sup(g: &ProfileFunction, xbar: [f64; 2], rho: f64, n: usize, n_dim: usize) -> f64 {
    let mut best = grad2(g, xbar).norm();
    if n_dim == 2 {
        for i in 0..=2 * n {
            let x = xbar[0] - rho + rho * i as f64 / n as f64;
            best = best.max(grad2(g, [x, xbar[1]])[0].abs());
        }
        return best;
    }
    let m = 4 * n;
    for i in 1..=n {
        let r = rho * i as f64 / n as f64;
        for k in 0..m {
            let (sn, cs) = (2.0 * PI * k as f64 / m as f64).sin_cos();
            best = best.max(grad2(g, [xbar[0] + r * cs, xbar[1] + r * sn]).norm());
        }
    }
    best
}

/// Maz'ya criterion components at `x̄` for each radius in `rho_list`.
pub fn mazya_criterion(
    g: &ProfileFunction,
    xbar: [f64; 2],
    delta: f64,
    rho_list: &[f64],
    n_dim: usize,
    quad_n: usize,
) -> Result<Vec<MazyaCriterionReport>, GaffneyError> {
    let mut out = Vec::with_capacity(rho_list.len());
    for &rho in rho_list {
        let mut term: Option<f64> = Some(0.0);
        for frac in [0.25, 0.5, 1.0] {
            let e = ESpec::Disk { radius: frac * rho };
            match d32_seminorm(g, xbar, rho, e, quad_n, n_dim) {
                Ok(v) => {
                    let m = e.measure(n_dim);
                    let normalized = if n_dim == 2 {
                        v * m.ln().abs().sqrt()
                    } else {
                        v / m.powf((n_dim as f64 - 2.0) / (2.0 * (n_dim as f64 - 1.0)))
                    };
                    term = term.map(|t| t.max(normalized));
                }
                Err(GaffneyError::QuadratureNonconvergent { .. }) => term = None,
                Err(e) => return Err(e),
            }
        }
        out.push(MazyaCriterionReport {
            profile: g.kind_name().to_string(),
            rho,
            d32_term: term,
            grad_sup: grad_sup(g, xbar, rho, quad_n, n_dim),
            delta,
        });
    }
    Ok(out)
}

fn cos_product_bounds(b: &CosProduct) -> (f64, f64, f64) {
    let k1 = 2.0 * PI * b.freq[0];
    let k2 = 2.0 * PI * b.freq[1];
    let a = b.amplitude.abs();
    (
        b.offset.abs() + a,
        a * (k1 * k1 + k2 * k2).sqrt(),
        a * (k1 * k1 + k2 * k2),
    )
}

fn cutoff_bounds(psi: &Cutoff) -> (f64, f64, f64) {
    match psi {
        Cutoff::One => (1.0, 0.0, 0.0),
        Cutoff::Bump { center, half_width } => {
            let n = 201;
            let mut g: f64 = 0.0;
            let mut h: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = [
                        center[0] + half_width[0] * (2.0 * i as f64 / (n - 1) as f64 - 1.0),
                        center[1] + half_width[1] * (2.0 * j as f64 / (n - 1) as f64 - 1.0),
                    ];
                    let (_, gr, he) = psi.eval(x);
                    g = g.max(gr.norm());
                    h = h.max(he.norm());
                }
            }
            (1.0, g, h)
        }
    }
}

/// Gradient modulus of continuity of a catalog profile, when one is known:
/// zero for constants, a Lipschitz-capped bound for oscillatory profiles, a
/// power modulus for Hölder powers and the logarithmic modulus for the
/// counterexample. Oscillatory profiles without a cutoff return the exact
/// scaled form `ε^{α-1} ω_b(t/ε)`.
pub fn gradient_modulus(g: &ProfileFunction) -> Option<ModulusOfContinuity> {
    match g {
        ProfileFunction::Constant { .. } => Some(ModulusOfContinuity::Power {
            c: 0.0,
            beta: 1.0,
            cap: None,
        }),
        ProfileFunction::Oscillatory { alpha, eps, b, psi } => {
            let (bb, bg, bh) = cos_product_bounds(b);
            if *psi == Cutoff::One {
                return Some(ModulusOfContinuity::Scaled {
                    alpha: *alpha,
                    eps: *eps,
                    base: Box::new(ModulusOfContinuity::LipschitzCapped { c: bh, cap: 2.0 * bg }),
                });
            }
            let (_, pg, ph) = cutoff_bounds(psi);
            let ea = eps.powf(*alpha);
            let lip = ea / (eps * eps) * bh + 2.0 * ea / eps * bg * pg + ea * bb * ph;
            let sup = ea / eps * bg + ea * bb * pg;
            Some(ModulusOfContinuity::LipschitzCapped {
                c: lip,
                cap: (2.0 * sup).max(f64::MIN_POSITIVE),
            })
        }
        ProfileFunction::HoelderPower { c, beta } => Some(ModulusOfContinuity::Power {
            c: c.abs() * (1.0 + beta) * 2f64.powf(1.0 - beta.min(1.0)),
            beta: beta.min(1.0),
            cap: None,
        }),
        ProfileFunction::LogCounterexample => Some(ModulusOfContinuity::Log { c: 1.0 }),
        ProfileFunction::Scaled { factor, profile } => gradient_modulus(profile).map(|m| m.scaled_by(factor.abs())),
        _ => None,
    }
}

impl ModulusOfContinuity {
    /// `factor · ω` for `factor ≥ 0`.
    pub fn scaled_by(self, factor: f64) -> ModulusOfContinuity {
        match self {
            ModulusOfContinuity::Power { c, beta, cap } => ModulusOfContinuity::Power {
                c: c * factor,
                beta,
                cap: cap.map(|v| v * factor),
            },
            ModulusOfContinuity::LipschitzCapped { c, cap } => ModulusOfContinuity::LipschitzCapped {
                c: c * factor,
                cap: cap * factor,
            },
            ModulusOfContinuity::Log { c } => ModulusOfContinuity::Log { c: c * factor },
            ModulusOfContinuity::Scaled { alpha, eps, base } => ModulusOfContinuity::Scaled {
                alpha,
                eps,
                base: Box::new(base.scaled_by(factor)),
            },
        }
    }
}

/// Gaffney ratios `(uᵀH¹u / uᵀ(M + A_{τ=1})u)^{1/2}` for every eigenvector.
pub fn gaffney_ratios(space: &FemSpace, spectrum: &Spectrum, h1: &SparseSymOp) -> Result<Vec<f64>, GaffneyError> {
    if h1.dim() != space.num_dofs() || spectrum.eigenvectors.nrows() != space.num_dofs() {
        return Err(GaffneyError::InvalidInput("H1 matrix, spectrum and space sizes differ".into()));
    }
    let m = assemble_mass(space)?;
    let a = assemble_stiffness(space, 1.0)?;
    let hx = h1.mul_dense(&spectrum.eigenvectors);
    let mx = m.mul_dense(&spectrum.eigenvectors);
    let ax = a.mul_dense(&spectrum.eigenvectors);
    Ok((0..spectrum.len())
        .map(|i| {
            let u = spectrum.eigenvectors.column(i);
            let num = u.dot(&hx.column(i));
            let den = u.dot(&mx.column(i)) + u.dot(&ax.column(i));
            (num / den).max(0.0).sqrt()
        })
        .collect())
}

/// Largest Gaffney ratio over the computed eigenvectors, a lower bound for
/// the discrete Gaffney constant of the space.
pub fn discrete_gaffney_constant(
    space: &FemSpace,
    spectrum: &Spectrum,
    h1: &SparseSymOp,
) -> Result<f64, GaffneyError> {
    Ok(gaffney_ratios(space, spectrum, h1)?.into_iter().fold(0.0, f64::max))
}

/// Version line of the Maz'ya criterion CSV.
pub const MAZYA_CSV_VERSION: &str = "# curlcurl-mazya v1";

/// Writes criterion rows as CSV with columns
/// `profile,rho,d32_term,grad_sup,delta,dini_value_or_flag`.
///
/// `d32_term` is `nonconvergent` when flagged. The last column holds the
/// Dini value of the row's gradient modulus, `divergent`, or `unknown`.
pub fn write_mazya_csv<W: Write>(
    mut w: W,
    rows: &[(MazyaCriterionReport, Option<DiniResult>)],
) -> std::io::Result<()> {
    writeln!(w, "{MAZYA_CSV_VERSION}")?;
    writeln!(w, "profile,rho,d32_term,grad_sup,delta,dini_value_or_flag")?;
    for (r, dini) in rows {
        let d32 = r.d32_term.map_or_else(|| "nonconvergent".to_string(), |v| format!("{v:.12e}"));
        let dv = match dini {
            None => "unknown".to_string(),
            Some(d) => d.value.map_or_else(|| "divergent".to_string(), |v| format!("{v:.12e}")),
        };
        writeln!(w, "{},{},{d32},{:.12e},{},{dv}", r.profile, r.rho, r.grad_sup, r.delta)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::Rect2;
    use crate::fem::{assemble_h1, build_space};
    use crate::linalg::{solve_gevp, EigenConfig};
    use crate::mesh::mesh_box;
    use proptest::prelude::*;

    fn oscillatory(alpha: f64, eps: f64) -> ProfileFunction {
        ProfileFunction::Oscillatory {
            alpha,
            eps,
            b: CosProduct {
                freq: [1.0, 1.0],
                amplitude: 1.0,
                offset: 0.0,
            },
            psi: Cutoff::One,
        }
    }

    #[test]
    fn capped_power_closed_forms() {
        for beta in [0.6, 0.75, 0.9] {
            let w = ModulusOfContinuity::capped_power(beta);
            let r = dini_integral(&w, 1e-8, 1e4, 32);
            let exact = 1.0 / (2.0 * beta - 1.0) + 1.0;
            assert!(!r.divergent);
            assert!((r.value.unwrap() - exact).abs() < 1e-6, "beta {beta}: {:?}", r.value);
            assert!((w.closed_form_dini().unwrap() - exact).abs() < 1e-13 * exact);
        }
    }

    #[test]
    fn three_quarter_power_gives_three() {
        let r = dini_integral(&ModulusOfContinuity::capped_power(0.75), 1e-6, 1e2, 16);
        assert!((r.value.unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn square_root_modulus_is_divergent() {
        let w = ModulusOfContinuity::Power {
            c: 1.0,
            beta: 0.5,
            cap: None,
        };
        let r = dini_integral(&w, 1e-6, 1.0, 16);
        assert!(r.divergent);
        assert_eq!(r.value, None);
    }

    #[test]
    fn log_counterexample_is_divergent() {
        let r = dini_integral(&ModulusOfContinuity::Log { c: 1.0 }, 1e-6, 1.0, 16);
        assert!(r.divergent);
        let g = gradient_modulus(&ProfileFunction::LogCounterexample).unwrap();
        assert!(dini_integral(&g, 1e-8, 1.0, 16).divergent);
    }

    #[test]
    fn lipschitz_capped_closed_form() {
        let w = ModulusOfContinuity::LipschitzCapped { c: 3.0, cap: 0.5 };
        let r = dini_integral(&w, 1e-7, 10.0, 16);
        assert!((r.value.unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn halving_alpha_two_halves_the_value() {
        let base = ModulusOfContinuity::LipschitzCapped { c: 1.0, cap: 1.0 };
        let r = scaling_law_check(2.0, &base, &[0.1, 0.05]).unwrap();
        assert!((r.values[1] / r.values[0] - 0.5).abs() < 0.03 * 0.5);
    }

    #[test]
    fn critical_exponent_is_eps_independent() {
        let base = ModulusOfContinuity::LipschitzCapped { c: 2.0, cap: 1.0 };
        let r = scaling_law_check(1.5, &base, &[0.2, 0.1, 0.05]).unwrap();
        for v in &r.values {
            assert!((v / r.values[0] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn small_alpha_values_grow() {
        let base = ModulusOfContinuity::LipschitzCapped { c: 1.0, cap: 1.0 };
        let r = scaling_law_check(1.2, &base, &[0.2, 0.1, 0.05]).unwrap();
        assert!(r.values.windows(2).all(|w| w[1] > w[0]));
        assert!((r.slope + 0.6).abs() < 0.05);
    }

    #[test]
    fn fitted_slopes_match_the_exponent() {
        let base = ModulusOfContinuity::LipschitzCapped { c: 1.0, cap: 1.0 };
        for alpha in [1.6, 2.0, 2.5] {
            let r = scaling_law_check(alpha, &base, &[0.2, 0.1, 0.05, 0.025]).unwrap();
            assert!((r.slope - r.expected).abs() < 0.05, "alpha {alpha}: slope {}", r.slope);
        }
    }

    #[test]
    fn affine_profile_has_zero_seminorm() {
        let g = ProfileFunction::Constant { c: 0.3 };
        for n_dim in [2, 3] {
            let v = d32_seminorm(&g, [0.5, 0.5], 0.1, ESpec::Disk { radius: 0.05 }, 8, n_dim).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn hoelder_gradient_stays_below_the_bound() {
        let beta = 0.75;
        let g = ProfileFunction::HoelderPower { c: 1.0, beta };
        let ModulusOfContinuity::Power { c, .. } = gradient_modulus(&g).unwrap() else {
            panic!("power modulus expected")
        };
        let rho: f64 = 0.1;
        let e = ESpec::Disk { radius: 0.05 };
        let v = d32_seminorm(&g, [0.0, 0.0], rho, e, 12, 3).unwrap();
        // ∫_E D² ≤ |E| 2π ∫_0^ρ ω(r)² r⁻² dr = |E| 2π c² ρ^{2β-1} / (2β-1).
        let bound = (e.measure(3) * 2.0 * PI * c * c * rho.powf(2.0 * beta - 1.0) / (2.0 * beta - 1.0)).sqrt();
        assert!(v > 0.0 && v <= bound, "{v} vs {bound}");
    }

    #[test]
    fn oscillatory_seminorm_is_refinement_stable() {
        let g = oscillatory(2.0, 0.1);
        let e = ESpec::Disk { radius: 0.05 };
        let a = d32_seminorm(&g, [0.5, 0.5], 0.05, e, 16, 3).unwrap();
        let b = d32_seminorm(&g, [0.5, 0.5], 0.05, e, 32, 3).unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() < 0.02 * b);
    }

    #[test]
    fn seminorm_grows_with_the_ball() {
        let g = oscillatory(2.0, 0.1);
        let e = ESpec::Disk { radius: 0.02 };
        let vals: Vec<f64> = [0.02, 0.05, 0.1]
            .iter()
            .map(|&rho| d32_seminorm(&g, [0.3, 0.6], rho, e, 16, 3).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{vals:?}");
    }

    #[test]
    fn zero_profile_gives_zero_components() {
        let g = ProfileFunction::Constant { c: 0.0 };
        for r in mazya_criterion(&g, [0.5, 0.5], 0.1, &[0.2, 0.1], 3, 8).unwrap() {
            assert_eq!(r.d32_term, Some(0.0));
            assert_eq!(r.grad_sup, 0.0);
            assert!(r.total().unwrap() < r.delta);
        }
    }

    #[test]
    fn oscillatory_components_decrease_with_rho() {
        let g = oscillatory(2.0, 0.1);
        let reps = mazya_criterion(&g, [0.5, 0.5], 0.1, &[0.2, 0.1, 0.05], 3, 16).unwrap();
        let totals: Vec<f64> = reps.iter().map(|r| r.total().unwrap()).collect();
        assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");
    }

    #[test]
    fn log_counterexample_is_flagged_near_the_singularity() {
        let g = ProfileFunction::LogCounterexample;
        let reps = mazya_criterion(&g, [0.0, 0.5], 0.1, &[0.1], 2, 8).unwrap();
        assert!(reps[0].grad_sup.is_finite());
        assert!(reps[0].nonconvergent(), "{reps:?}");
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let g = ProfileFunction::Constant { c: 0.0 };
        let e = ESpec::Disk { radius: 0.2 };
        assert!(matches!(d32_seminorm(&g, [0.0; 2], 0.1, e, 8, 3), Err(GaffneyError::InvalidInput(_))));
        assert!(matches!(d32_seminorm(&g, [0.0; 2], 0.3, e, 8, 4), Err(GaffneyError::InvalidInput(_))));
    }

    #[test]
    fn gaffney_ratio_dominates_the_l2_part() {
        let mesh = mesh_box(Rect2::new((0.0, 1.0), (0.0, 1.0)), 0.0, 1.0, [2, 2, 2]).unwrap();
        let space = build_space(&mesh, 2).unwrap();
        let a = assemble_stiffness(&space, 1.0).unwrap();
        let m = assemble_mass(&space).unwrap();
        let h1 = assemble_h1(&space).unwrap();
        let s = solve_gevp(&a, &m, &EigenConfig { count: 4, ..Default::default() }).unwrap();
        let ratios = gaffney_ratios(&space, &s, &h1).unwrap();
        for (i, r) in ratios.iter().enumerate() {
            let lam = s.eigenvalues[i];
            // With uᵀMu = 1 and uᵀAu = λ the L² part alone gives (1/(1+λ))^{1/2}.
            assert!(*r >= (1.0 / (1.0 + lam)).sqrt() - 1e-12);
        }
        let c = discrete_gaffney_constant(&space, &s, &h1).unwrap();
        assert_eq!(c, ratios.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn csv_reports_flags() {
        let rep = MazyaCriterionReport {
            profile: "log_counterexample".into(),
            rho: 0.1,
            d32_term: None,
            grad_sup: 0.5,
            delta: 0.1,
        };
        let dini = dini_integral(&ModulusOfContinuity::Log { c: 1.0 }, 1e-6, 1.0, 8);
        let mut out = Vec::new();
        write_mazya_csv(&mut out, &[(rep, Some(dini))]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MAZYA_CSV_VERSION);
        assert_eq!(lines[1], "profile,rho,d32_term,grad_sup,delta,dini_value_or_flag");
        assert_eq!(lines[2], "log_counterexample,0.1,nonconvergent,5.000000000000e-1,0.1,divergent");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn seminorm_is_homogeneous(c in -5.0f64..5.0) {
            let g = oscillatory(2.0, 0.2);
            let cg = ProfileFunction::Scaled { factor: c, profile: Box::new(g.clone()) };
            let e = ESpec::Disk { radius: 0.03 };
            let v = d32_seminorm(&g, [0.4, 0.4], 0.05, e, 8, 3).unwrap();
            let w = d32_seminorm(&cg, [0.4, 0.4], 0.05, e, 8, 3).unwrap();
            prop_assert!((w - c.abs() * v).abs() <= 1e-10 * v.max(1.0));
        }

        #[test]
        fn moduli_are_non_decreasing(beta in 0.1f64..1.0, c in 0.1f64..10.0, eps in 0.01f64..1.0) {
            let kinds = [
                ModulusOfContinuity::Power { c, beta, cap: Some(1.0) },
                ModulusOfContinuity::LipschitzCapped { c, cap: 1.0 },
                ModulusOfContinuity::Log { c },
                ModulusOfContinuity::Scaled { alpha: 2.0, eps, base: Box::new(ModulusOfContinuity::capped_power(beta)) },
            ];
            for w in &kinds {
                prop_assert!(w.is_non_decreasing(1e-9, 1e3, 400));
                prop_assert!(w.eval(1e-300) < 0.6 * w.eval(1e-150));
            }
        }
    }
}
