//! Quadrature rules: Gauss-Legendre on intervals, collapsed Gauss rules on
//! the reference tetrahedron, and adaptive Gauss-Kronrod integration.

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(&w).map(|(&xi, &wi)| (mid + half * xi, half * wi)).collect()
}

/// Quadrature point on the reference tetrahedron with vertices `0, e1, e2, e3`,
/// stored as barycentric coordinates `(λ0, λ1, λ2, λ3)`. Weights sum to 1/6.
#[derive(Clone, Copy, Debug)]
pub struct TetPoint {
    pub bary: [f64; 4],
    pub weight: f64,
}

/// Collapsed (Duffy) tensor Gauss rule with `n` points per direction. It
/// integrates polynomials of total degree `2n - 3` exactly.
pub fn tet_rule(n: usize) -> Vec<TetPoint> {
    let (x, w) = gauss_legendre(n);
    let map = |t: f64| 0.5 * (t + 1.0);
    let mut out = Vec::with_capacity(n * n * n);
    for (i, &u) in x.iter().enumerate() {
        for (j, &v) in x.iter().enumerate() {
            for (k, &s) in x.iter().enumerate() {
                let (u, v, s) = (map(u), map(v), map(s));
                let px = u;
                let py = v * (1.0 - u);
                let pz = s * (1.0 - u) * (1.0 - v);
                let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                let weight = w[i] * w[j] * w[k] * 0.125 * jac;
                out.push(TetPoint {
                    bary: [1.0 - px - py - pz, px, py, pz],
                    weight,
                });
            }
        }
    }
    out
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` on `[a, b]`, starting
/// from `panels` equal subintervals and bisecting the worst one until the
/// summed error estimate falls below `max(abs_tol, rel_tol * |value|)`.
pub fn adaptive_gk<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> AdaptiveResult {
    let panels = panels.max(1);
    let mut work: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let lo = a + (b - a) * i as f64 / panels as f64;
            let hi = a + (b - a) * (i + 1) as f64 / panels as f64;
            let (v, e) = gk15(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let value: f64 = work.iter().map(|w| w.2).sum();
        let error: f64 = work.iter().map(|w| w.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) || work.len() >= max_intervals {
            return AdaptiveResult {
                value,
                error,
                intervals: work.len(),
            };
        }
        let (worst, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty work list");
        let (lo, hi, _, _) = work.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        work.push((lo, mid, v1, e1));
        work.push((mid, hi, v2, e2));
    }
}

/// Neumaier-compensated sum for deterministic, accurate reductions.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    fn factorial(k: u32) -> f64 {
        (1..=k).map(f64::from).product()
    }

    #[test]
    fn tet_rule_matches_barycentric_monomials() {
        // ∫ λ^a over the reference tetrahedron = 6 |T| a! / (|a| + 3)! with |T| = 1/6.
        let rule = tet_rule(4);
        for a0 in 0..=2u32 {
            for a1 in 0..=2u32 {
                for a2 in 0..=2u32 {
                    let a3 = 1u32;
                    let deg = a0 + a1 + a2 + a3;
                    if deg > 5 {
                        continue;
                    }
                    let q: f64 = rule
                        .iter()
                        .map(|p| {
                            p.weight
                                * p.bary[0].powi(a0 as i32)
                                * p.bary[1].powi(a1 as i32)
                                * p.bary[2].powi(a2 as i32)
                                * p.bary[3].powi(a3 as i32)
                        })
                        .sum();
                    let exact = factorial(a0) * factorial(a1) * factorial(a2) * factorial(a3)
                        / factorial(deg + 3);
                    assert!((q - exact).abs() < 1e-15, "{a0}{a1}{a2}{a3}");
                }
            }
        }
    }

    #[test]
    fn adaptive_handles_kinks() {
        let r = adaptive_gk(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1, 1e-14, 1e-14, 1000);
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn kahan_sum_is_accurate() {
        let mut s = KahanSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}
