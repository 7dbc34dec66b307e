//! One-dimensional and triangle quadrature.

use crate::error::{Error, Result};

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod abscissae (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Maximum number of subintervals an adaptive integration may create.
pub const MAX_SUBINTERVALS: usize = 20_000;

fn gk15<const D: usize>(f: &impl Fn(f64) -> [f64; D], a: f64, b: f64) -> ([f64; D], [f64; D]) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; D];
    let mut gauss = [0.0; D];
    let fc = f(center);
    for d in 0..D {
        kronrod[d] = WGK[7] * fc[d];
        gauss[d] = WG[3] * fc[d];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let (f1, f2) = (f(center - dx), f(center + dx));
        for d in 0..D {
            let s = f1[d] + f2[d];
            kronrod[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    for d in 0..D {
        kronrod[d] *= half;
        gauss[d] *= half;
    }
    (kronrod, gauss)
}

/// Adaptive Gauss-Kronrod integration of a vector-valued integrand over `[a, b]`.
///
/// Intervals are bisected until the Kronrod/Gauss difference of every
/// component is below the interval's share of `tol`. The returned value is
/// the sum of the Kronrod estimates.
pub fn integrate<const D: usize>(f: impl Fn(f64) -> [f64; D], a: f64, b: f64, tol: f64) -> Result<[f64; D]> {
    if !(tol > 0.0) {
        return Err(Error::invalid("quadrature tolerance must be positive"));
    }
    let mut total = [0.0; D];
    if a == b {
        return Ok(total);
    }
    let width = (b - a).abs();
    let mut stack = vec![(a, b)];
    let mut intervals = 1usize;
    while let Some((lo, hi)) = stack.pop() {
        let (k, g) = gk15(&f, lo, hi);
        let err = k.iter().zip(&g).map(|(k, g)| (k - g).abs()).fold(0.0, f64::max);
        let share = tol * (hi - lo).abs() / width;
        let tiny = (hi - lo).abs() <= 64.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
        if err <= share || tiny {
            if !(err <= share) {
                return Err(Error::Quadrature { a, b, tol, estimate: err });
            }
            for d in 0..D {
                total[d] += k[d];
            }
            continue;
        }
        intervals += 1;
        if intervals > MAX_SUBINTERVALS {
            return Err(Error::Quadrature { a, b, tol, estimate: err });
        }
        let mid = 0.5 * (lo + hi);
        stack.push((mid, hi));
        stack.push((lo, mid));
    }
    Ok(total)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Symmetric 7-point rule on triangles, exact for polynomials of degree 5.
///
/// Returns barycentric coordinates and weights summing to one; multiply by the
/// element area.
pub fn triangle_rule_deg5() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let (a1, b1) = ((6.0 - s15) / 21.0, (9.0 + 2.0 * s15) / 21.0);
    let (a2, b2) = ((6.0 + s15) / 21.0, (9.0 - 2.0 * s15) / 21.0);
    let (w1, w2) = ((155.0 - s15) / 1200.0, (155.0 + s15) / 1200.0);
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_polynomials_and_smooth() {
        let v = integrate(|t| [t.powi(5) - 2.0 * t, t.exp()], -1.0, 2.0, 1e-13).unwrap();
        assert!((v[0] - (64.0 / 6.0 - 1.0 / 6.0 - 3.0)).abs() < 1e-12);
        assert!((v[1] - (2f64.exp() - (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn kronrod_reversed_interval() {
        let fwd = integrate(|t| [t.sin()], 0.0, 1.0, 1e-14).unwrap();
        let rev = integrate(|t| [t.sin()], 1.0, 0.0, 1e-14).unwrap();
        assert!((fwd[0] + rev[0]).abs() < 1e-15);
    }

    #[test]
    fn kronrod_kink() {
        let v = integrate(|t| [t.abs()], -1.0, 0.5, 1e-12).unwrap();
        assert!((v[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn kronrod_budget_exhausted() {
        let err = integrate(|t| [if t > 0.3 { 1.0 / (t - 0.3).sqrt() } else { 0.0 }], 0.0, 1.0, 1e-15);
        assert!(matches!(err, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn legendre_rules() {
        for n in [1, 2, 5, 10, 33] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for degree 2n - 1
            let deg = 2 * n - 2;
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((q - 2.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn triangle_rule_degree() {
        let rule = triangle_rule_deg5();
        // integral of x^a y^b over the unit reference triangle is a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        for a in 0..=5u32 {
            for b in 0..=(5 - a) {
                let q: f64 = rule.iter().map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32)).sum::<f64>() * 0.5;
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((q - exact).abs() < 1e-15, "{a} {b}");
            }
        }
    }
}
