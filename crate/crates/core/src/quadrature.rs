//! Quadrature rules on the reference triangle (barycentric points, weights
//! normalised to sum to one) and on the unit interval.

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Six-point rule exact for polynomials of total degree 4.
    pub fn degree4() -> Self {
        let (a1, b1, w1) = (0.108_103_018_168_070_2, 0.445_948_490_915_965, 0.223_381_589_678_011_5);
        let (a2, b2, w2) = (0.816_847_572_980_459, 0.091_576_213_509_771, 0.109_951_743_655_321_8);
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for &(a, b, w) in &[(a1, b1, w1), (a2, b2, w2)] {
            points.push([a, b, b]);
            points.push([b, a, b]);
            points.push([b, b, a]);
            weights.extend([w; 3]);
        }
        Self { points, weights }
    }

    /// Collapsed Gauss-Legendre product rule with `m` points per direction,
    /// exact to total degree `2m - 2`.
    pub fn collapsed(m: usize) -> Self {
        let gl = LineRule::gauss_legendre(m);
        let mut points = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        for (&u, &wu) in gl.points.iter().zip(&gl.weights) {
            for (&v, &wv) in gl.points.iter().zip(&gl.weights) {
                let x = u;
                let y = (1.0 - u) * v;
                points.push([1.0 - x - y, x, y]);
                // reference area is 1/2, weights normalised to sum to one
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        Self { points, weights }
    }

    /// Rule used for error measurements against closed-form solutions.
    pub fn high_order() -> Self {
        Self::collapsed(7)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl LineRule {
    /// Gauss-Legendre rule on [0, 1] with `m` points (weights sum to one).
    pub fn gauss_legendre(m: usize) -> Self {
        assert!(m >= 1);
        let mut points = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            // Newton on P_m starting from the Chebyshev-like guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(m, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points.push(0.5 * (1.0 - x));
            weights.push(0.5 * w);
        }
        Self { points, weights }
    }

    /// Three-point rule, exact to degree 5; used for all face integrals.
    pub fn face() -> Self {
        Self::gauss_legendre(3)
    }
}

fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if m == 0 { 1.0 } else { p1 };
    let dp = m as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    // integral of x^a y^b over the reference triangle, divided by its area
    fn exact_monomial(a: u32, b: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    fn apply(rule: &TriangleRule, a: u32, b: u32) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
            .sum()
    }

    #[test]
    fn degree4_rule_is_exact_to_degree_four() {
        let rule = TriangleRule::degree4();
        for d in 0..=4 {
            for a in 0..=d {
                let b = d - a;
                let err = (apply(&rule, a, b) - exact_monomial(a, b)).abs();
                assert!(err < 1e-14, "x^{a} y^{b}: {err}");
            }
        }
        // and not to degree 5 in general
        let worst = (0..=5)
            .map(|a| (apply(&rule, a, 5 - a) - exact_monomial(a, 5 - a)).abs())
            .fold(0.0, f64::max);
        assert!(worst > 1e-10);
    }

    #[test]
    fn collapsed_rule_exactness() {
        let rule = TriangleRule::collapsed(6);
        for d in 0..=10 {
            for a in 0..=d {
                let b = d - a;
                let err = (apply(&rule, a, b) - exact_monomial(a, b)).abs();
                assert!(err < 1e-14, "x^{a} y^{b}: {err}");
            }
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for m in 1..8 {
            let r = LineRule::gauss_legendre(m);
            for d in 0..(2 * m) {
                let q: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(d as i32)).sum();
                assert!((q - 1.0 / (d as f64 + 1.0)).abs() < 1e-14, "m={m} d={d}");
            }
        }
    }
}
