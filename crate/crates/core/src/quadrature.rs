//! Quadrature on the reference triangle `(0,0), (1,0), (0,1)` and on intervals.
//!
//! Points are stored in barycentric coordinates and weights sum to one, so a
//! physical integral is `area * sum(w_q * f(x_q))`.

use std::f64::consts::PI;

/// A symmetric or collapsed quadrature rule on a triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl TriangleRule {
    /// Dunavant rule of (at least) the requested degree. Degrees up to 8 use
    /// the tabulated symmetric rules; anything higher falls back to a
    /// collapsed Gauss rule.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::dunavant2(),
            3..=6 => Self::dunavant6(),
            7 | 8 => Self::dunavant8(),
            d => Self::collapsed_gauss(d.div_ceil(2) + 1),
        }
    }

    /// Default rule used by all assembly routines.
    pub fn default_rule() -> Self {
        Self::dunavant6()
    }

    /// Rule used when near-exact integration of cubic-times-quadratic
    /// integrands (the convection form) is required.
    pub fn verification_rule() -> Self {
        Self::dunavant8()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    fn centroid() -> Self {
        Self {
            degree: 1,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
        }
    }

    fn dunavant2() -> Self {
        let mut r = Self::empty(2);
        r.push_orbit3(1.0 / 3.0, 2.0 / 3.0, 1.0 / 6.0);
        r
    }

    fn dunavant6() -> Self {
        let mut r = Self::empty(6);
        r.push_orbit3(0.116_786_275_726_379, 0.501_426_509_658_179, 0.249_286_745_170_910);
        r.push_orbit3(0.050_844_906_370_207, 0.873_821_971_016_996, 0.063_089_014_491_502);
        r.push_orbit6(
            0.082_851_075_618_374,
            0.053_145_049_844_817,
            0.310_352_451_033_784,
            0.636_502_499_121_399,
        );
        r.normalize();
        r
    }

    fn dunavant8() -> Self {
        let mut r = Self::empty(8);
        r.points.push([1.0 / 3.0; 3]);
        r.weights.push(0.144_315_607_677_787);
        r.push_orbit3(0.095_091_634_267_285, 0.081_414_823_414_554, 0.459_292_588_292_723);
        r.push_orbit3(0.103_217_370_534_718, 0.658_861_384_496_480, 0.170_569_307_751_760);
        r.push_orbit3(0.032_458_497_623_198, 0.898_905_543_365_938, 0.050_547_228_317_031);
        r.push_orbit6(
            0.027_230_314_174_435,
            0.008_394_777_409_958,
            0.263_112_829_634_638,
            0.728_492_392_955_404,
        );
        r.normalize();
        r
    }

    /// Conical product of Gauss-Legendre rules with `n` points per direction,
    /// exact for polynomials of degree `2n - 2`.
    pub fn collapsed_gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&xi, &wi) in x.iter().zip(&w) {
            // map [-1,1] -> [0,1]
            let a = 0.5 * (xi + 1.0);
            for (&xj, &wj) in x.iter().zip(&w) {
                let b = 0.5 * (xj + 1.0);
                let s = a;
                let t = b * (1.0 - a);
                points.push([1.0 - s - t, s, t]);
                // 0.25 from both interval maps, (1 - a) from the collapse, 2 to
                // normalize by the reference area.
                weights.push(0.5 * wi * wj * (1.0 - a));
            }
        }
        Self {
            degree: 2 * n - 2,
            points,
            weights,
        }
    }

    fn empty(degree: usize) -> Self {
        Self {
            degree,
            points: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn push_orbit3(&mut self, w: f64, a: f64, b: f64) {
        for p in [[a, b, b], [b, a, b], [b, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn push_orbit6(&mut self, w: f64, a: f64, b: f64, c: f64) {
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn normalize(&mut self) {
        let s: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= s;
        }
        for p in &mut self.points {
            // tables carry 15 digits; enforce the partition of unity exactly
            p[0] = 1.0 - p[1] - p[2];
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` via Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one Gauss point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of s^a t^b over the reference triangle, divided by its area.
    fn monomial_mean(a: u32, b: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    fn check_exactness(rule: &TriangleRule) {
        for total in 0..=rule.degree() as u32 {
            for a in 0..=total {
                let b = total - a;
                let q: f64 = rule
                    .iter()
                    .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                    .sum();
                let exact = monomial_mean(a, b);
                assert!(
                    (q - exact).abs() <= 1e-14 * exact.max(1e-3),
                    "degree {} rule fails s^{a} t^{b}: {q} vs {exact}",
                    rule.degree()
                );
            }
        }
    }

    #[test]
    fn tabulated_rules_are_exact_to_their_degree() {
        for d in [1, 2, 6, 8] {
            check_exactness(&TriangleRule::with_degree(d));
        }
    }

    #[test]
    fn collapsed_rules_are_exact() {
        for n in 2..8 {
            check_exactness(&TriangleRule::collapsed_gauss(n));
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((q - 2.0 / 9.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }
}
