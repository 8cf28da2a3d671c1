//! Analytic vector fields with exact Jacobians, used for body forces,
//! boundary data and design velocities.

use std::fmt;
use std::sync::Arc;

pub trait VectorFunction: Send + Sync {
    fn value(&self, x: [f64; 2]) -> [f64; 2];

    /// `J[i][j] = d f_i / d x_j`.
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2];

    fn divergence(&self, x: [f64; 2]) -> f64 {
        let j = self.jacobian(x);
        j[0][0] + j[1][1]
    }

    /// `H[i][j][k] = d^2 f_i / dx_j dx_k`. The default differences the
    /// Jacobian centrally.
    fn hessian(&self, x: [f64; 2]) -> Hessian {
        let h = 1e-5;
        let mut out = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            let (mut a, mut b) = (x, x);
            a[k] += h;
            b[k] -= h;
            let (ja, jb) = (self.jacobian(a), self.jacobian(b));
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j][k] = (ja[i][j] - jb[i][j]) / (2.0 * h);
                }
            }
        }
        out
    }

    /// True if the field is identically zero (lets callers skip work).
    fn is_zero(&self) -> bool {
        false
    }
}

pub type SharedFunction = Arc<dyn VectorFunction>;

pub type Hessian = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl VectorFunction for Zero {
    fn value(&self, _: [f64; 2]) -> [f64; 2] {
        [0.0; 2]
    }
    fn jacobian(&self, _: [f64; 2]) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn hessian(&self, _: [f64; 2]) -> Hessian {
        [[[0.0; 2]; 2]; 2]
    }
    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub [f64; 2]);

impl VectorFunction for Constant {
    fn value(&self, _: [f64; 2]) -> [f64; 2] {
        self.0
    }
    fn jacobian(&self, _: [f64; 2]) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn hessian(&self, _: [f64; 2]) -> Hessian {
        [[[0.0; 2]; 2]; 2]
    }
    fn is_zero(&self) -> bool {
        self.0 == [0.0; 2]
    }
}

/// A field given by a value closure and its Jacobian closure.
pub struct Analytic<F, G> {
    f: F,
    df: G,
}

impl<F, G> Analytic<F, G>
where
    F: Fn([f64; 2]) -> [f64; 2] + Send + Sync,
    G: Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync,
{
    pub fn new(f: F, df: G) -> Self {
        Self { f, df }
    }
}

impl<F, G> VectorFunction for Analytic<F, G>
where
    F: Fn([f64; 2]) -> [f64; 2] + Send + Sync,
    G: Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync,
{
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        (self.f)(x)
    }
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        (self.df)(x)
    }
}

impl<F, G> fmt::Debug for Analytic<F, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Analytic")
    }
}

/// `s * f`.
pub struct Scaled(pub f64, pub SharedFunction);

impl VectorFunction for Scaled {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let v = self.1.value(x);
        [self.0 * v[0], self.0 * v[1]]
    }
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let j = self.1.jacobian(x);
        [[self.0 * j[0][0], self.0 * j[0][1]], [self.0 * j[1][0], self.0 * j[1][1]]]
    }
    fn hessian(&self, x: [f64; 2]) -> Hessian {
        let mut h = self.1.hessian(x);
        h.iter_mut().flatten().flatten().for_each(|v| *v *= self.0);
        h
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0 || self.1.is_zero()
    }
}

/// `f + g`.
pub struct Sum(pub SharedFunction, pub SharedFunction);

impl VectorFunction for Sum {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let (a, b) = (self.0.value(x), self.1.value(x));
        [a[0] + b[0], a[1] + b[1]]
    }
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (a, b) = (self.0.jacobian(x), self.1.jacobian(x));
        [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
    }
    fn hessian(&self, x: [f64; 2]) -> Hessian {
        let (mut a, b) = (self.0.hessian(x), self.1.hessian(x));
        a.iter_mut().flatten().flatten().zip(b.iter().flatten().flatten()).for_each(|(u, v)| *u += v);
        a
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero() && self.1.is_zero()
    }
}

/// Parabolic profile on a boundary segment: `peak * s (1 - s) * 4 * direction`
/// where `s` runs over `[lo, hi]` along the side, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParabolicWindow {
    pub side: Side,
    pub lo: f64,
    pub hi: f64,
    pub peak: f64,
    pub direction: [f64; 2],
}

/// Sides of the rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Boundary data assembled from windows on a rectangle.
#[derive(Debug, Clone)]
pub struct WindowedBoundary {
    pub width: f64,
    pub height: f64,
    pub windows: Vec<ParabolicWindow>,
}

impl WindowedBoundary {
    fn window_value(&self, w: &ParabolicWindow, x: [f64; 2]) -> Option<(f64, f64)> {
        let tol = 1e-12 * self.width.max(self.height);
        let (on, t) = match w.side {
            Side::Left => (x[0].abs() <= tol, x[1]),
            Side::Right => ((x[0] - self.width).abs() <= tol, x[1]),
            Side::Bottom => (x[1].abs() <= tol, x[0]),
            Side::Top => ((x[1] - self.height).abs() <= tol, x[0]),
        };
        if !on || t < w.lo || t > w.hi {
            return None;
        }
        let len = w.hi - w.lo;
        let s = (t - w.lo) / len;
        Some((4.0 * w.peak * s * (1.0 - s), 4.0 * w.peak * (1.0 - 2.0 * s) / len))
    }

    /// Net outward flux, exact for parabolic profiles.
    pub fn flux(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| {
                let n = match w.side {
                    Side::Left => [-1.0, 0.0],
                    Side::Right => [1.0, 0.0],
                    Side::Bottom => [0.0, -1.0],
                    Side::Top => [0.0, 1.0],
                };
                2.0 / 3.0 * w.peak * (w.hi - w.lo) * (w.direction[0] * n[0] + w.direction[1] * n[1])
            })
            .sum()
    }
}

impl VectorFunction for WindowedBoundary {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for w in &self.windows {
            if let Some((a, _)) = self.window_value(w, x) {
                v[0] += a * w.direction[0];
                v[1] += a * w.direction[1];
            }
        }
        v
    }

    /// Tangential derivative only (the data lives on the boundary).
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut j = [[0.0; 2]; 2];
        for w in &self.windows {
            if let Some((_, d)) = self.window_value(w, x) {
                let k = match w.side {
                    Side::Left | Side::Right => 1,
                    Side::Bottom | Side::Top => 0,
                };
                j[0][k] += d * w.direction[0];
                j[1][k] += d * w.direction[1];
            }
        }
        j
    }

    fn is_zero(&self) -> bool {
        self.windows.iter().all(|w| w.peak == 0.0)
    }
}

/// One monomial `coef * x^px * y^py`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub px: u32,
    pub py: u32,
}

/// Vector field with polynomial components.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Polynomial {
    pub x: Vec<Monomial>,
    pub y: Vec<Monomial>,
}

fn poly_hessian(terms: &[Monomial], x: [f64; 2]) -> [[f64; 2]; 2] {
    let mut h = [[0.0; 2]; 2];
    let d = |p: i32, k: i32| -> f64 { (0..k).map(|j| (p - j) as f64).product() };
    for m in terms {
        let (px, py) = (m.px as i32, m.py as i32);
        let term = |kx: i32, ky: i32| {
            if px < kx || py < ky {
                0.0
            } else {
                m.coef * d(px, kx) * d(py, ky) * x[0].powi(px - kx) * x[1].powi(py - ky)
            }
        };
        h[0][0] += term(2, 0);
        h[0][1] += term(1, 1);
        h[1][1] += term(0, 2);
    }
    h[1][0] = h[0][1];
    h
}

fn eval_poly(terms: &[Monomial], x: [f64; 2]) -> (f64, [f64; 2]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for m in terms {
        let (px, py) = (m.px as i32, m.py as i32);
        v += m.coef * x[0].powi(px) * x[1].powi(py);
        if px > 0 {
            g[0] += m.coef * px as f64 * x[0].powi(px - 1) * x[1].powi(py);
        }
        if py > 0 {
            g[1] += m.coef * py as f64 * x[0].powi(px) * x[1].powi(py - 1);
        }
    }
    (v, g)
}

impl VectorFunction for Polynomial {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        [eval_poly(&self.x, x).0, eval_poly(&self.y, x).0]
    }
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        [eval_poly(&self.x, x).1, eval_poly(&self.y, x).1]
    }
    fn hessian(&self, x: [f64; 2]) -> Hessian {
        [poly_hessian(&self.x, x), poly_hessian(&self.y, x)]
    }
    fn is_zero(&self) -> bool {
        self.x.iter().chain(&self.y).all(|m| m.coef == 0.0)
    }
}

pub fn zero() -> SharedFunction {
    Arc::new(Zero)
}

pub fn constant(v: [f64; 2]) -> SharedFunction {
    Arc::new(Constant(v))
}

pub fn analytic<F, G>(f: F, df: G) -> SharedFunction
where
    F: Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
    G: Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync + 'static,
{
    Arc::new(Analytic::new(f, df))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinators() {
        let f = analytic(|x| [x[0] * x[1], x[0]], |x| [[x[1], x[0]], [1.0, 0.0]]);
        let g = Sum(Arc::new(Scaled(2.0, f.clone())), constant([1.0, 0.0]));
        assert_eq!(g.value([2.0, 3.0]), [13.0, 4.0]);
        assert_eq!(g.divergence([2.0, 3.0]), 6.0);
        assert!(zero().is_zero());
        assert!(!g.is_zero());
    }

    #[test]
    fn polynomial_jacobian() {
        let p = Polynomial {
            x: vec![Monomial { coef: 2.0, px: 2, py: 1 }],
            y: vec![Monomial { coef: -1.0, px: 0, py: 3 }, Monomial { coef: 1.0, px: 0, py: 0 }],
        };
        assert_eq!(p.value([2.0, 3.0]), [24.0, -26.0]);
        assert_eq!(p.jacobian([2.0, 3.0]), [[24.0, 8.0], [0.0, -27.0]]);
        let fd = Analytic::new(|x| p.value(x), |x| p.jacobian(x)).hessian([2.0, 3.0]);
        let exact = p.hessian([2.0, 3.0]);
        assert_eq!(exact, [[[12.0, 8.0], [8.0, 0.0]], [[0.0, 0.0], [0.0, -18.0]]]);
        for (a, b) in fd.iter().flatten().flatten().zip(exact.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn window_flux_balances() {
        let b = WindowedBoundary {
            width: 1.0,
            height: 1.0,
            windows: vec![
                ParabolicWindow { side: Side::Left, lo: 0.0, hi: 1.0, peak: 1.0, direction: [1.0, 0.0] },
                ParabolicWindow { side: Side::Right, lo: 0.375, hi: 0.625, peak: 4.0, direction: [1.0, 0.0] },
            ],
        };
        assert!(b.flux().abs() < 1e-15);
        assert_eq!(b.value([0.0, 0.5]), [1.0, 0.0]);
        assert_eq!(b.value([1.0, 0.2]), [0.0, 0.0]);
        assert_eq!(b.value([0.5, 0.5]), [0.0, 0.0]);
    }
}
