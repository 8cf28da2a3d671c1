//! Named problem presets and a manufactured Navier-Stokes solution.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::integrate;
use crate::functions::{ParabolicWindow, Side, VectorFunction, WindowedBoundary};
use crate::quadrature::TriangleRule;
use crate::space::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-height channel, all fluid.
    Poiseuille,
    /// Full-height inflow narrowing to a quarter-height outlet.
    Diffuser,
    /// Straight channel between two half-height openings.
    Pipe,
    /// Left inlet turned to a bottom outlet.
    PipeBend,
    /// Full-height channel around a solid disc.
    Obstacle,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Poiseuille => "poiseuille",
            Self::Diffuser => "diffuser",
            Self::Pipe => "pipe",
            Self::PipeBend => "pipe_bend",
            Self::Obstacle => "obstacle",
        }
    }

    /// Domain extents.
    pub fn domain(&self) -> (f64, f64) {
        (1.0, 1.0)
    }

    /// Volume bound `beta` (fluid fraction `(1 + beta) / 2`).
    pub fn default_beta(&self) -> f64 {
        match self {
            Self::Poiseuille | Self::Obstacle => 0.9,
            Self::Diffuser => 0.0,
            Self::Pipe => 0.0,
            Self::PipeBend => -0.2,
        }
    }

    /// Boundary data with inlet peak velocity `peak`.
    pub fn boundary(&self, peak: f64) -> WindowedBoundary {
        let (width, height) = self.domain();
        let w = |side, lo, hi, peak, direction| ParabolicWindow {
            side,
            lo,
            hi,
            peak,
            direction,
        };
        let windows = match self {
            Self::Poiseuille | Self::Obstacle => vec![
                w(Side::Left, 0.0, 1.0, peak, [1.0, 0.0]),
                w(Side::Right, 0.0, 1.0, peak, [1.0, 0.0]),
            ],
            Self::Diffuser => vec![
                w(Side::Left, 0.0, 1.0, peak, [1.0, 0.0]),
                w(Side::Right, 0.375, 0.625, 4.0 * peak, [1.0, 0.0]),
            ],
            Self::Pipe => vec![
                w(Side::Left, 0.25, 0.75, peak, [1.0, 0.0]),
                w(Side::Right, 0.25, 0.75, peak, [1.0, 0.0]),
            ],
            Self::PipeBend => vec![
                w(Side::Left, 0.625, 0.875, peak, [1.0, 0.0]),
                w(Side::Bottom, 0.625, 0.875, peak, [0.0, -1.0]),
            ],
        };
        WindowedBoundary { width, height, windows }
    }

    /// Fixed design used by the fixed-geometry presets (`None` for the
    /// optimization presets, which start from the uniform value `beta`).
    pub fn fixed_design(&self) -> Option<fn([f64; 2]) -> f64> {
        match self {
            Self::Poiseuille => Some(|_| 1.0),
            Self::Obstacle => Some(obstacle_design),
            _ => None,
        }
    }
}

/// `-1` inside the disc of radius 0.2 around the center, `+1` outside.
pub fn obstacle_design(x: [f64; 2]) -> f64 {
    let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
    if r < 0.2 {
        -1.0
    } else {
        1.0
    }
}

/// Stream-function manufactured solution on the unit square:
/// `u = A curl(sin^2(pi x) sin^2(pi y))`, `p = cos(pi x) cos(pi y)`,
/// `f = -mu lap u + (u.grad) u + grad p`. The velocity has zero trace.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub amplitude: f64,
    pub mu: f64,
}

fn s0(t: f64) -> f64 {
    (PI * t).sin().powi(2)
}
fn s1(t: f64) -> f64 {
    PI * (2.0 * PI * t).sin()
}
fn s2(t: f64) -> f64 {
    2.0 * PI * PI * (2.0 * PI * t).cos()
}
fn s3(t: f64) -> f64 {
    -4.0 * PI.powi(3) * (2.0 * PI * t).sin()
}

impl Manufactured {
    pub fn velocity(&self, x: [f64; 2]) -> [f64; 2] {
        let a = self.amplitude;
        [a * s0(x[0]) * s1(x[1]), -a * s1(x[0]) * s0(x[1])]
    }

    pub fn velocity_jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let a = self.amplitude;
        let (x, y) = (x[0], x[1]);
        [
            [a * s1(x) * s1(y), a * s0(x) * s2(y)],
            [-a * s2(x) * s0(y), -a * s1(x) * s1(y)],
        ]
    }

    pub fn pressure(&self, x: [f64; 2]) -> f64 {
        (PI * x[0]).cos() * (PI * x[1]).cos()
    }

    fn laplacian(&self, x: [f64; 2]) -> [f64; 2] {
        let a = self.amplitude;
        let (x, y) = (x[0], x[1]);
        [
            a * (s2(x) * s1(y) + s0(x) * s3(y)),
            -a * (s3(x) * s0(y) + s1(x) * s2(y)),
        ]
    }

    pub fn force(&self, x: [f64; 2]) -> [f64; 2] {
        let u = self.velocity(x);
        let du = self.velocity_jacobian(x);
        let lap = self.laplacian(x);
        let gp = [
            -PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            -PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
        ];
        let mut f = [0.0; 2];
        for i in 0..2 {
            f[i] = -self.mu * lap[i] + u[0] * du[i][0] + u[1] * du[i][1] + gp[i];
        }
        f
    }

    pub fn force_function(self) -> Arc<dyn VectorFunction> {
        Arc::new(ManufacturedForce(self))
    }
}

struct ManufacturedForce(Manufactured);

impl VectorFunction for ManufacturedForce {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        self.0.force(x)
    }

    /// Central differences; only the value enters the state solve.
    fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let h = 1e-6;
        let mut j = [[0.0; 2]; 2];
        for k in 0..2 {
            let (mut a, mut b) = (x, x);
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (self.0.force(a), self.0.force(b));
            for i in 0..2 {
                j[i][k] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        j
    }
}

/// `(||u - exact||_L2, ||grad(u - exact)||_L2)`.
pub fn velocity_errors(
    u: &Field,
    exact: impl Fn([f64; 2]) -> [f64; 2] + Sync,
    exact_jacobian: impl Fn([f64; 2]) -> [[f64; 2]; 2] + Sync,
    rule: &TriangleRule,
) -> (f64, f64) {
    let mesh = u.space().mesh();
    let l2 = integrate(mesh, rule, |qp| {
        let v = u.vector_at(qp.triangle, &qp.lambda);
        let e = exact(qp.x);
        (v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)
    });
    let h1 = integrate(mesh, rule, |qp| {
        let j = u.jacobian_at(qp.triangle, &qp.lambda);
        let e = exact_jacobian(qp.x);
        (0..2).flat_map(|i| (0..2).map(move |k| (i, k))).map(|(i, k)| (j[i][k] - e[i][k]).powi(2)).sum()
    });
    (l2.sqrt(), h1.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_balance_flux() {
        for p in [Preset::Poiseuille, Preset::Diffuser, Preset::Pipe, Preset::PipeBend, Preset::Obstacle] {
            assert!(p.boundary(0.3).flux().abs() < 1e-15, "{}", p.name());
        }
    }

    #[test]
    fn manufactured_is_divergence_free() {
        let m = Manufactured { amplitude: 0.5, mu: 1.0 };
        for x in [[0.1, 0.7], [0.33, 0.5], [0.9, 0.05]] {
            let j = m.velocity_jacobian(x);
            assert!((j[0][0] + j[1][1]).abs() < 1e-14);
            // Jacobian against central differences
            let h = 1e-6;
            let fd = (m.velocity([x[0] + h, x[1]])[1] - m.velocity([x[0] - h, x[1]])[1]) / (2.0 * h);
            assert!((fd - j[1][0]).abs() < 1e-7);
        }
        assert_eq!(m.velocity([0.0, 0.4]), [0.0, -0.0]);
    }
}
