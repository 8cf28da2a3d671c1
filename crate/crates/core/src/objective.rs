//! Diffuse objective `J_eps`, the Ginzburg-Landau energy and the sharp
//! objective `J_0`.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::assembly::integrate;
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::functions::SharedFunction;
use crate::quadrature::TriangleRule;
use crate::sharp::SharpMask;
use crate::space::{Field, SpaceKind};
use crate::state::{solve_sharp_state, StateProblem, StateSolution};

/// Perimeter constant of the double obstacle potential.
pub const C0: f64 = FRAC_PI_2;

/// Objective integrand `f(x, u, Du)` with its partial derivatives.
pub trait Integrand: Send + Sync {
    fn value(&self, x: [f64; 2], u: [f64; 2], du: [[f64; 2]; 2]) -> f64;

    /// `(d_x f, d_u f, d_Du f)`.
    fn derivatives(&self, x: [f64; 2], u: [f64; 2], du: [[f64; 2]; 2]) -> ([f64; 2], [f64; 2], [[f64; 2]; 2]);
}

/// `mu/2 |Du|^2 - f . u`.
#[derive(Clone)]
pub struct TotalPotentialPower {
    pub mu: f64,
    pub force: SharedFunction,
}

impl Integrand for TotalPotentialPower {
    fn value(&self, x: [f64; 2], u: [f64; 2], du: [[f64; 2]; 2]) -> f64 {
        let f = self.force.value(x);
        let g2 = du[0][0] * du[0][0] + du[0][1] * du[0][1] + du[1][0] * du[1][0] + du[1][1] * du[1][1];
        0.5 * self.mu * g2 - (f[0] * u[0] + f[1] * u[1])
    }

    fn derivatives(&self, x: [f64; 2], u: [f64; 2], du: [[f64; 2]; 2]) -> ([f64; 2], [f64; 2], [[f64; 2]; 2]) {
        let f = self.force.value(x);
        let df = self.force.jacobian(x);
        let dx = [-(df[0][0] * u[0] + df[1][0] * u[1]), -(df[0][1] * u[0] + df[1][1] * u[1])];
        let m = self.mu;
        (dx, [-f[0], -f[1]], [[m * du[0][0], m * du[0][1]], [m * du[1][0], m * du[1][1]]])
    }
}

#[derive(Clone)]
pub struct ObjectiveParams {
    pub gamma: f64,
    pub integrand: Arc<dyn Integrand>,
}

impl std::fmt::Debug for ObjectiveParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveParams").field("gamma", &self.gamma).finish_non_exhaustive()
    }
}

impl ObjectiveParams {
    pub fn new(gamma: f64, integrand: Arc<dyn Integrand>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} must be positive")));
        }
        Ok(Self { gamma, integrand })
    }

    pub fn total_potential_power(mu: f64, force: SharedFunction, gamma: f64) -> Result<Self> {
        Self::new(gamma, Arc::new(TotalPotentialPower { mu, force }))
    }

    pub fn c0(&self) -> f64 {
        C0
    }
}

/// Design variable with its interface parameter and volume bound.
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub phi: Field,
    pub eps: f64,
    pub beta: f64,
}

impl PhaseField {
    pub fn new(phi: Field, eps: f64, beta: f64) -> Result<Self> {
        if phi.space().kind() != SpaceKind::Design {
            return Err(Error::SpaceMismatch("phase field must live on the design space".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
        }
        if !(beta > -1.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta = {beta} must lie in (-1, 1)")));
        }
        Ok(Self { phi, eps, beta })
    }
}

/// `F(u) = int f(x, u, Du)`.
pub fn eval_f(u: &Field, params: &ObjectiveParams, rule: &TriangleRule) -> f64 {
    let mesh = u.space().mesh();
    integrate(mesh, rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        params.integrand.value(qp.x, u.vector_at(t, l), u.jacobian_at(t, l))
    })
}

/// `psi(phi) = (1 - phi^2) / 2` on `[-1, 1]`.
pub fn potential(phi: f64) -> Result<f64> {
    if phi.abs() > 1.0 + 1e-12 {
        return Err(Error::PotentialOutOfRange { value: phi });
    }
    Ok(0.5 * (1.0 - phi * phi).max(0.0))
}

/// `gamma int (eps/2) |grad phi|^2 + psi(phi) / eps`.
pub fn eval_ginzburg_landau(phi: &Field, eps: f64, gamma: f64, rule: &TriangleRule) -> Result<f64> {
    if let Some(&v) = phi.values().iter().find(|v| v.abs() > 1.0 + 1e-12) {
        return Err(Error::PotentialOutOfRange { value: v });
    }
    let mesh = phi.space().mesh();
    let e = integrate(mesh, rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let g = phi.scalar_gradient_at(t, l);
        let p = phi.scalar_at(t, l).clamp(-1.0, 1.0);
        0.5 * eps * (g[0] * g[0] + g[1] * g[1]) + 0.5 * (1.0 - p * p) / eps
    });
    Ok(gamma * e)
}

/// Term breakdown of `J_eps`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ObjectiveTerms {
    pub alpha_term: f64,
    pub f_term: f64,
    pub gl_term: f64,
    pub total: f64,
}

impl ObjectiveTerms {
    pub fn new(alpha_term: f64, f_term: f64, gl_term: f64) -> Self {
        Self {
            alpha_term,
            f_term,
            gl_term,
            total: alpha_term + f_term + gl_term,
        }
    }
}

/// `(1/2) int alpha(phi) |u|^2`.
pub fn eval_alpha_term(problem: &StateProblem, u: &Field) -> f64 {
    let alpha = problem.alpha;
    let phi = &problem.phi;
    integrate(problem.mesh(), &problem.disc.rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let v = u.vector_at(t, l);
        0.5 * alpha.value(phi.scalar_at(t, l).clamp(-1.0, 1.0)) * (v[0] * v[0] + v[1] * v[1])
    })
}

/// `J_eps(phi, u) = (1/2) int alpha |u|^2 + F(u) + GL(phi)` for the state of
/// `problem.phi`.
pub fn eval_j_eps(problem: &StateProblem, state: &StateSolution, params: &ObjectiveParams, eps: f64) -> Result<ObjectiveTerms> {
    let rule = &problem.disc.rule;
    Ok(ObjectiveTerms::new(
        eval_alpha_term(problem, &state.velocity),
        eval_f(&state.velocity, params, rule),
        eval_ginzburg_landau(&problem.phi, eps, params.gamma, rule)?,
    ))
}

/// `sin(clamp(s, -pi/2, pi/2))`, the one-dimensional optimal profile.
pub fn sine_profile(s: f64) -> f64 {
    s.clamp(-FRAC_PI_2, FRAC_PI_2).sin()
}

/// One level of the straight-interface energy check.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GammaRow {
    pub eps: f64,
    pub n: usize,
    /// Cells across the interface width `pi eps`.
    pub cells: f64,
    pub energy: f64,
    pub target: f64,
    pub rel_error: f64,
}

/// GL energy of `sin((x - 1/2) / eps)` on `n x n` unit-square meshes against
/// `gamma c0 L` with `L = 1`. Each level halves `eps` and quarters `h`.
pub fn gamma_check(eps0: f64, n0: usize, halvings: usize, gamma: f64) -> Result<Vec<GammaRow>> {
    (0..=halvings)
        .map(|k| {
            let eps = eps0 / 2f64.powi(k as i32);
            let n = n0 * 4usize.pow(k as u32);
            let disc = Discretization::structured(crate::mesh::build_structured_mesh(n, n, 1.0, 1.0)?)?;
            let phi = Field::interpolate_scalar(&disc.spaces.design, |x| sine_profile((x[0] - 0.5) / eps));
            let energy = eval_ginzburg_landau(&phi, eps, gamma, &disc.rule)?;
            let target = gamma * C0;
            Ok(GammaRow {
                eps,
                n,
                cells: std::f64::consts::PI * eps * n as f64,
                energy,
                target,
                rel_error: (energy - target).abs() / target,
            })
        })
        .collect()
}

/// Reconstruction width used by [`perimeter_gl`], in cells.
pub const RECONSTRUCTION_CELLS: f64 = 2.5;

/// Optimal-profile phase field `sin(d / eps_r)` built from the signed
/// distance to the smoothed interface of `mask`.
pub fn reconstruct_profile(disc: &Discretization, mask: &SharpMask, eps_r: f64) -> Field {
    let d = mask.signed_distance(disc.mesh());
    let v = d.iter().map(|&d| sine_profile(d / eps_r)).collect();
    Field::new(disc.spaces.design.clone(), v).expect("one value per vertex")
}

/// Perimeter in Omega estimated as `GL(reconstructed profile) / c0`.
pub fn perimeter_gl(disc: &Discretization, mask: &SharpMask) -> f64 {
    if mask.interface_edges(disc.mesh()).is_empty() {
        return 0.0;
    }
    let eps_r = RECONSTRUCTION_CELLS * disc.mesh().h();
    let phi = reconstruct_profile(disc, mask, eps_r);
    eval_ginzburg_landau(&phi, eps_r, 1.0, &disc.rule).expect("profile lies in [-1, 1]") / C0
}

/// Sharp objective with its pieces.
#[derive(Debug, Clone)]
pub struct SharpObjective {
    pub f_term: f64,
    pub perimeter: f64,
    pub perimeter_edges: f64,
    pub perimeter_term: f64,
    pub total: f64,
    pub state: StateSolution,
}

/// `J_0 = F(u_sharp) + gamma c0 P(mask)` with the GL-profile perimeter.
pub fn eval_j0(problem: &StateProblem, mask: &SharpMask, params: &ObjectiveParams) -> Result<SharpObjective> {
    let state = solve_sharp_state(problem, mask)?;
    let disc = &problem.disc;
    let f_term = eval_f(&state.velocity, params, &disc.rule);
    let perimeter = perimeter_gl(disc, mask);
    let perimeter_term = params.gamma * C0 * perimeter;
    Ok(SharpObjective {
        f_term,
        perimeter,
        perimeter_edges: mask.edge_perimeter(disc.mesh()),
        perimeter_term,
        total: f_term + perimeter_term,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::Alpha;
    use crate::functions::{analytic, constant, zero};
    use crate::mesh::{build_structured_mesh, Diagonal, Mesh};
    use crate::state::solve_state;
    use std::f64::consts::PI;

    fn disc(n: usize) -> Arc<Discretization> {
        Discretization::structured(build_structured_mesh(n, n, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn f_examples() {
        let d = disc(4);
        let u = Field::interpolate_vector(&d.spaces.velocity, |x| [x[0], -x[1]]);
        let none = ObjectiveParams::total_potential_power(1.0, zero(), 1.0).unwrap();
        assert_eq!(eval_f(&Field::zeros(&d.spaces.velocity), &none, &d.rule), 0.0);
        assert!((eval_f(&u, &none, &d.rule) - 1.0).abs() < 1e-14);
        let pushed = ObjectiveParams::total_potential_power(1.0, constant([1.0, 0.0]), 1.0).unwrap();
        assert!((eval_f(&u, &pushed, &d.rule) - 0.5).abs() < 1e-14);
        assert!(ObjectiveParams::total_potential_power(1.0, zero(), 0.0).is_err());
    }

    #[test]
    fn gl_examples() {
        let d = disc(4);
        assert_eq!(eval_ginzburg_landau(&Field::constant(&d.spaces.design, 1.0), 0.1, 1.0, &d.rule).unwrap(), 0.0);
        assert_eq!(eval_ginzburg_landau(&Field::constant(&d.spaces.design, -1.0), 0.1, 1.0, &d.rule).unwrap(), 0.0);
        let e = eval_ginzburg_landau(&Field::constant(&d.spaces.design, 0.0), 0.5, 1.0, &d.rule).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        assert!(matches!(
            eval_ginzburg_landau(&Field::constant(&d.spaces.design, 1.1), 0.5, 1.0, &d.rule),
            Err(Error::PotentialOutOfRange { .. })
        ));
        let phi = Field::interpolate_scalar(&d.spaces.design, |x| (3.0 * x[0] - 1.0).tanh() * 0.9);
        let neg = Field::new(d.spaces.design.clone(), phi.values().iter().map(|v| -v).collect()).unwrap();
        let (a, b) = (
            eval_ginzburg_landau(&phi, 0.2, 1.0, &d.rule).unwrap(),
            eval_ginzburg_landau(&neg, 0.2, 1.0, &d.rule).unwrap(),
        );
        assert!(a > 0.0 && (a - b).abs() < 1e-14 * a);
    }

    #[test]
    fn sine_interface_energy() {
        // pi * eps = 0.4 spans 12.8 cells
        let eps = 0.4 / PI;
        let d = disc(32);
        let phi = Field::interpolate_scalar(&d.spaces.design, |x| sine_profile((x[0] - 0.5) / eps));
        let e = eval_ginzburg_landau(&phi, eps, 1.0, &d.rule).unwrap();
        assert!((e / C0 - 1.0).abs() < 0.02, "{e}");
    }

    #[test]
    fn j_eps_terms() {
        let d = disc(6);
        let g = analytic(|x| [x[1] * (1.0 - x[1]), 0.0], |x| [[0.0, 1.0 - 2.0 * x[1]], [0.0, 0.0]]);
        let params = ObjectiveParams::total_potential_power(1.0, constant([0.5, 0.0]), 0.3).unwrap();
        let phi = Field::interpolate_scalar(&d.spaces.design, |x| (4.0 * x[0] - 2.0).sin());
        let p = StateProblem::new(d.clone(), 1.0, constant([0.5, 0.0]), g.clone(), phi, Alpha::Linear { alpha_bar: 20.0 })
            .unwrap();
        let s = solve_state(&p, None).unwrap();
        let t = eval_j_eps(&p, &s, &params, 0.1).unwrap();
        assert_eq!(t.total, t.alpha_term + t.f_term + t.gl_term);
        assert_eq!(t.f_term, eval_f(&s.velocity, &params, &d.rule));
        assert!(t.alpha_term > 0.0);

        let fluid = p.with_phi(Field::constant(&d.spaces.design, 1.0));
        let s = solve_state(&fluid, None).unwrap();
        let t = eval_j_eps(&fluid, &s, &params, 0.1).unwrap();
        assert_eq!(t.alpha_term, 0.0);
        assert_eq!(t.gl_term, 0.0);
        assert_eq!(t.total, t.f_term);
    }

    #[test]
    fn j0_examples() {
        let d = disc(16);
        let g = analytic(|x| [x[1] * (1.0 - x[1]), 0.0], |x| [[0.0, 1.0 - 2.0 * x[1]], [0.0, 0.0]]);
        let params = ObjectiveParams::total_potential_power(1.0, zero(), 0.1).unwrap();
        let phi = Field::constant(&d.spaces.design, 1.0);
        let p = StateProblem::new(d.clone(), 1.0, zero(), g, phi, Alpha::Zero).unwrap();
        let full = eval_j0(&p, &SharpMask::uniform(d.mesh(), true), &params).unwrap();
        assert_eq!(full.perimeter_term, 0.0);
        assert!((full.total - full.f_term).abs() == 0.0);
        let hole = SharpMask::from_predicate(d.mesh(), |x| (x[0] - 0.5).abs() > 0.125 || (x[1] - 0.5).abs() > 0.125);
        let j = eval_j0(&p, &hole, &params).unwrap();
        assert!((j.perimeter_edges - 1.0).abs() < 1e-12);
        assert!(j.f_term > full.f_term);
    }

    #[test]
    fn disc_perimeter() {
        let r = 0.25;
        let exact = 2.0 * PI * r;
        for diag in [Diagonal::Right, Diagonal::Crossed] {
            let d = Discretization::structured(Mesh::structured(64, 64, 1.0, 1.0, diag).unwrap()).unwrap();
            let mask = SharpMask::from_predicate(d.mesh(), |x| (x[0] - 0.5).hypot(x[1] - 0.5) > r);
            let gl = perimeter_gl(&d, &mask);
            assert!((gl / exact - 1.0).abs() < 0.03, "{diag:?}: gl {gl} vs {exact}");
            // axis-aligned staircases overcount a circle by about 4/pi
            assert!(mask.edge_perimeter(d.mesh()) > 1.2 * exact);
        }
    }

    #[test]
    fn gamma_check_approaches_perimeter() {
        let rows = gamma_check(0.32, 8, 1, 0.5).unwrap();
        assert_eq!(rows[1].n, 32);
        assert!(rows[0].cells >= 8.0);
        assert!(rows.iter().all(|r| r.rel_error < 0.02));
        assert!(rows[1].rel_error < rows[0].rel_error);
    }
}
