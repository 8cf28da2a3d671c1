//! Adjoint state, reduced gradient and first-order sensitivities of `j_eps`.
//!
//! The adjoint solves `J^T (q, pi) = dJ/du` with `J` the exact Newton
//! Jacobian of the discrete state equation, so the reduced derivative
//! `dj(dphi) = int alpha'(phi) dphi (|u|^2/2 - u.q) + GL'(phi) dphi`
//! is the exact derivative of the discrete reduced objective.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_scalar_functional, assemble_vector_functional};
use crate::error::{Error, Result};
use crate::objective::ObjectiveParams;
use crate::space::{Field, SpaceKind};
use crate::sparse::{dot, norm2, CsrMatrix, Factorization, SquareSystem};
use crate::state::{state_jacobian, StateProblem, StateSolution};

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub velocity: Field,
    pub pressure: Field,
    /// Relative residual of the transposed linear solve.
    pub residual: f64,
}

/// Inner product used to turn the derivative into a gradient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerProduct {
    /// Lumped (diagonal) L2.
    L2,
    /// `eps (grad, grad) + eps^-1 (., .)`.
    #[default]
    H1,
}

/// Derivative of `j_eps` as a dual vector and as a Riesz representative.
#[derive(Debug, Clone)]
pub struct ReducedGradient {
    /// `dj(N_i)` for every design basis function.
    pub derivative: Vec<f64>,
    /// Riesz representative in `inner`.
    pub field: Field,
    pub inner: InnerProduct,
    /// Volume multiplier (set by the optimizer; zero until then).
    pub lambda: f64,
}

impl ReducedGradient {
    /// `dj(dphi)`.
    pub fn pairing(&self, dphi: &[f64]) -> f64 {
        dot(&self.derivative, dphi)
    }
}

/// `dJ/du` on the velocity space: `int alpha u.v + d_u f . v + d_Du f : grad v`.
fn objective_state_derivative(problem: &StateProblem, state: &StateSolution, params: &ObjectiveParams) -> Vec<f64> {
    let u = &state.velocity;
    let phi = &problem.phi;
    let alpha = problem.alpha;
    let integrand = params.integrand.clone();
    assemble_vector_functional(&problem.disc.spaces.velocity, &problem.disc.rule, move |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let v = u.vector_at(t, l);
        let du = u.jacobian_at(t, l);
        let a = alpha.value(phi.scalar_at(t, l).clamp(-1.0, 1.0));
        let (_, fu, fdu) = integrand.derivatives(qp.x, v, du);
        ([a * v[0] + fu[0], a * v[1] + fu[1]], fdu)
    })
}

/// Solves the discrete adjoint system at a converged state.
pub fn solve_adjoint(problem: &StateProblem, state: &StateSolution, params: &ObjectiveParams) -> Result<AdjointSolution> {
    if !state.certified() {
        warn!("adjoint at uniqueness margin {:.3} >= 1", state.margin);
    }
    let disc = &problem.disc;
    let lin = state_jacobian(problem, state)?;
    let rhs_u = objective_state_derivative(problem, state, params);
    let rhs = lin.layout.gather(&rhs_u, &vec![0.0; disc.spaces.pressure.ndofs()]);
    let x = lin.factor.solve_transpose(&rhs)?;
    let r: Vec<f64> = lin.system.transpose_matvec(&x).iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let residual = norm2(&r) / norm2(&rhs).max(f64::MIN_POSITIVE);
    let (q, pi) = lin.layout.scatter(&x);
    Ok(AdjointSolution {
        velocity: Field::new(disc.spaces.velocity.clone(), q)?,
        pressure: Field::new(disc.spaces.pressure.clone(), pi)?,
        residual,
    })
}

/// `dj(N_i)` for all design basis functions.
pub fn reduced_derivative(
    problem: &StateProblem,
    state: &StateSolution,
    adjoint: &AdjointSolution,
    params: &ObjectiveParams,
    eps: f64,
) -> Result<Vec<f64>> {
    let disc = &problem.disc;
    let phi = &problem.phi;
    if phi.space().kind() != SpaceKind::Design {
        return Err(Error::SpaceMismatch("phase field must live on the design space".into()));
    }
    let alpha = problem.alpha;
    let u = &state.velocity;
    let q = &adjoint.velocity;
    let mut d = if alpha == crate::alpha::Alpha::Zero {
        vec![0.0; disc.spaces.design.ndofs()]
    } else {
        assemble_scalar_functional(&disc.spaces.design, &disc.rule, |qp| {
            let (t, l) = (qp.triangle, &qp.lambda);
            let v = u.vector_at(t, l);
            let w = q.vector_at(t, l);
            let da = alpha.derivative(phi.scalar_at(t, l).clamp(-1.0, 1.0));
            (da * (0.5 * (v[0] * v[0] + v[1] * v[1]) - (v[0] * w[0] + v[1] * w[1])), [0.0; 2])
        })
    };
    let gl = gl_derivative(problem, params.gamma, eps);
    for (a, b) in d.iter_mut().zip(gl) {
        *a += b;
    }
    Ok(d)
}

/// Derivative of the Ginzburg-Landau term: `gamma (eps K phi - M phi / eps)`.
pub fn gl_derivative(problem: &StateProblem, gamma: f64, eps: f64) -> Vec<f64> {
    let disc = &problem.disc;
    let phi = problem.phi.values();
    let k = disc.design_stiffness.matvec(phi);
    let m = disc.design_mass.matvec(phi);
    k.iter().zip(&m).map(|(k, m)| gamma * (eps * k - m / eps)).collect()
}

/// Riesz map on the design space for one inner product and `eps`.
pub struct RieszMap {
    inner: InnerProduct,
    matrix: Option<CsrMatrix>,
    weights: Vec<f64>,
    factor: Option<Factorization>,
}

impl RieszMap {
    pub fn new(problem: &StateProblem, inner: InnerProduct, eps: f64) -> Result<Self> {
        let disc = &problem.disc;
        match inner {
            InnerProduct::L2 => Ok(Self {
                inner,
                matrix: None,
                weights: disc.design_weights.clone(),
                factor: None,
            }),
            InnerProduct::H1 => {
                let m = disc.design_stiffness.scaled(eps).add_scaled(&disc.design_mass, 1.0 / eps);
                let n = m.nrows();
                let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
                for i in 0..n {
                    for (j, v) in m.row(i) {
                        cols[j].push((i, v));
                    }
                }
                let factor = SquareSystem::from_columns(n, cols)?.factor(None)?;
                Ok(Self {
                    inner,
                    matrix: Some(m),
                    weights: disc.design_weights.clone(),
                    factor: Some(factor),
                })
            }
        }
    }

    pub fn inner(&self) -> InnerProduct {
        self.inner
    }

    /// Solves `R g = d`.
    pub fn apply(&self, derivative: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            None => Ok(derivative.iter().zip(&self.weights).map(|(d, w)| d / w).collect()),
            Some(f) => f.solve(derivative),
        }
    }

    /// `a^T R b`.
    pub fn inner_product(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.matrix {
            None => a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * w).sum(),
            Some(m) => m.bilinear(a, b),
        }
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner_product(a, a).max(0.0).sqrt()
    }

    /// Riesz representative of `1`'s dual, i.e. `R^{-1} w` with `w_i = int N_i`.
    pub fn constant_direction(&self) -> Result<Vec<f64>> {
        self.apply(&self.weights)
    }
}

/// Assembles the reduced gradient (derivative plus Riesz representative).
pub fn reduced_gradient(
    problem: &StateProblem,
    state: &StateSolution,
    adjoint: &AdjointSolution,
    params: &ObjectiveParams,
    eps: f64,
    riesz: &RieszMap,
) -> Result<ReducedGradient> {
    let derivative = reduced_derivative(problem, state, adjoint, params, eps)?;
    let g = riesz.apply(&derivative)?;
    Ok(ReducedGradient {
        derivative,
        field: Field::new(problem.disc.spaces.design.clone(), g)?,
        inner: riesz.inner(),
        lambda: 0.0,
    })
}

/// Control-to-state linearization `du` in direction `dphi`:
/// `J (du, dp) = -(int alpha'(phi) dphi u.v, 0)`.
pub fn solve_linearized_state(problem: &StateProblem, state: &StateSolution, dphi: &Field) -> Result<Field> {
    let disc = &problem.disc;
    if !dphi.space().same_mesh(&disc.spaces.design) || dphi.space().kind() != SpaceKind::Design {
        return Err(Error::SpaceMismatch("direction must live on the design space".into()));
    }
    if !state.certified() {
        warn!("linearized state at uniqueness margin {:.3} >= 1", state.margin);
    }
    let lin = state_jacobian(problem, state)?;
    let alpha = problem.alpha;
    let phi = &problem.phi;
    let u = &state.velocity;
    let src = assemble_vector_functional(&disc.spaces.velocity, &disc.rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let s = alpha.derivative(phi.scalar_at(t, l).clamp(-1.0, 1.0)) * dphi.scalar_at(t, l);
        let v = u.vector_at(t, l);
        ([-s * v[0], -s * v[1]], [[0.0; 2]; 2])
    });
    let rhs = lin.layout.gather(&src, &vec![0.0; disc.spaces.pressure.ndofs()]);
    let x = lin.factor.solve(&rhs)?;
    let (du, _) = lin.layout.scatter(&x);
    Field::new(disc.spaces.velocity.clone(), du)
}

/// Directional derivative of `j_eps` via the linearized state and the chain
/// rule (independent of the adjoint).
pub fn chain_rule_derivative(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    dphi: &Field,
) -> Result<f64> {
    let du = solve_linearized_state(problem, state, dphi)?;
    let ju = objective_state_derivative(problem, state, params);
    let disc = &problem.disc;
    let alpha = problem.alpha;
    let phi = &problem.phi;
    let u = &state.velocity;
    let explicit = crate::assembly::integrate(disc.mesh(), &disc.rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let v = u.vector_at(t, l);
        0.5 * alpha.derivative(phi.scalar_at(t, l).clamp(-1.0, 1.0)) * dphi.scalar_at(t, l) * (v[0] * v[0] + v[1] * v[1])
    });
    let gl = dot(&gl_derivative(problem, params.gamma, eps), dphi.values());
    Ok(dot(&ju, du.values()) + explicit + gl)
}

/// `|| phi - P(phi - g - lambda) ||` in the lumped L2 norm, where `P` is the
/// admissible-set projection with volume bound `beta`.
pub fn stationarity_residual(gradient: &ReducedGradient, phi: &Field, beta: f64, weights: &[f64]) -> f64 {
    let trial: Vec<f64> = phi
        .values()
        .iter()
        .zip(gradient.field.values())
        .map(|(p, g)| p - g - gradient.lambda)
        .collect();
    let projected = crate::optimizer::project_values(&trial, beta, weights).values;
    phi.values()
        .iter()
        .zip(&projected)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// One step of a finite-difference V-curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VCurvePoint {
    pub step: f64,
    pub fd: f64,
    pub exact: f64,
    pub rel_error: f64,
}

/// Default V-curve steps, `10^0` down to `10^-8` in half decades.
pub fn default_fd_steps() -> Vec<f64> {
    (0..17).map(|k| 10f64.powf(-0.5 * k as f64)).collect()
}

/// Central differences `(j(phi + t dphi) - j(phi - t dphi)) / 2t` against the
/// adjoint derivative over `steps`. `phi +- t dphi` must stay in `[-1, 1]`.
pub fn gradient_v_curve(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    derivative: &[f64],
    dphi: &Field,
    steps: &[f64],
) -> Result<Vec<VCurvePoint>> {
    let exact = dot(derivative, dphi.values());
    let j = |t: f64| -> Result<f64> {
        let mut phi = problem.phi.clone();
        phi.axpy(t, dphi);
        let p = problem.with_phi(phi);
        let s = crate::state::solve_state(&p, Some(state))?;
        Ok(crate::objective::eval_j_eps(&p, &s, params, eps)?.total)
    };
    steps
        .iter()
        .map(|&t| {
            let fd = (j(t)? - j(-t)?) / (2.0 * t);
            Ok(VCurvePoint {
                step: t,
                fd,
                exact,
                rel_error: (fd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}

/// Smallest relative error of a V-curve.
pub fn v_curve_minimum(points: &[VCurvePoint]) -> Option<VCurvePoint> {
    points.iter().copied().min_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
}

/// Random direction `r (1 - phi^2) / 2` with `r` uniform in `[-1, 1]`, so
/// `phi +- t dphi` stays in `[-1, 1]` for `t <= 1`.
pub fn random_feasible_direction(phi: &Field, rng: &mut impl rand::Rng) -> Field {
    let v = phi
        .values()
        .iter()
        .map(|p| rng.gen_range(-1.0..1.0) * 0.5 * (1.0 - p * p).max(0.0))
        .collect();
    phi.with_values(v).expect("same length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::{Alpha, AlphaSchedule};
    use crate::discretization::Discretization;
    use crate::functions::{analytic, constant, zero, SharedFunction};
    use crate::mesh::build_structured_mesh;
    use crate::objective::eval_j_eps;
    use crate::state::solve_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(n: usize, scale: f64) -> (StateProblem, ObjectiveParams) {
        let d = Discretization::structured(build_structured_mesh(n, n, 1.0, 1.0).unwrap()).unwrap();
        let g: SharedFunction = analytic(
            move |x| [scale * x[1] * (1.0 - x[1]), 0.0],
            move |x| [[0.0, scale * (1.0 - 2.0 * x[1])], [0.0, 0.0]],
        );
        let force = constant([0.3 * scale, -0.1 * scale]);
        let phi = Field::interpolate_scalar(&d.spaces.design, |x| 0.8 * (6.0 * (x[0] - 0.4) * (x[1] - 0.6)).tanh());
        let alpha = AlphaSchedule::new(5.0, 0.5).unwrap().at(0.1).unwrap();
        let p = StateProblem::new(d, 1.0, force.clone(), g, phi, alpha).unwrap();
        let params = ObjectiveParams::total_potential_power(1.0, force, 0.05).unwrap();
        (p, params)
    }

    #[test]
    fn zero_data_gives_zero_adjoint() {
        let (p, _) = setup(4, 1.0);
        let p = StateProblem {
            force: zero(),
            boundary: zero(),
            ..p
        };
        let params = ObjectiveParams::total_potential_power(1.0, zero(), 0.05).unwrap();
        let s = solve_state(&p, None).unwrap();
        let a = solve_adjoint(&p, &s, &params).unwrap();
        assert_eq!(a.velocity.max_abs(), 0.0);
        // gradient reduces to the GL part
        let d = reduced_derivative(&p, &s, &a, &params, 0.1).unwrap();
        let gl = gl_derivative(&p, 0.05, 0.1);
        assert_eq!(d, gl);
    }

    #[test]
    fn stokes_regime_adjoint_vanishes() {
        // for total potential power the state is the minimizer of the
        // penalized energy, so the adjoint velocity vanishes up to convection
        let (p, _) = setup(8, 1e-4);
        let p = p.with_alpha(Alpha::Zero);
        let params = ObjectiveParams::total_potential_power(1.0, p.force.clone(), 0.05).unwrap();
        let s = solve_state(&p, None).unwrap();
        let a = solve_adjoint(&p, &s, &params).unwrap();
        assert!(a.velocity.max_abs() <= 1e-6 * s.velocity.max_abs());
        assert!(a.residual <= 1e-10);
    }

    #[test]
    fn adjoint_matches_linearized_state() {
        let (p, params) = setup(8, 4.0);
        let s = solve_state(&p, None).unwrap();
        let a = solve_adjoint(&p, &s, &params).unwrap();
        assert!(a.residual <= 1e-10, "{}", a.residual);
        assert!(a.pressure.values().iter().all(|v| v.is_finite()));
        let d = reduced_derivative(&p, &s, &a, &params, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let v: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dphi = Field::new(p.disc.spaces.design.clone(), v).unwrap();
            let via_adjoint = dot(&d, dphi.values());
            let via_chain = chain_rule_derivative(&p, &s, &params, 0.1, &dphi).unwrap();
            assert!((via_adjoint - via_chain).abs() <= 1e-8 * via_adjoint.abs().max(1e-12), "{via_adjoint} {via_chain}");
        }
        let zero_dir = Field::zeros(&p.disc.spaces.design);
        assert_eq!(solve_linearized_state(&p, &s, &zero_dir).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, params) = setup(8, 4.0);
        let eps = 0.1;
        let s = solve_state(&p, None).unwrap();
        let a = solve_adjoint(&p, &s, &params).unwrap();
        let d = reduced_derivative(&p, &s, &a, &params, eps).unwrap();
        let j = |phi: &Field| {
            let q = p.with_phi(phi.clone());
            let st = solve_state(&q, Some(&s)).unwrap();
            eval_j_eps(&q, &st, &params, eps).unwrap().total
        };
        let dphi = Field::interpolate_scalar(&p.disc.spaces.design, |x| (3.0 * x[0]).sin() * x[1]);
        let exact = dot(&d, dphi.values());
        let t = 1e-4;
        let mut plus = p.phi.clone();
        plus.axpy(t, &dphi);
        let mut minus = p.phi.clone();
        minus.axpy(-t, &dphi);
        let fd = (j(&plus) - j(&minus)) / (2.0 * t);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{fd} vs {exact}");
    }

    #[test]
    fn riesz_maps() {
        let (p, _) = setup(6, 1.0);
        for inner in [InnerProduct::L2, InnerProduct::H1] {
            let r = RieszMap::new(&p, inner, 0.1).unwrap();
            let d: Vec<f64> = (0..p.disc.spaces.design.ndofs()).map(|i| (i as f64).sin()).collect();
            let g = r.apply(&d).unwrap();
            // <g, v>_R = d(v)
            let v: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 0.3).cos()).collect();
            assert!((r.inner_product(&g, &v) - dot(&d, &v)).abs() < 1e-10);
        }
        let _ = Arc::clone(&p.disc);
    }

    #[test]
    fn v_curve_has_an_accurate_minimum() {
        let (p, params) = setup(8, 4.0);
        let s = solve_state(&p, None).unwrap();
        let a = solve_adjoint(&p, &s, &params).unwrap();
        let d = reduced_derivative(&p, &s, &a, &params, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dphi = random_feasible_direction(&p.phi, &mut rng);
        let curve = gradient_v_curve(&p, &s, &params, 0.1, &d, &dphi, &default_fd_steps()).unwrap();
        assert_eq!(curve.len(), 17);
        let best = v_curve_minimum(&curve).unwrap();
        assert!(best.rel_error <= 1e-6, "{curve:?}");
        // truncation error dominates the largest step
        assert!(curve[0].rel_error > best.rel_error);
    }
}
