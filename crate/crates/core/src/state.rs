//! Brinkman-penalized stationary Navier-Stokes state equation.

use std::sync::{Arc, OnceLock};

use faer::sparse::linalg::solvers::SymbolicLu;

use log::{debug, warn};

use crate::alpha::Alpha;
use crate::assembly::{
    assemble_convection, assemble_convection_transposed, assemble_load, assemble_vector_functional,
    assemble_weighted_mass, gradient_norm,
};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::functions::SharedFunction;
use crate::mesh::Mesh;
use crate::saddle::SaddleLayout;
use crate::sharp::SharpMask;
use crate::space::{Field, SpaceKind};
use crate::sparse::{norm2, CsrMatrix, Factorization, SquareSystem};

/// Nonlinear solver controls.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    /// Picard runs until the residual dropped by this factor.
    pub picard_reduction: f64,
    pub max_picard: usize,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_iter: 50,
            picard_reduction: 10.0,
            max_picard: 20,
            armijo: 1e-4,
            max_halvings: 20,
        }
    }
}

/// Data of one state solve.
#[derive(Clone)]
pub struct StateProblem {
    pub disc: Arc<Discretization>,
    pub mu: f64,
    pub force: SharedFunction,
    pub boundary: SharedFunction,
    pub phi: Field,
    pub alpha: Alpha,
    pub options: SolverOptions,
}

impl std::fmt::Debug for StateProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateProblem")
            .field("mu", &self.mu)
            .field("alpha", &self.alpha)
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

impl StateProblem {
    pub fn new(
        disc: Arc<Discretization>,
        mu: f64,
        force: SharedFunction,
        boundary: SharedFunction,
        phi: Field,
        alpha: Alpha,
    ) -> Result<Self> {
        let p = Self {
            disc,
            mu,
            force,
            boundary,
            phi,
            alpha,
            options: SolverOptions::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity {} must be positive", self.mu)));
        }
        if self.phi.space().kind() != SpaceKind::Design || !self.phi.space().same_mesh(&self.disc.spaces.design) {
            return Err(Error::SpaceMismatch("phase field must live on the design space".into()));
        }
        self.alpha.validate()?;
        let flux = self.boundary_flux();
        if flux.abs() > 1e-10 {
            return Err(Error::FluxViolation { flux });
        }
        Ok(())
    }

    pub fn with_phi(&self, phi: Field) -> Self {
        Self { phi, ..self.clone() }
    }

    pub fn with_alpha(&self, alpha: Alpha) -> Self {
        Self { alpha, ..self.clone() }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.disc.mesh()
    }

    /// Full velocity vector holding `g` on Dirichlet DOFs and zero elsewhere.
    pub fn boundary_values(&self) -> Vec<f64> {
        let vel = &self.disc.spaces.velocity;
        let n = vel.n_nodes();
        let mask = vel.dirichlet_mask();
        let mut out = vec![0.0; vel.ndofs()];
        for node in 0..n {
            if mask[node] {
                let g = self.boundary.value(vel.node_coords()[node]);
                out[node] = g[0];
                out[n + node] = g[1];
            }
        }
        out
    }

    /// `int_{dOmega} g_h . n` of the quadratic trace (Simpson's rule is exact).
    pub fn boundary_flux(&self) -> f64 {
        let mesh = self.mesh();
        let nv = mesh.n_vertices();
        let vel = &self.disc.spaces.velocity;
        let xs = vel.node_coords();
        let mut flux = 0.0;
        for be in mesh.boundary_edges() {
            let [a, b] = mesh.edges()[be.edge];
            let gn = |node: usize| {
                let g = self.boundary.value(xs[node]);
                g[0] * be.normal[0] + g[1] * be.normal[1]
            };
            flux += mesh.edge_length(be.edge) / 6.0 * (gn(a) + 4.0 * gn(nv + be.edge) + gn(b));
        }
        flux
    }

    /// `mu K + M_alpha`.
    pub(crate) fn base_operator(&self) -> Result<CsrMatrix> {
        let k = self.disc.velocity_stiffness.scaled(self.mu);
        if self.alpha == Alpha::Zero {
            return Ok(k);
        }
        let alpha = self.alpha;
        let m = assemble_weighted_mass(&self.disc.spaces.velocity, &self.phi, |p| alpha.value(p), &self.disc.rule)?;
        Ok(k.add_scaled(&m, 1.0))
    }

    pub(crate) fn load(&self) -> Vec<f64> {
        if self.force.is_zero() {
            return vec![0.0; self.disc.spaces.velocity.ndofs()];
        }
        let f = self.force.clone();
        assemble_load(&self.disc.spaces.velocity, &self.disc.rule, move |x| f.value(x))
    }

    pub(crate) fn standard_layout(&self) -> SaddleLayout {
        let mut pinned = vec![false; self.disc.spaces.pressure.ndofs()];
        pinned[0] = true;
        SaddleLayout::new(self.disc.spaces.velocity.dirichlet_mask(), &pinned)
    }
}

/// Converged velocity/pressure pair with diagnostics.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub velocity: Field,
    pub pressure: Field,
    pub residual: f64,
    pub history: Vec<f64>,
    pub newton_steps: usize,
    pub grad_norm: f64,
    pub margin: f64,
    /// `||B u||_2` over all pressure test functions.
    pub divergence_residual: f64,
}

impl StateSolution {
    /// Margin below one certifies uniqueness.
    pub fn certified(&self) -> bool {
        self.margin < 1.0
    }

    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// `K_Omega` of the continuity estimate for `b` in dimension 2 or 3.
pub fn k_omega(measure: f64, dim: usize) -> f64 {
    match dim {
        2 => measure.sqrt() / 2.0,
        3 => 2.0 * 2f64.sqrt() * measure.powf(1.0 / 6.0) / 3.0,
        _ => panic!("dimension must be 2 or 3"),
    }
}

/// `K_Omega ||grad u|| / mu`.
pub fn uniqueness_margin(u: &Field, mu: f64, mesh: &Mesh) -> f64 {
    let rule = crate::quadrature::TriangleRule::with_degree(2);
    margin_from_norm(gradient_norm(u, &rule), mu, mesh.measure(), 2)
}

pub fn margin_from_norm(grad_norm: f64, mu: f64, measure: f64, dim: usize) -> f64 {
    k_omega(measure, dim) * grad_norm / mu
}

/// The nonlinear system restricted to a layout.
struct Nonlinear<'a> {
    problem: &'a StateProblem,
    base: CsrMatrix,
    load: Vec<f64>,
    layout: SaddleLayout,
}

impl Nonlinear<'_> {
    fn convection(&self, u: &Field) -> Vec<f64> {
        assemble_vector_functional(&self.problem.disc.spaces.velocity, &self.problem.disc.rule, |qp| {
            let v = u.vector_at(qp.triangle, &qp.lambda);
            let j = u.jacobian_at(qp.triangle, &qp.lambda);
            (
                [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]],
                [[0.0; 2]; 2],
            )
        })
    }

    /// Reduced residual `[A u + c(u) - B^T p - F ; -B u]`.
    fn residual(&self, u: &Field, p: &[f64]) -> Vec<f64> {
        let b = &self.problem.disc.divergence;
        let mut ru = self.base.matvec(u.values());
        let c = self.convection(u);
        let btp = b.transpose_matvec(p);
        for i in 0..ru.len() {
            ru[i] += c[i] - btp[i] - self.load[i];
        }
        let rp: Vec<f64> = b.matvec(u.values()).into_iter().map(|v| -v).collect();
        self.layout.gather(&ru, &rp)
    }

    fn jacobian(&self, u: &Field, newton: bool) -> Result<CsrMatrix> {
        let rule = &self.problem.disc.rule;
        let n = assemble_convection(u, rule)?;
        let m = assemble_convection_transposed(u, rule)?;
        Ok(self.base.add_scaled(&n, 1.0).add_scaled(&m, if newton { 1.0 } else { 0.0 }))
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Damped Picard followed by Newton with Armijo backtracking on the residual.
fn solve_nonlinear(
    problem: &StateProblem,
    base: CsrMatrix,
    layout: SaddleLayout,
    fixed_values: &[f64],
    initial: Option<&StateSolution>,
    cache: Option<&OnceLock<SymbolicLu<usize>>>,
) -> Result<(Field, Vec<f64>, Vec<f64>, usize)> {
    let disc = &problem.disc;
    let opts = problem.options;
    let sys = Nonlinear {
        problem,
        base,
        load: problem.load(),
        layout,
    };
    let vel = &disc.spaces.velocity;
    let np = disc.spaces.pressure.ndofs();

    let data = Field::new(vel.clone(), fixed_values.to_vec())?;
    let r_data = norm2(&sys.residual(&data, &vec![0.0; np]));

    let (mut u, mut p) = match initial {
        Some(s) => {
            let mut v = s.velocity.values().to_vec();
            for (i, x) in v.iter_mut().enumerate() {
                if sys.layout.is_fixed_velocity(i) {
                    *x = fixed_values[i];
                }
            }
            (Field::new(vel.clone(), v)?, s.pressure.values().to_vec())
        }
        None => (data, vec![0.0; np]),
    };
    let mut r = sys.residual(&u, &p);
    let mut rn = norm2(&r);
    if !rn.is_finite() {
        return Err(Error::NotANumber("initial residual"));
    }
    let r0 = rn;
    let target = opts.rtol * r0.max(r_data) + opts.atol;
    let mut history = vec![rn];
    let mut newton = false;
    let mut picard_steps = 0;
    let mut newton_steps = 0;
    let mut local: Option<SymbolicLu<usize>> = None;

    for _ in 0..opts.max_iter {
        if rn <= target {
            break;
        }
        if !newton && (rn * opts.picard_reduction <= r0 || picard_steps >= opts.max_picard) {
            newton = true;
        }
        let jac = sys.jacobian(&u, newton)?;
        let system = sys.layout.system(&jac, &disc.divergence)?;
        // Picard and Newton matrices share one pattern
        let symbolic = match cache {
            Some(c) => match c.get() {
                Some(s) => s,
                None => {
                    let s = system.symbolic()?;
                    c.get_or_init(|| s)
                }
            },
            None => {
                if local.is_none() {
                    local = Some(system.symbolic()?);
                }
                local.as_ref().unwrap()
            }
        };
        let fac = system.factor(Some(symbolic))?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = fac.solve(&rhs)?;
        let (du, dp) = sys.layout.scatter(&dx);

        let mut step = 1.0;
        let mut best: Option<(Field, Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..=opts.max_halvings {
            let mut ut = u.clone();
            for (x, d) in ut.values_mut().iter_mut().zip(&du) {
                *x += step * d;
            }
            let pt: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + step * b).collect();
            let rt = sys.residual(&ut, &pt);
            let rtn = norm2(&rt);
            let armijo = rtn <= (1.0 - opts.armijo * step) * rn;
            if rtn.is_finite() && best.as_ref().is_none_or(|b| rtn < b.3) {
                best = Some((ut, pt, rt, rtn));
            }
            if armijo {
                break;
            }
            step *= 0.5;
        }
        let Some((ut, pt, rt, rtn)) = best else {
            return Err(Error::NotANumber("line search residual"));
        };
        if !finite(ut.values()) {
            return Err(Error::NotANumber("state update"));
        }
        let du_max = du.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let u_max = ut.max_abs();
        u = ut;
        p = pt;
        r = rt;
        let stalled = rtn >= rn;
        rn = rtn;
        history.push(rn);
        if newton {
            newton_steps += 1;
        } else {
            picard_steps += 1;
        }
        debug!(
            "state iter {} ({}) residual {:.3e} step {}",
            history.len() - 1,
            if newton { "newton" } else { "picard" },
            rn,
            step
        );
        // round-off floor: a full Newton step that no longer moves the iterate
        if newton && step == 1.0 && du_max <= 1e-13 * (1.0 + u_max) {
            break;
        }
        if stalled && newton && du_max <= 1e-10 * (1.0 + u_max) {
            break;
        }
    }
    if rn > target {
        return Err(Error::NonConvergence {
            iterations: history.len() - 1,
            last: rn,
            history,
        });
    }
    Ok((u, p, history, newton_steps))
}

fn finish(
    problem: &StateProblem,
    u: Field,
    mut p: Vec<f64>,
    history: Vec<f64>,
    newton_steps: usize,
    normalize: bool,
) -> Result<StateSolution> {
    let disc = &problem.disc;
    if normalize {
        let mean = crate::sparse::dot(&disc.pressure_weights, &p) / disc.mesh().measure();
        for v in &mut p {
            *v -= mean;
        }
    }
    let grad_norm = gradient_norm(&u, &disc.rule);
    let margin = margin_from_norm(grad_norm, problem.mu, disc.mesh().measure(), 2);
    if margin >= 1.0 {
        warn!("uniqueness margin {margin:.3} >= 1: solution not certified unique");
    }
    let divergence_residual = norm2(&disc.divergence.matvec(u.values()));
    Ok(StateSolution {
        pressure: Field::new(disc.spaces.pressure.clone(), p)?,
        velocity: u,
        residual: *history.last().unwrap(),
        history,
        newton_steps,
        grad_norm,
        margin,
        divergence_residual,
    })
}

/// Newton Jacobian of the state equation, reduced to the standard layout.
pub struct Linearization {
    pub layout: SaddleLayout,
    pub system: SquareSystem,
    pub factor: Factorization,
}

/// Newton Jacobian of the state equation at `state`, reduced to the
/// standard layout. Reuses the cached symbolic factorization.
pub fn state_jacobian(problem: &StateProblem, state: &StateSolution) -> Result<Linearization> {
    let rule = &problem.disc.rule;
    let u = &state.velocity;
    let a = problem
        .base_operator()?
        .add_scaled(&assemble_convection(u, rule)?, 1.0)
        .add_scaled(&assemble_convection_transposed(u, rule)?, 1.0);
    let layout = problem.standard_layout();
    let system = layout.system(&a, &problem.disc.divergence)?;
    let cache = &problem.disc.state_symbolic;
    let symbolic = match cache.get() {
        Some(s) => s,
        None => {
            let s = system.symbolic()?;
            cache.get_or_init(|| s)
        }
    };
    let factor = system.factor(Some(symbolic)).map_err(|e| match e {
        Error::Singular { detail, .. } => Error::Singular {
            detail,
            margin: Some(state.margin),
        },
        other => other,
    })?;
    Ok(Linearization { layout, system, factor })
}

/// Solves the state equation for `problem.phi`.
pub fn solve_state(problem: &StateProblem, initial_guess: Option<&StateSolution>) -> Result<StateSolution> {
    problem.validate()?;
    let base = problem.base_operator()?;
    let layout = problem.standard_layout();
    let g = problem.boundary_values();
    let cache = Some(&problem.disc.state_symbolic);
    let (u, p, history, newton_steps) = solve_nonlinear(problem, base, layout, &g, initial_guess, cache)?;
    finish(problem, u, p, history, newton_steps, true)
}

/// Discretely divergence-free extension of the boundary data (Stokes solve).
pub fn lift_boundary_data(problem: &StateProblem) -> Result<Field> {
    let flux = problem.boundary_flux();
    if flux.abs() > 1e-10 {
        return Err(Error::FluxViolation { flux });
    }
    let disc = &problem.disc;
    let g = problem.boundary_values();
    let vel = &disc.spaces.velocity;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(Field::zeros(vel));
    }
    let layout = problem.standard_layout();
    let k = &disc.velocity_stiffness;
    let b = &disc.divergence;
    let ru = k.matvec(&g);
    let rp: Vec<f64> = b.matvec(&g).into_iter().map(|v| -v).collect();
    let rhs: Vec<f64> = layout.gather(&ru, &rp).into_iter().map(|v| -v).collect();
    let x = layout.system(k, b)?.factor(None)?.solve(&rhs)?;
    let (du, _) = layout.scatter(&x);
    let v = g.iter().zip(&du).map(|(a, b)| a + b).collect();
    Field::new(vel.clone(), v)
}

/// Solves the state equation on the fluid region of `mask` with zero
/// velocity on every node touching a solid cell and no Brinkman term.
pub fn solve_sharp_state(problem: &StateProblem, mask: &SharpMask) -> Result<StateSolution> {
    let disc = &problem.disc;
    let mesh = disc.mesh();
    let vel = &disc.spaces.velocity;
    let nn = vel.n_nodes();
    let g = problem.boundary_values();
    let solid = mask.solid_velocity_nodes(mesh);
    let dirichlet = vel.dirichlet_mask();
    let mut fixed = dirichlet.to_vec();
    for node in 0..nn {
        if solid[node] {
            for c in 0..2 {
                let dof = c * nn + node;
                if dirichlet[dof] && g[dof].abs() > 1e-14 {
                    return Err(Error::EmptyAdmissibleSpace { dof });
                }
                fixed[dof] = true;
            }
        }
    }
    // g vanishes off the boundary, so masked DOFs are already zero
    let fixed_values = g;
    let mut pinned = mask.dry_vertices(mesh);
    let roots = mask.fluid_component_roots(mesh);
    for &r in &roots {
        pinned[r] = true;
    }
    let layout = SaddleLayout::new(&fixed, &pinned);
    if layout.n() == 0 {
        let u = Field::new(vel.clone(), fixed_values)?;
        let np = disc.spaces.pressure.ndofs();
        return finish(problem, u, vec![0.0; np], vec![0.0], 0, false);
    }
    let sharp = StateProblem {
        alpha: Alpha::Zero,
        ..problem.clone()
    };
    let base = disc.velocity_stiffness.scaled(problem.mu);
    let (u, p, history, newton_steps) = solve_nonlinear(&sharp, base, layout, &fixed_values, None, None)?;
    finish(&sharp, u, p, history, newton_steps, roots.len() == 1 && mask.is_all_fluid())
}

/// Both sides of the energy identity obtained by testing the state equation
/// with `u - lift`: returns `(int alpha |w|^2 + mu ||grad w||^2, rhs)` where
/// `rhs = int f.w - int alpha lift.w - mu int grad lift : grad w - b(u, u, w)`.
pub fn energy_identity(problem: &StateProblem, state: &StateSolution) -> Result<(f64, f64)> {
    let disc = &problem.disc;
    let lift = lift_boundary_data(problem)?;
    let w: Vec<f64> = state.velocity.values().iter().zip(lift.values()).map(|(a, b)| a - b).collect();
    let m = if problem.alpha == Alpha::Zero {
        CsrMatrix::zeros(w.len(), w.len())
    } else {
        let alpha = problem.alpha;
        assemble_weighted_mass(&disc.spaces.velocity, &problem.phi, |p| alpha.value(p), &disc.rule)?
    };
    let k = &disc.velocity_stiffness;
    let lhs = m.bilinear(&w, &w) + problem.mu * k.bilinear(&w, &w);
    let load = problem.load();
    let wf = Field::new(disc.spaces.velocity.clone(), w.clone())?;
    let conv = crate::assembly::trilinear_eval(&state.velocity, &state.velocity, &wf, &disc.rule)?;
    let rhs = crate::sparse::dot(&load, &w)
        - m.bilinear(&w, lift.values())
        - problem.mu * k.bilinear(&w, lift.values())
        - conv;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{analytic, constant, zero};
    use crate::mesh::build_structured_mesh;

    fn disc(n: usize) -> Arc<Discretization> {
        Discretization::structured(build_structured_mesh(n, n, 1.0, 1.0).unwrap()).unwrap()
    }

    fn poiseuille() -> SharedFunction {
        analytic(|x| [4.0 * x[1] * (1.0 - x[1]), 0.0], |x| [[0.0, 4.0 - 8.0 * x[1]], [0.0, 0.0]])
    }

    fn problem(d: &Arc<Discretization>, force: SharedFunction, g: SharedFunction, phi: f64, alpha: Alpha) -> StateProblem {
        let phi = Field::constant(&d.spaces.design, phi);
        StateProblem::new(d.clone(), 1.0, force, g, phi, alpha).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let d = disc(4);
        let p = problem(&d, zero(), zero(), 0.2, Alpha::Linear { alpha_bar: 10.0 });
        let s = solve_state(&p, None).unwrap();
        assert_eq!(s.velocity.max_abs(), 0.0);
        assert_eq!(s.pressure.max_abs(), 0.0);
        assert_eq!(s.margin, 0.0);
    }

    #[test]
    fn poiseuille_is_reproduced() {
        let d = disc(8);
        let p = problem(&d, zero(), poiseuille(), 1.0, Alpha::Zero);
        let s = solve_state(&p, None).unwrap();
        let exact = Field::interpolate_vector(&d.spaces.velocity, |x| [4.0 * x[1] * (1.0 - x[1]), 0.0]);
        let err = s.velocity.values().iter().zip(exact.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-10, "velocity error {err}");
        // p = -8 x + 4
        let pe = Field::interpolate_scalar(&d.spaces.pressure, |x| 4.0 - 8.0 * x[0]);
        let perr = s.pressure.values().iter().zip(pe.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(perr <= 1e-8, "pressure error {perr}");
        assert!(s.divergence_residual <= 1e-9);
        let g = p.boundary_values();
        for (i, &m) in d.spaces.velocity.dirichlet_mask().iter().enumerate() {
            if m {
                assert_eq!(s.velocity.values()[i], g[i]);
            }
        }
    }

    #[test]
    fn brinkman_dominated_balance() {
        // solenoidal force vanishing on the boundary: u ~ f / alpha away from walls
        let d = disc(16);
        let pi = std::f64::consts::PI;
        let f = analytic(
            move |x| {
                let (sx, cx, sy, cy) = ((pi * x[0]).sin(), (pi * x[0]).cos(), (pi * x[1]).sin(), (pi * x[1]).cos());
                [2.0 * pi * sx * sx * sy * cy, -2.0 * pi * sx * cx * sy * sy]
            },
            |_| [[0.0; 2]; 2],
        );
        let p = problem(&d, f, zero(), -1.0, Alpha::Linear { alpha_bar: 1e4 });
        let s = solve_state(&p, None).unwrap();
        let u = s.velocity.eval_vector([0.5, 0.25]);
        assert!((u[0] - pi * 1e-4).abs() < 2e-2 * pi * 1e-4, "{u:?}");
        assert!(u[1].abs() < 1e-6);
    }

    #[test]
    fn lift_examples() {
        let d = disc(8);
        let p = problem(&d, zero(), zero(), 1.0, Alpha::Zero);
        assert_eq!(lift_boundary_data(&p).unwrap().max_abs(), 0.0);
        let p = problem(&d, zero(), poiseuille(), 1.0, Alpha::Zero);
        let l = lift_boundary_data(&p).unwrap();
        assert!(norm2(&d.divergence.matvec(l.values())) <= 1e-9);
        let bad = analytic(|x| [0.1 * x[0], 0.0], |_| [[0.1, 0.0], [0.0, 0.0]]);
        let phi = Field::constant(&d.spaces.design, 1.0);
        let e = StateProblem::new(d.clone(), 1.0, zero(), bad, phi, Alpha::Zero).unwrap_err();
        match e {
            Error::FluxViolation { flux } => assert!((flux - 0.1).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn margin_constants() {
        assert_eq!(k_omega(1.0, 2), 0.5);
        assert!((k_omega(1.0, 3) - 0.942_809_041_582_063_4).abs() < 1e-15);
        let d = disc(2);
        assert_eq!(uniqueness_margin(&Field::zeros(&d.spaces.velocity), 1.0, d.mesh()), 0.0);
        // u = (x, 0): ||grad u|| = 1
        let u = Field::interpolate_vector(&d.spaces.velocity, |x| [x[0], 0.0]);
        assert!((uniqueness_margin(&u, 1.0, d.mesh()) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn energy_identity_holds() {
        let d = disc(8);
        let phi = Field::interpolate_scalar(&d.spaces.design, |x| (4.0 * x[0] - 2.0).tanh());
        let p = StateProblem::new(d.clone(), 0.5, constant([0.3, -0.2]), poiseuille(), phi, Alpha::Linear { alpha_bar: 50.0 })
            .unwrap();
        let s = solve_state(&p, None).unwrap();
        let (lhs, rhs) = energy_identity(&p, &s).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn unique_regime_is_independent_of_the_initial_guess() {
        let d = disc(8);
        let slow = analytic(|x| [x[1] * (1.0 - x[1]), 0.0], |x| [[0.0, 1.0 - 2.0 * x[1]], [0.0, 0.0]]);
        let p = problem(&d, constant([2.0, 1.0]), slow, 0.0, Alpha::Linear { alpha_bar: 5.0 });
        let s1 = solve_state(&p, None).unwrap();
        assert!(s1.certified());
        let mut wild = s1.clone();
        wild.velocity = Field::interpolate_vector(&d.spaces.velocity, |x| [x[0].sin() * 3.0, x[1] * x[0]]);
        let s2 = solve_state(&p, Some(&wild)).unwrap();
        let diff = Field::new(
            d.spaces.velocity.clone(),
            s1.velocity.values().iter().zip(s2.velocity.values()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        assert!(gradient_norm(&diff, &d.rule) <= 1e-8);
    }

    #[test]
    fn sharp_examples() {
        let d = disc(8);
        let p = problem(&d, zero(), poiseuille(), 1.0, Alpha::Zero);
        let full = solve_state(&p, None).unwrap();
        let sharp = solve_sharp_state(&p, &SharpMask::uniform(d.mesh(), true)).unwrap();
        let err = full.velocity.values().iter().zip(sharp.velocity.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12);

        let walls = problem(&d, constant([1.0, 0.0]), zero(), 1.0, Alpha::Zero);
        let solid = solve_sharp_state(&walls, &SharpMask::uniform(d.mesh(), false)).unwrap();
        assert_eq!(solid.velocity.max_abs(), 0.0);

        let obstacle = SharpMask::from_predicate(d.mesh(), |x| (x[0] - 0.5).abs() > 0.125 || (x[1] - 0.5).abs() > 0.125);
        let blocked = solve_sharp_state(&p, &obstacle).unwrap();
        assert!(blocked.grad_norm > full.grad_norm);
        let inflow_blocked = SharpMask::from_predicate(d.mesh(), |x| x[0] > 0.2);
        assert!(matches!(
            solve_sharp_state(&p, &inflow_blocked),
            Err(Error::EmptyAdmissibleSpace { .. })
        ));
    }
}
