//! Geometric variations of the design by the flow of a velocity field:
//! admissible velocities, design transport, the linearized state and the
//! Eulerian derivative of `j_eps`.

use std::sync::Arc;

use serde::Serialize;

use crate::assembly::{assemble_scalar_functional, assemble_vector_functional, integrate};
use crate::error::{Error, Result};
use crate::functions::{Hessian, Monomial, Polynomial, SharedFunction};
use crate::mesh::Mesh;
use crate::objective::{eval_j_eps, potential, ObjectiveParams};
use crate::optimizer::Iterate;
use crate::quadrature::gauss_legendre;
use crate::space::Field;
use crate::sparse::norm2;
use crate::state::{solve_state, state_jacobian, StateProblem, StateSolution};

/// Admissible design velocity `V(0)`: tangential on the boundary and zero
/// wherever the Dirichlet data is nonzero. Autonomous flows only.
#[derive(Clone)]
pub struct DesignVelocity {
    pub name: String,
    field: SharedFunction,
}

impl std::fmt::Debug for DesignVelocity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DesignVelocity").field("name", &self.name).finish_non_exhaustive()
    }
}

impl DesignVelocity {
    /// Validates `V.n = 0` at boundary quadrature points and `V = 0` at every
    /// boundary node carrying nonzero data.
    pub fn new(name: impl Into<String>, field: SharedFunction, problem: &StateProblem) -> Result<Self> {
        let mesh = problem.mesh();
        let (xs, _) = gauss_legendre(3);
        for be in mesh.boundary_edges() {
            let [a, b] = mesh.edges()[be.edge];
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            for s in [-1.0].into_iter().chain(xs.iter().cloned()).chain([1.0]) {
                let t = 0.5 * (s + 1.0);
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                let v = field.value(x);
                let vn = v[0] * be.normal[0] + v[1] * be.normal[1];
                if vn.abs() > 1e-10 {
                    return Err(Error::InadmissibleVelocity(format!(
                        "V.n = {vn:.3e} at boundary point ({:.4}, {:.4})",
                        x[0], x[1]
                    )));
                }
            }
        }
        let vel = &problem.disc.spaces.velocity;
        let nn = vel.n_nodes();
        let g = problem.boundary_values();
        for node in 0..nn {
            if g[node] != 0.0 || g[nn + node] != 0.0 {
                let x = vel.node_coords()[node];
                let v = field.value(x);
                if v[0].hypot(v[1]) > 1e-10 {
                    return Err(Error::InadmissibleVelocity(format!(
                        "V = ({:.3e}, {:.3e}) where the boundary data is nonzero at ({:.4}, {:.4})",
                        v[0], v[1], x[0], x[1]
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            field,
        })
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        self.field.value(x)
    }

    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        self.field.jacobian(x)
    }

    pub fn divergence(&self, x: [f64; 2]) -> f64 {
        self.field.divergence(x)
    }

    pub fn hessian(&self, x: [f64; 2]) -> Hessian {
        self.field.hessian(x)
    }

    pub fn field(&self) -> &SharedFunction {
        &self.field
    }

    /// `V1 + V2` (admissibility is preserved).
    pub fn sum(&self, other: &DesignVelocity) -> DesignVelocity {
        DesignVelocity {
            name: format!("{}+{}", self.name, other.name),
            field: Arc::new(crate::functions::Sum(self.field.clone(), other.field.clone())),
        }
    }

    pub fn scaled(&self, s: f64) -> DesignVelocity {
        DesignVelocity {
            name: format!("{s}*{}", self.name),
            field: Arc::new(crate::functions::Scaled(s, self.field.clone())),
        }
    }
}

/// Flow `T_t` of an autonomous velocity, integrated with classical RK4.
#[derive(Debug, Clone)]
pub struct TransportFlow {
    pub velocity: DesignVelocity,
    pub substeps: usize,
}

impl TransportFlow {
    pub fn new(velocity: DesignVelocity) -> Self {
        Self { velocity, substeps: 32 }
    }

    /// `T_t(x)`; negative `t` gives the inverse flow.
    pub fn apply(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let h = t / self.substeps as f64;
        let v = |p: [f64; 2]| self.velocity.value(p);
        let add = |p: [f64; 2], k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
        let mut p = x;
        for _ in 0..self.substeps {
            let k1 = v(p);
            let k2 = v(add(p, k1, 0.5 * h));
            let k3 = v(add(p, k2, 0.5 * h));
            let k4 = v(add(p, k3, h));
            for i in 0..2 {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        p
    }

    pub fn inverse(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.apply(x, -t)
    }
}

/// `phi o T_t^{-1}` sampled at the design nodes, clipped to `[-1, 1]`.
pub fn transport_design(phi: &Field, flow: &TransportFlow, t: f64) -> Result<Field> {
    if t == 0.0 {
        return Ok(phi.clone());
    }
    let mesh: &Mesh = phi.space().mesh();
    let mut out = Vec::with_capacity(phi.values().len());
    for (node, &x) in mesh.vertices().iter().enumerate() {
        let y = flow.inverse(x, t);
        let distance = mesh.distance_outside(y);
        if distance > 1e-8 {
            return Err(Error::FlowLeftDomain { node, distance });
        }
        let (w, h) = (mesh.width(), mesh.height());
        let y = [y[0].clamp(0.0, w), y[1].clamp(0.0, h)];
        out.push(phi.eval_scalar(y).clamp(-1.0, 1.0));
    }
    phi.with_values(out)
}

/// Material derivative of the state under the flow of `V`.
#[derive(Debug, Clone)]
pub struct GeometricLinearization {
    pub velocity: Field,
    pub pressure: Field,
    /// Relative residual of the linear solve.
    pub residual: f64,
    /// `int grad u : DV` against the constant pressure test, removed from the
    /// constraint (the pressure test space is mean-free).
    pub compatibility_defect: f64,
    /// `int q (tr(Du DV))` for every pressure basis function, mean-free part.
    pub constraint: Vec<f64>,
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_vec(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Solves the linearized state for the geometric variation `V`:
/// the Newton Jacobian applied to `(u', p')` equals the transport terms of
/// the momentum equation, and `int q div u' = int q tr(Du DV)` for mean-free
/// pressure tests `q`.
pub fn solve_linearized_geometric(
    problem: &StateProblem,
    state: &StateSolution,
    v: &DesignVelocity,
) -> Result<GeometricLinearization> {
    if state.margin >= 1.0 {
        return Err(Error::MarginTooLarge { margin: state.margin });
    }
    let disc = &problem.disc;
    let mu = problem.mu;
    let alpha = problem.alpha;
    let phi = &problem.phi;
    let u = &state.velocity;
    let force = problem.force.clone();
    let rhs_u = assemble_vector_functional(&disc.spaces.velocity, &disc.rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let uv = u.vector_at(t, l);
        let a = u.jacobian_at(t, l);
        let d = v.jacobian(qp.x);
        let hs = v.hessian(qp.x);
        let vv = v.value(qp.x);
        let gdv = [hs[0][0][0] + hs[1][1][0], hs[0][0][1] + hs[1][1][1]];
        let al = alpha.value(phi.scalar_at(t, l).clamp(-1.0, 1.0));
        let ad = mat_mul(&a, &d);
        let adt = mat_mul(&a, &transpose(&d));
        let dta = mat_mul(&transpose(&d), &a);
        let mut grad = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                // mu (Du DV + Du DV^T - DV^T Du) : Dz, the divV terms cancel
                grad[i][j] = mu * (ad[i][j] + adt[i][j] - dta[i][j]);
            }
        }
        let mut val = [0.0; 2];
        for k in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += a[i][j] * hs[i][k][j];
                }
            }
            val[k] -= mu * s;
            val[k] += mu * (a[k][0] * gdv[0] + a[k][1] * gdv[1]);
        }
        let adu = mat_vec(&a, mat_vec(&d, uv));
        let au = mat_vec(&a, uv);
        let dt_au = mat_vec(&transpose(&d), au);
        let f = force.value(qp.x);
        let df_v = mat_vec(&force.jacobian(qp.x), vv);
        let dt_f = mat_vec(&transpose(&d), f);
        let dt_u = mat_vec(&transpose(&d), uv);
        for k in 0..2 {
            val[k] += adu[k] - dt_au[k] + df_v[k] + dt_f[k] - al * dt_u[k];
        }
        (val, grad)
    });
    let mut c = assemble_scalar_functional(&disc.spaces.pressure, &disc.rule, |qp| {
        let a = u.jacobian_at(qp.triangle, &qp.lambda);
        let d = v.jacobian(qp.x);
        (a[0][0] * d[0][0] + a[0][1] * d[1][0] + a[1][0] * d[0][1] + a[1][1] * d[1][1], [0.0; 2])
    });
    let defect: f64 = c.iter().sum();
    let measure = disc.mesh().measure();
    for (ci, w) in c.iter_mut().zip(&disc.pressure_weights) {
        *ci -= defect * w / measure;
    }
    let lin = state_jacobian(problem, state)?;
    let rp: Vec<f64> = c.iter().map(|x| -x).collect();
    let rhs = lin.layout.gather(&rhs_u, &rp);
    let x = lin.factor.solve(&rhs)?;
    let r: Vec<f64> = lin.system.matvec(&x).iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let residual = norm2(&r) / norm2(&rhs).max(f64::MIN_POSITIVE);
    let (du, dp) = lin.layout.scatter(&x);
    Ok(GeometricLinearization {
        velocity: Field::new(disc.spaces.velocity.clone(), du)?,
        pressure: Field::new(disc.spaces.pressure.clone(), dp)?,
        residual,
        compatibility_defect: defect,
        constraint: c,
    })
}

/// `max_q |int q (div u' - tr(Du DV))|` over the mean-free parts of the
/// pressure basis functions.
pub fn divergence_identity_residual(problem: &StateProblem, lin: &GeometricLinearization) -> f64 {
    let b = problem.disc.divergence.matvec(lin.velocity.values());
    b.iter().zip(&lin.constraint).map(|(x, c)| (x - c).abs()).fold(0.0, f64::max)
}

/// Term breakdown of the Eulerian derivative of `j_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeDerivative {
    pub alpha_term: f64,
    pub f_term: f64,
    pub gl_term: f64,
    pub total: f64,
}

/// `d/dt j_eps(phi o T_t^{-1})` at `t = 0` from the material derivative.
pub fn eval_shape_derivative(
    problem: &StateProblem,
    state: &StateSolution,
    lin: &GeometricLinearization,
    v: &DesignVelocity,
    params: &ObjectiveParams,
    eps: f64,
) -> Result<ShapeDerivative> {
    let disc = &problem.disc;
    let rule = &disc.rule;
    let mesh = disc.mesh();
    let alpha = problem.alpha;
    let phi = &problem.phi;
    let u = &state.velocity;
    let ud = &lin.velocity;
    let alpha_term = integrate(mesh, rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let uv = u.vector_at(t, l);
        let w = ud.vector_at(t, l);
        let al = alpha.value(phi.scalar_at(t, l).clamp(-1.0, 1.0));
        al * (uv[0] * w[0] + uv[1] * w[1] + 0.5 * (uv[0] * uv[0] + uv[1] * uv[1]) * v.divergence(qp.x))
    });
    let integrand = &params.integrand;
    let f_term = integrate(mesh, rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let uv = u.vector_at(t, l);
        let a = u.jacobian_at(t, l);
        let w = ud.vector_at(t, l);
        let dw = ud.jacobian_at(t, l);
        let d = v.jacobian(qp.x);
        let vv = v.value(qp.x);
        let (fx, fu, fdu) = integrand.derivatives(qp.x, uv, a);
        let ad = mat_mul(&a, &d);
        let mut s = fx[0] * vv[0] + fx[1] * vv[1] + fu[0] * w[0] + fu[1] * w[1];
        for i in 0..2 {
            for j in 0..2 {
                s += fdu[i][j] * (dw[i][j] - ad[i][j]);
            }
        }
        s + integrand.value(qp.x, uv, a) * v.divergence(qp.x)
    });
    if let Some(&bad) = phi.values().iter().find(|p| p.abs() > 1.0 + 1e-12) {
        return Err(Error::PotentialOutOfRange { value: bad });
    }
    let gamma = params.gamma;
    let gl_term = gamma
        * integrate(mesh, rule, |qp| {
            let (t, l) = (qp.triangle, &qp.lambda);
            let g = phi.scalar_gradient_at(t, l);
            let p = phi.scalar_at(t, l).clamp(-1.0, 1.0);
            let d = v.jacobian(qp.x);
            let dg = mat_vec(&d, g);
            let psi = potential(p).unwrap_or(0.0);
            (0.5 * eps * (g[0] * g[0] + g[1] * g[1]) + psi / eps) * v.divergence(qp.x) - eps * (g[0] * dg[0] + g[1] * dg[1])
        });
    Ok(ShapeDerivative {
        alpha_term,
        f_term,
        gl_term,
        total: alpha_term + f_term + gl_term,
    })
}

/// Linearized state and derivative in one call.
pub fn shape_derivative(
    problem: &StateProblem,
    state: &StateSolution,
    v: &DesignVelocity,
    params: &ObjectiveParams,
    eps: f64,
) -> Result<ShapeDerivative> {
    let lin = solve_linearized_geometric(problem, state, v)?;
    eval_shape_derivative(problem, state, &lin, v, params, eps)
}

/// `j_eps(phi o T_t^{-1})` with a re-solved state (warm-started from `state`).
pub fn transported_objective(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    flow: &TransportFlow,
    t: f64,
) -> Result<f64> {
    let phi_t = transport_design(&problem.phi, flow, t)?;
    let p = problem.with_phi(phi_t);
    let s = solve_state(&p, Some(state))?;
    Ok(eval_j_eps(&p, &s, params, eps)?.total)
}

/// Central difference of the transported objective with step `t`.
pub fn fd_shape_derivative(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    v: &DesignVelocity,
    t: f64,
) -> Result<f64> {
    let flow = TransportFlow::new(v.clone());
    let plus = transported_objective(problem, state, params, eps, &flow, t)?;
    let minus = transported_objective(problem, state, params, eps, &flow, -t)?;
    Ok((plus - minus) / (2.0 * t))
}

/// `(t, fd, relative error)` over the steps `t_k`; the smallest error is the
/// sweet spot.
pub fn fd_sweep(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    v: &DesignVelocity,
    exact: f64,
    steps: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    steps
        .iter()
        .map(|&t| {
            let fd = fd_shape_derivative(problem, state, params, eps, v, t)?;
            Ok((t, fd, (fd - exact).abs() / exact.abs()))
        })
        .collect()
}

/// Residual of the geometric optimality condition for one velocity.
#[derive(Debug, Clone, Serialize)]
pub struct GeometricResidual {
    pub name: String,
    pub derivative: f64,
    pub multiplier_term: f64,
    pub residual: f64,
    /// Sum of the magnitudes of all contributions.
    pub scale: f64,
}

impl GeometricResidual {
    pub fn normalized(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual.abs() / self.scale
        } else {
            0.0
        }
    }
}

/// `r(V) = d/dt j_eps + lambda int phi div V` for each velocity.
pub fn optimality_residual_geometric(
    problem: &StateProblem,
    state: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    lambda: f64,
    family: &[DesignVelocity],
) -> Result<Vec<GeometricResidual>> {
    let disc = &problem.disc;
    family
        .iter()
        .map(|v| {
            let d = shape_derivative(problem, state, v, params, eps)?;
            let m = lambda
                * integrate(disc.mesh(), &disc.rule, |qp| {
                    problem.phi.scalar_at(qp.triangle, &qp.lambda) * v.divergence(qp.x)
                });
            Ok(GeometricResidual {
                name: v.name.clone(),
                derivative: d.total,
                multiplier_term: m,
                residual: d.total + m,
                scale: d.alpha_term.abs() + d.f_term.abs() + d.gl_term.abs() + m.abs(),
            })
        })
        .collect()
}

/// One row of an `eps` sweep of the shape derivative.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub derivative: f64,
    /// `|d_{eps} - d_{previous eps}|` (NaN on the first row).
    pub cauchy: f64,
}

/// Shape derivative for one velocity across designs and states obtained at
/// decreasing `eps` (the problems carry their own `alpha` and design).
pub fn shape_derivative_eps_sweep(
    levels: &[(f64, StateProblem, StateSolution)],
    params: &ObjectiveParams,
    v: &DesignVelocity,
) -> Result<Vec<SweepRow>> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for (eps, p, s) in levels {
        let d = shape_derivative(p, s, v, params, *eps)?.total;
        let cauchy = rows.last().map_or(f64::NAN, |r| (d - r.derivative).abs());
        rows.push(SweepRow {
            eps: *eps,
            derivative: d,
            cauchy,
        });
    }
    Ok(rows)
}

/// `(x (w - x) y (h - y))^k`-weighted polynomial factor, as monomials.
fn bubble(width: f64, height: f64) -> Vec<Monomial> {
    let s = 16.0 / (width * width * height * height);
    // x (w - x) y (h - y) = (w x - x^2)(h y - y^2)
    let mut out = Vec::new();
    for (cx, px) in [(width, 1), (-1.0, 2)] {
        for (cy, py) in [(height, 1), (-1.0, 2)] {
            out.push(Monomial {
                coef: s * cx * cy,
                px,
                py,
            });
        }
    }
    out
}

fn times(a: &[Monomial], b: &[Monomial]) -> Vec<Monomial> {
    let mut out = Vec::new();
    for m in a {
        for n in b {
            out.push(Monomial {
                coef: m.coef * n.coef,
                px: m.px + n.px,
                py: m.py + n.py,
            });
        }
    }
    out
}

fn mono(coef: f64, px: u32, py: u32) -> Monomial {
    Monomial { coef, px, py }
}

/// Eight polynomial velocities vanishing on the whole boundary: bubble
/// times translations, axis stretches, shears, a rotation and a dilation
/// about the domain center. Admissible for any boundary data.
pub fn canonical_velocities(problem: &StateProblem) -> Result<Vec<DesignVelocity>> {
    let mesh = problem.mesh();
    let (w, h) = (mesh.width(), mesh.height());
    let b = bubble(w, h);
    let (cx, cy) = (0.5 * w, 0.5 * h);
    let one = vec![mono(1.0, 0, 0)];
    let xs = vec![mono(1.0, 1, 0), mono(-cx, 0, 0)];
    let ys = vec![mono(1.0, 0, 1), mono(-cy, 0, 0)];
    let neg_ys = vec![mono(-1.0, 0, 1), mono(cy, 0, 0)];
    let fields: Vec<(&str, Vec<Monomial>, Vec<Monomial>)> = vec![
        ("translate_x", times(&b, &one), vec![]),
        ("translate_y", vec![], times(&b, &one)),
        ("stretch_x", times(&b, &xs), vec![]),
        ("stretch_y", vec![], times(&b, &ys)),
        ("shear_x", times(&b, &ys), vec![]),
        ("shear_y", vec![], times(&b, &xs)),
        ("rotate", times(&b, &neg_ys), times(&b, &xs)),
        ("dilate", times(&b, &xs), times(&b, &ys)),
    ];
    fields
        .into_iter()
        .map(|(name, x, y)| DesignVelocity::new(name, Arc::new(Polynomial { x, y }), problem))
        .collect()
}

/// Convenience: state, linearization and derivative for the design of an
/// iterate.
pub fn iterate_shape_derivative(
    problem: &StateProblem,
    iterate: &Iterate,
    v: &DesignVelocity,
    params: &ObjectiveParams,
    eps: f64,
) -> Result<ShapeDerivative> {
    let p = problem.with_phi(iterate.phi.clone());
    shape_derivative(&p, &iterate.state, v, params, eps)
}
