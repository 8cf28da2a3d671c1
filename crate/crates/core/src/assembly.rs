//! Element-loop assembly of the bilinear, trilinear and linear forms.
//!
//! Elements are processed in fixed contiguous chunks. Chunks may run on the
//! rayon pool but their outputs are concatenated in chunk order before the
//! (order-preserving) reduction, so results do not depend on thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::space::{p2_gradients, p2_values, ElementNodes, Field, FunctionSpace, SpaceKind};
use crate::sparse::{CsrMatrix, TripletBuilder};

const CHUNK: usize = 512;

/// One quadrature point of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub triangle: usize,
    pub lambda: [f64; 3],
    pub x: [f64; 2],
    /// Quadrature weight times triangle area.
    pub jxw: f64,
}

fn quad_points<'a>(mesh: &'a Mesh, t: usize, rule: &'a TriangleRule) -> impl Iterator<Item = QuadPoint> + 'a {
    let area = mesh.geometry(t).area;
    rule.iter().map(move |(l, w)| QuadPoint {
        triangle: t,
        lambda: *l,
        x: mesh.point(t, l),
        jxw: w * area,
    })
}

/// Deterministic quadrature of a pointwise integrand over the whole mesh.
pub fn integrate(mesh: &Mesh, rule: &TriangleRule, f: impl Fn(&QuadPoint) -> f64) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let mut local = 0.0;
        for qp in quad_points(mesh, t, rule) {
            local += qp.jxw * f(&qp);
        }
        total += local;
    }
    total
}

/// Per-triangle integrals (same summation as [`integrate`] within a triangle).
pub fn integrate_per_triangle(mesh: &Mesh, rule: &TriangleRule, f: impl Fn(&QuadPoint) -> f64) -> Vec<f64> {
    (0..mesh.n_triangles())
        .map(|t| quad_points(mesh, t, rule).map(|qp| qp.jxw * f(&qp)).sum())
        .collect()
}

fn assemble_matrix<F>(mesh: &Mesh, nrows: usize, ncols: usize, per_elem: F) -> CsrMatrix
where
    F: Fn(usize, &mut TripletBuilder) + Sync,
{
    let nt = mesh.n_triangles();
    let starts: Vec<usize> = (0..nt).step_by(CHUNK).collect();
    let parts: Vec<TripletBuilder> = starts
        .par_iter()
        .map(|&s| {
            let mut b = TripletBuilder::new(nrows, ncols);
            for t in s..(s + CHUNK).min(nt) {
                per_elem(t, &mut b);
            }
            b
        })
        .collect();
    let mut all = TripletBuilder::new(nrows, ncols);
    for p in parts {
        all.extend(p);
    }
    all.build()
}

fn assemble_vector<F>(mesh: &Mesh, n: usize, per_elem: F) -> Vec<f64>
where
    F: Fn(usize, &mut Vec<(usize, f64)>) + Sync,
{
    let nt = mesh.n_triangles();
    let starts: Vec<usize> = (0..nt).step_by(CHUNK).collect();
    let parts: Vec<Vec<(usize, f64)>> = starts
        .par_iter()
        .map(|&s| {
            let mut v = Vec::new();
            for t in s..(s + CHUNK).min(nt) {
                per_elem(t, &mut v);
            }
            v
        })
        .collect();
    let mut out = vec![0.0; n];
    for p in parts {
        for (i, v) in p {
            out[i] += v;
        }
    }
    out
}

/// Scalar basis values and gradients of `space` at a quadrature point.
struct LocalBasis {
    n: usize,
    nodes: [usize; 6],
    val: [f64; 6],
    grad: [[f64; 2]; 6],
}

fn local_basis(space: &FunctionSpace, t: usize, l: &[f64; 3]) -> LocalBasis {
    let g = space.mesh().geometry(t);
    match space.element_nodes(t) {
        ElementNodes::Linear(n) => {
            let mut nodes = [0; 6];
            nodes[..3].copy_from_slice(&n);
            let mut val = [0.0; 6];
            val[..3].copy_from_slice(l);
            let mut grad = [[0.0; 2]; 6];
            grad[..3].copy_from_slice(&g.grad_lambda);
            LocalBasis { n: 3, nodes, val, grad }
        }
        ElementNodes::Quadratic(n) => LocalBasis {
            n: 6,
            nodes: n,
            val: p2_values(l),
            grad: p2_gradients(l, g),
        },
    }
}

/// `weight * int grad v : grad w`; block diagonal for vector spaces.
pub fn assemble_stiffness(space: &FunctionSpace, weight: f64, rule: &TriangleRule) -> Result<CsrMatrix> {
    if weight < 0.0 {
        return Err(Error::InvalidArgument(format!("stiffness weight {weight} < 0")));
    }
    let mesh = space.mesh();
    let nd = space.ndofs();
    let nn = space.n_nodes();
    let nc = space.n_components();
    Ok(assemble_matrix(mesh, nd, nd, |t, b| {
        let mut local = [[0.0; 6]; 6];
        let mut nb = 0;
        let mut nodes = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let lb = local_basis(space, t, &qp.lambda);
            nb = lb.n;
            nodes = lb.nodes;
            for a in 0..lb.n {
                for c in 0..lb.n {
                    local[a][c] += weight * qp.jxw * (lb.grad[a][0] * lb.grad[c][0] + lb.grad[a][1] * lb.grad[c][1]);
                }
            }
        }
        for comp in 0..nc {
            for a in 0..nb {
                for c in 0..nb {
                    b.push(comp * nn + nodes[a], comp * nn + nodes[c], local[a][c]);
                }
            }
        }
    }))
}

/// `int weight(x) v . w` with the weight sampled at quadrature points.
pub fn assemble_weighted_mass_with<W>(space: &FunctionSpace, rule: &TriangleRule, weight: W) -> CsrMatrix
where
    W: Fn(&QuadPoint) -> f64 + Sync,
{
    let mesh = space.mesh();
    let nd = space.ndofs();
    let nn = space.n_nodes();
    let nc = space.n_components();
    assemble_matrix(mesh, nd, nd, |t, b| {
        let mut local = [[0.0; 6]; 6];
        let mut nb = 0;
        let mut nodes = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let w = weight(&qp) * qp.jxw;
            let lb = local_basis(space, t, &qp.lambda);
            nb = lb.n;
            nodes = lb.nodes;
            for a in 0..lb.n {
                for c in 0..lb.n {
                    local[a][c] += w * lb.val[a] * lb.val[c];
                }
            }
        }
        for comp in 0..nc {
            for a in 0..nb {
                for c in 0..nb {
                    b.push(comp * nn + nodes[a], comp * nn + nodes[c], local[a][c]);
                }
            }
        }
    })
}

pub fn assemble_mass(space: &FunctionSpace, rule: &TriangleRule) -> CsrMatrix {
    assemble_weighted_mass_with(space, rule, |_| 1.0)
}

/// `int alpha(phi(x)) v . w` where `phi` lives on the design space.
///
/// Errors if the interpolation function produces a negative value at any
/// quadrature point, or if `phi` leaves `[-1, 1]` by more than 1e-12.
pub fn assemble_weighted_mass<A>(space: &FunctionSpace, phi: &Field, alpha: A, rule: &TriangleRule) -> Result<CsrMatrix>
where
    A: Fn(f64) -> f64 + Sync,
{
    if !space.same_mesh(phi.space()) {
        return Err(Error::SpaceMismatch("phase field lives on a different mesh".into()));
    }
    if let Some(&v) = phi.values().iter().find(|v| v.abs() > 1.0 + 1e-12) {
        return Err(Error::PotentialOutOfRange { value: v });
    }
    let mesh = space.mesh();
    for t in 0..mesh.n_triangles() {
        for qp in quad_points(mesh, t, rule) {
            let p = phi.scalar_at(t, &qp.lambda).clamp(-1.0, 1.0);
            let a = alpha(p);
            if !(a >= 0.0) {
                return Err(Error::NegativeAlpha { value: a, phi: p });
            }
        }
    }
    Ok(assemble_weighted_mass_with(space, rule, |qp| {
        alpha(phi.scalar_at(qp.triangle, &qp.lambda).clamp(-1.0, 1.0))
    }))
}

/// `B` with `q^T B v = int q div v`; rows are pressure DOFs.
pub fn assemble_divergence(vel: &FunctionSpace, pres: &FunctionSpace, rule: &TriangleRule) -> Result<CsrMatrix> {
    if !vel.same_mesh(pres) {
        return Err(Error::SpaceMismatch("velocity and pressure meshes differ".into()));
    }
    if vel.kind() != SpaceKind::Velocity || pres.n_components() != 1 {
        return Err(Error::SpaceMismatch("divergence needs (velocity, scalar) spaces".into()));
    }
    let mesh = vel.mesh();
    let nn = vel.n_nodes();
    Ok(assemble_matrix(mesh, pres.ndofs(), vel.ndofs(), |t, b| {
        let mut local = [[[0.0; 6]; 3]; 2];
        let mut vn = [0; 6];
        let mut pn = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let v = local_basis(vel, t, &qp.lambda);
            let p = local_basis(pres, t, &qp.lambda);
            vn = v.nodes;
            pn = p.nodes;
            for i in 0..3 {
                for k in 0..6 {
                    for c in 0..2 {
                        local[c][i][k] += qp.jxw * p.val[i] * v.grad[k][c];
                    }
                }
            }
        }
        for i in 0..3 {
            for c in 0..2 {
                for k in 0..6 {
                    b.push(pn[i], c * nn + vn[k], local[c][i][k]);
                }
            }
        }
    }))
}

fn check_velocity(fields: &[&Field]) -> Result<()> {
    let first = fields[0].space();
    for f in fields {
        if f.space().kind() != SpaceKind::Velocity || !f.space().same_mesh(first) {
            return Err(Error::SpaceMismatch("trilinear form needs velocity fields on one mesh".into()));
        }
    }
    Ok(())
}

/// `b(u, v, w) = int (u . grad) v . w`.
pub fn trilinear_eval(u: &Field, v: &Field, w: &Field, rule: &TriangleRule) -> Result<f64> {
    check_velocity(&[u, v, w])?;
    let mesh = u.space().mesh();
    Ok(integrate(mesh, rule, |qp| {
        let (t, l) = (qp.triangle, &qp.lambda);
        let uu = u.vector_at(t, l);
        let dv = v.jacobian_at(t, l);
        let ww = w.vector_at(t, l);
        (0..2)
            .map(|i| (uu[0] * dv[i][0] + uu[1] * dv[i][1]) * ww[i])
            .sum::<f64>()
    }))
}

/// `N(u)` with `w^T N(u) v = b(u, v, w)`.
pub fn assemble_convection(u: &Field, rule: &TriangleRule) -> Result<CsrMatrix> {
    check_velocity(&[u])?;
    let space = u.space();
    let mesh = space.mesh();
    let nn = space.n_nodes();
    let nd = space.ndofs();
    Ok(assemble_matrix(mesh, nd, nd, |t, b| {
        let mut local = [[0.0; 6]; 6];
        let mut nodes = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let lb = local_basis(space, t, &qp.lambda);
            nodes = lb.nodes;
            let uu = u.vector_at(t, &qp.lambda);
            for c in 0..6 {
                let adv = uu[0] * lb.grad[c][0] + uu[1] * lb.grad[c][1];
                for a in 0..6 {
                    local[a][c] += qp.jxw * lb.val[a] * adv;
                }
            }
        }
        for comp in 0..2 {
            for a in 0..6 {
                for c in 0..6 {
                    b.push(comp * nn + nodes[a], comp * nn + nodes[c], local[a][c]);
                }
            }
        }
    }))
}

/// `M(u)` with `w^T M(u) v = b(v, u, w)` (the Newton term of the convection).
pub fn assemble_convection_transposed(u: &Field, rule: &TriangleRule) -> Result<CsrMatrix> {
    check_velocity(&[u])?;
    let space = u.space();
    let mesh = space.mesh();
    let nn = space.n_nodes();
    let nd = space.ndofs();
    Ok(assemble_matrix(mesh, nd, nd, |t, b| {
        // local[i][k][a][c] = int phi_a phi_c d_k u_i
        let mut local = [[[[0.0; 6]; 6]; 2]; 2];
        let mut nodes = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let lb = local_basis(space, t, &qp.lambda);
            nodes = lb.nodes;
            let du = u.jacobian_at(t, &qp.lambda);
            for a in 0..6 {
                for c in 0..6 {
                    let m = qp.jxw * lb.val[a] * lb.val[c];
                    for i in 0..2 {
                        for k in 0..2 {
                            local[i][k][a][c] += m * du[i][k];
                        }
                    }
                }
            }
        }
        for i in 0..2 {
            for k in 0..2 {
                for a in 0..6 {
                    for c in 0..6 {
                        b.push(i * nn + nodes[a], k * nn + nodes[c], local[i][k][a][c]);
                    }
                }
            }
        }
    }))
}

/// Assembles `r_(i,a) = int value_i phi_a + grad_i . grad phi_a` for a vector
/// space, where `f(qp)` returns `(value, grad)` with `grad[i][j]` pairing
/// with `d_j phi_a` in component `i`.
pub fn assemble_vector_functional<F>(space: &FunctionSpace, rule: &TriangleRule, f: F) -> Vec<f64>
where
    F: Fn(&QuadPoint) -> ([f64; 2], [[f64; 2]; 2]) + Sync,
{
    assert_eq!(space.n_components(), 2);
    let mesh = space.mesh();
    let nn = space.n_nodes();
    assemble_vector(mesh, space.ndofs(), |t, out| {
        let mut local = [[0.0; 6]; 2];
        let mut nodes = [0; 6];
        for qp in quad_points(mesh, t, rule) {
            let lb = local_basis(space, t, &qp.lambda);
            nodes = lb.nodes;
            let (val, grad) = f(&qp);
            for i in 0..2 {
                for a in 0..6 {
                    local[i][a] += qp.jxw
                        * (val[i] * lb.val[a] + grad[i][0] * lb.grad[a][0] + grad[i][1] * lb.grad[a][1]);
                }
            }
        }
        for i in 0..2 {
            for a in 0..6 {
                out.push((i * nn + nodes[a], local[i][a]));
            }
        }
    })
}

/// Scalar analogue of [`assemble_vector_functional`]: `int value phi_a + grad . grad phi_a`.
pub fn assemble_scalar_functional<F>(space: &FunctionSpace, rule: &TriangleRule, f: F) -> Vec<f64>
where
    F: Fn(&QuadPoint) -> (f64, [f64; 2]) + Sync,
{
    assert_eq!(space.n_components(), 1);
    let mesh = space.mesh();
    assemble_vector(mesh, space.ndofs(), |t, out| {
        let mut local = [0.0; 6];
        let mut nodes = [0; 6];
        let mut nb = 0;
        for qp in quad_points(mesh, t, rule) {
            let lb = local_basis(space, t, &qp.lambda);
            nodes = lb.nodes;
            nb = lb.n;
            let (val, grad) = f(&qp);
            for a in 0..lb.n {
                local[a] += qp.jxw * (val * lb.val[a] + grad[0] * lb.grad[a][0] + grad[1] * lb.grad[a][1]);
            }
        }
        for a in 0..nb {
            out.push((nodes[a], local[a]));
        }
    })
}

/// `int f . v` for an analytic body force.
pub fn assemble_load(space: &FunctionSpace, rule: &TriangleRule, f: impl Fn([f64; 2]) -> [f64; 2] + Sync) -> Vec<f64> {
    assemble_vector_functional(space, rule, |qp| (f(qp.x), [[0.0; 2]; 2]))
}

/// `||grad u||_{L2}` of a velocity or scalar field.
pub fn gradient_norm(u: &Field, rule: &TriangleRule) -> f64 {
    let mesh = u.space().mesh();
    let s = if u.space().kind() == SpaceKind::Velocity {
        integrate(mesh, rule, |qp| {
            let j = u.jacobian_at(qp.triangle, &qp.lambda);
            j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1]
        })
    } else {
        integrate(mesh, rule, |qp| {
            let g = u.scalar_gradient_at(qp.triangle, &qp.lambda);
            g[0] * g[0] + g[1] * g[1]
        })
    };
    s.max(0.0).sqrt()
}

/// `||u||_{L2}`.
pub fn l2_norm(u: &Field, rule: &TriangleRule) -> f64 {
    let mesh = u.space().mesh();
    let s = if u.space().kind() == SpaceKind::Velocity {
        integrate(mesh, rule, |qp| {
            let v = u.vector_at(qp.triangle, &qp.lambda);
            v[0] * v[0] + v[1] * v[1]
        })
    } else {
        integrate(mesh, rule, |qp| u.scalar_at(qp.triangle, &qp.lambda).powi(2))
    };
    s.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Diagonal, Mesh};
    use crate::space::FeSpaces;

    fn unit(n: usize) -> FeSpaces {
        FeSpaces::new(build_structured_mesh(n, n, 1.0, 1.0).unwrap())
    }

    #[test]
    fn integrate_basic() {
        let s = unit(4);
        let r = TriangleRule::default_rule();
        assert!((integrate(&s.mesh, &r, |_| 1.0) - 1.0).abs() < 1e-15);
        assert!((integrate(&s.mesh, &r, |q| q.x[0] * q.x[0]) - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(integrate(&s.mesh, &r, |_| 0.0), 0.0);
    }

    #[test]
    fn stiffness_properties() {
        let s = unit(3);
        let r = TriangleRule::default_rule();
        for space in [&s.design, &s.velocity] {
            let a = assemble_stiffness(space, 1.0, &r).unwrap();
            let ones = vec![1.0; space.ndofs()];
            assert!(a.matvec(&ones).iter().all(|v| v.abs() < 1e-13));
            assert!(a.is_symmetric(1e-14));
        }
        let x = Field::interpolate_scalar(&s.design, |p| p[0]);
        let a = assemble_stiffness(&s.design, 1.0, &r).unwrap();
        assert!((a.bilinear(x.values(), x.values()) - 1.0).abs() < 1e-13);
        let z = assemble_stiffness(&s.design, 0.0, &r).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert!(assemble_stiffness(&s.design, -1.0, &r).is_err());
    }

    #[test]
    fn weighted_mass_examples() {
        let s = unit(3);
        let r = TriangleRule::default_rule();
        let alpha = |p: f64| 50.0 * (1.0 - p);
        let fluid = Field::constant(&s.design, 1.0);
        let m = assemble_weighted_mass(&s.velocity, &fluid, alpha, &r).unwrap();
        assert_eq!(m.max_abs(), 0.0);
        let solid = Field::constant(&s.design, -1.0);
        let m = assemble_weighted_mass(&s.velocity, &solid, alpha, &r).unwrap();
        let v = Field::interpolate_vector(&s.velocity, |_| [1.0, 0.0]);
        assert!((m.bilinear(v.values(), v.values()) - 100.0).abs() < 1e-11);
        let zero = Field::zeros(&s.velocity);
        assert_eq!(m.bilinear(zero.values(), zero.values()), 0.0);
        assert!(matches!(
            assemble_weighted_mass(&s.velocity, &solid, |p| p, &r),
            Err(Error::NegativeAlpha { .. })
        ));
    }

    #[test]
    fn divergence_examples() {
        let s = unit(4);
        let r = TriangleRule::default_rule();
        let b = assemble_divergence(&s.velocity, &s.pressure, &r).unwrap();
        let v = Field::interpolate_vector(&s.velocity, |x| [x[0], -x[1]]);
        assert!(b.matvec(v.values()).iter().all(|x| x.abs() < 1e-12));
        let v = Field::interpolate_vector(&s.velocity, |x| [x[0], 0.0]);
        let one = vec![1.0; s.pressure.ndofs()];
        assert!((b.bilinear(&one, v.values()) - 1.0).abs() < 1e-13);
        let other = FeSpaces::new(build_structured_mesh(4, 4, 1.0, 1.0).unwrap());
        assert!(assemble_divergence(&s.velocity, &other.pressure, &r).is_err());
    }

    #[test]
    fn trilinear_examples() {
        let s = unit(4);
        let r = TriangleRule::verification_rule();
        let u = Field::interpolate_vector(&s.velocity, |_| [1.0, 0.0]);
        let v = Field::interpolate_vector(&s.velocity, |x| [x[0], -x[1]]);
        assert!((trilinear_eval(&u, &v, &u, &r).unwrap() - 1.0).abs() < 1e-14);
        let c = Field::interpolate_vector(&s.velocity, |_| [0.3, -2.0]);
        assert!(trilinear_eval(&v, &c, &u, &r).unwrap().abs() < 1e-14);
    }

    #[test]
    fn convection_matches_trilinear() {
        let s = FeSpaces::new(Mesh::structured(3, 4, 1.0, 1.0, Diagonal::Crossed).unwrap());
        let r = TriangleRule::verification_rule();
        let u = Field::interpolate_vector(&s.velocity, |x| [x[0] * x[1] + 0.5, x[1] * x[1] - x[0]]);
        let v = Field::interpolate_vector(&s.velocity, |x| [x[0] * x[0], 1.0 - x[0] * x[1]]);
        let w = Field::interpolate_vector(&s.velocity, |x| [x[1] - 2.0 * x[0], x[0] + x[1] * x[1]]);
        let b = trilinear_eval(&u, &v, &w, &r).unwrap();
        let n = assemble_convection(&u, &r).unwrap();
        assert!((n.bilinear(w.values(), v.values()) - b).abs() < 1e-13 * b.abs().max(1.0));
        let m = assemble_convection_transposed(&v, &r).unwrap();
        assert!((m.bilinear(w.values(), u.values()) - b).abs() < 1e-13 * b.abs().max(1.0));
        let zero = Field::zeros(&s.velocity);
        assert_eq!(assemble_convection(&zero, &r).unwrap().max_abs(), 0.0);
    }
}
