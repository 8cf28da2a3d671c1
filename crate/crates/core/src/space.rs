//! Taylor-Hood velocity/pressure spaces and the linear design space.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, TriangleGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Continuous piecewise quadratic vector field, component-blocked DOFs.
    Velocity,
    /// Continuous piecewise linear scalar.
    Pressure,
    /// Continuous piecewise linear scalar (the phase field).
    Design,
}

#[derive(Debug)]
pub struct FunctionSpace {
    kind: SpaceKind,
    mesh: Arc<Mesh>,
    n_nodes: usize,
    node_coords: Vec<[f64; 2]>,
    boundary_node: Vec<bool>,
    dirichlet: Vec<bool>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, kind: SpaceKind) -> Self {
        let nv = mesh.n_vertices();
        let mut node_coords: Vec<[f64; 2]> = mesh.vertices().to_vec();
        if kind == SpaceKind::Velocity {
            node_coords.extend((0..mesh.n_edges()).map(|e| mesh.edge_midpoint(e)));
        }
        let n_nodes = node_coords.len();
        let mut boundary_node = vec![false; n_nodes];
        for be in mesh.boundary_edges() {
            let [a, b] = mesh.edges()[be.edge];
            boundary_node[a] = true;
            boundary_node[b] = true;
            if kind == SpaceKind::Velocity {
                boundary_node[nv + be.edge] = true;
            }
        }
        let dirichlet = match kind {
            SpaceKind::Velocity => boundary_node.iter().chain(boundary_node.iter()).copied().collect(),
            _ => vec![false; n_nodes],
        };
        Self {
            kind,
            mesh,
            n_nodes,
            node_coords,
            boundary_node,
            dirichlet,
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Number of scalar nodes (velocity: vertices + edges).
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_components(&self) -> usize {
        match self.kind {
            SpaceKind::Velocity => 2,
            _ => 1,
        }
    }

    pub fn ndofs(&self) -> usize {
        self.n_nodes * self.n_components()
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    /// Coordinates of the node carrying `dof`.
    pub fn dof_coord(&self, dof: usize) -> [f64; 2] {
        self.node_coords[dof % self.n_nodes]
    }

    pub fn dof(&self, component: usize, node: usize) -> usize {
        component * self.n_nodes + node
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.boundary_node[node]
    }

    /// Dirichlet mask; only boundary velocity DOFs are marked.
    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Scalar nodes of triangle `t` in local order. P2 order is the three
    /// vertices followed by the midpoints of the edges opposite them.
    pub fn element_nodes(&self, t: usize) -> ElementNodes {
        let tri = self.mesh.triangles()[t];
        match self.kind {
            SpaceKind::Velocity => {
                let nv = self.mesh.n_vertices();
                let te = self.mesh.triangle_edges(t);
                ElementNodes::Quadratic([tri[0], tri[1], tri[2], nv + te[0], nv + te[1], nv + te[2]])
            }
            _ => ElementNodes::Linear(tri),
        }
    }

    pub fn same_mesh(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ElementNodes {
    Linear([usize; 3]),
    Quadratic([usize; 6]),
}

impl ElementNodes {
    pub fn as_slice(&self) -> &[usize] {
        match self {
            ElementNodes::Linear(n) => n,
            ElementNodes::Quadratic(n) => n,
        }
    }
}

/// Values of the six P2 basis functions at barycentric point `l`.
#[inline]
pub fn p2_values(l: &[f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// Physical gradients of the six P2 basis functions.
#[inline]
pub fn p2_gradients(l: &[f64; 3], g: &TriangleGeometry) -> [[f64; 2]; 6] {
    let gl = &g.grad_lambda;
    let mut out = [[0.0; 2]; 6];
    for k in 0..3 {
        let c = 4.0 * l[k] - 1.0;
        out[k] = [c * gl[k][0], c * gl[k][1]];
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        out[3 + k] = [
            4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
            4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
        ];
    }
    out
}

/// Bundle of the three spaces on one mesh.
#[derive(Debug, Clone)]
pub struct FeSpaces {
    pub mesh: Arc<Mesh>,
    pub velocity: Arc<FunctionSpace>,
    pub pressure: Arc<FunctionSpace>,
    pub design: Arc<FunctionSpace>,
}

impl FeSpaces {
    pub fn new(mesh: Mesh) -> Self {
        let mesh = Arc::new(mesh);
        Self {
            velocity: Arc::new(FunctionSpace::new(mesh.clone(), SpaceKind::Velocity)),
            pressure: Arc::new(FunctionSpace::new(mesh.clone(), SpaceKind::Pressure)),
            design: Arc::new(FunctionSpace::new(mesh.clone(), SpaceKind::Design)),
            mesh,
        }
    }
}

/// A discrete function: coefficient vector over a function space.
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<FunctionSpace>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(space: Arc<FunctionSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.ndofs() {
            return Err(Error::SpaceMismatch(format!(
                "coefficient length {} != space DOF count {}",
                values.len(),
                space.ndofs()
            )));
        }
        Ok(Self { space, values })
    }

    pub fn zeros(space: &Arc<FunctionSpace>) -> Self {
        Self {
            values: vec![0.0; space.ndofs()],
            space: space.clone(),
        }
    }

    pub fn constant(space: &Arc<FunctionSpace>, c: f64) -> Self {
        Self {
            values: vec![c; space.ndofs()],
            space: space.clone(),
        }
    }

    /// Nodal interpolant of a scalar function.
    pub fn interpolate_scalar(space: &Arc<FunctionSpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        assert_eq!(space.n_components(), 1, "scalar interpolation on a vector space");
        Self {
            values: space.node_coords().iter().map(|&x| f(x)).collect(),
            space: space.clone(),
        }
    }

    /// Nodal interpolant of a vector function.
    pub fn interpolate_vector(space: &Arc<FunctionSpace>, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        assert_eq!(space.n_components(), 2, "vector interpolation on a scalar space");
        let n = space.n_nodes();
        let mut values = vec![0.0; 2 * n];
        for (i, &x) in space.node_coords().iter().enumerate() {
            let v = f(x);
            values[i] = v[0];
            values[n + i] = v[1];
        }
        Self {
            values,
            space: space.clone(),
        }
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Field::new(self.space.clone(), values)
    }

    pub fn norm_l2_coeffs(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Scalar value on triangle `t` at barycentric point `l`.
    #[inline]
    pub fn scalar_at(&self, t: usize, l: &[f64; 3]) -> f64 {
        match self.space.element_nodes(t) {
            ElementNodes::Linear(n) => {
                // reproduces constants exactly
                let v0 = self.values[n[0]];
                v0 + l[1] * (self.values[n[1]] - v0) + l[2] * (self.values[n[2]] - v0)
            }
            ElementNodes::Quadratic(n) => {
                let b = p2_values(l);
                (0..6).map(|k| b[k] * self.values[n[k]]).sum()
            }
        }
    }

    /// Gradient of a scalar field on triangle `t`.
    #[inline]
    pub fn scalar_gradient_at(&self, t: usize, l: &[f64; 3]) -> [f64; 2] {
        let g = self.space.mesh().geometry(t);
        match self.space.element_nodes(t) {
            ElementNodes::Linear(n) => {
                // differences against vertex 0 make constants exactly flat
                let v0 = self.values[n[0]];
                let (d1, d2) = (self.values[n[1]] - v0, self.values[n[2]] - v0);
                [
                    d1 * g.grad_lambda[1][0] + d2 * g.grad_lambda[2][0],
                    d1 * g.grad_lambda[1][1] + d2 * g.grad_lambda[2][1],
                ]
            }
            ElementNodes::Quadratic(n) => {
                let gr = p2_gradients(l, g);
                let mut out = [0.0; 2];
                for k in 0..6 {
                    out[0] += self.values[n[k]] * gr[k][0];
                    out[1] += self.values[n[k]] * gr[k][1];
                }
                out
            }
        }
    }

    /// Vector value of a velocity field on triangle `t`.
    #[inline]
    pub fn vector_at(&self, t: usize, l: &[f64; 3]) -> [f64; 2] {
        let ElementNodes::Quadratic(n) = self.space.element_nodes(t) else {
            panic!("vector_at on a scalar field");
        };
        let off = self.space.n_nodes();
        let b = p2_values(l);
        let mut out = [0.0; 2];
        for k in 0..6 {
            out[0] += b[k] * self.values[n[k]];
            out[1] += b[k] * self.values[off + n[k]];
        }
        out
    }

    /// Jacobian `J[i][j] = d u_i / d x_j` of a velocity field.
    #[inline]
    pub fn jacobian_at(&self, t: usize, l: &[f64; 3]) -> [[f64; 2]; 2] {
        let ElementNodes::Quadratic(n) = self.space.element_nodes(t) else {
            panic!("jacobian_at on a scalar field");
        };
        let off = self.space.n_nodes();
        let gr = p2_gradients(l, self.space.mesh().geometry(t));
        let mut out = [[0.0; 2]; 2];
        for k in 0..6 {
            let (a, b) = (self.values[n[k]], self.values[off + n[k]]);
            out[0][0] += a * gr[k][0];
            out[0][1] += a * gr[k][1];
            out[1][0] += b * gr[k][0];
            out[1][1] += b * gr[k][1];
        }
        out
    }

    /// Value of a scalar field at an arbitrary point of the domain.
    pub fn eval_scalar(&self, x: [f64; 2]) -> f64 {
        let (t, l) = self.space.mesh().locate(x);
        self.scalar_at(t, &l)
    }

    pub fn eval_vector(&self, x: [f64; 2]) -> [f64; 2] {
        let (t, l) = self.space.mesh().locate(x);
        self.vector_at(t, &l)
    }

    pub fn axpy(&mut self, a: f64, other: &Field) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn dof_counts() {
        let s = FeSpaces::new(build_structured_mesh(3, 2, 1.0, 1.0).unwrap());
        let nv = s.mesh.n_vertices();
        let ne = s.mesh.n_edges();
        assert_eq!(s.velocity.ndofs(), 2 * (nv + ne));
        assert_eq!(s.pressure.ndofs(), nv);
        assert_eq!(s.design.ndofs(), nv);
    }

    #[test]
    fn dirichlet_mask_marks_only_boundary() {
        let s = FeSpaces::new(build_structured_mesh(4, 4, 1.0, 1.0).unwrap());
        for (d, &m) in s.velocity.dirichlet_mask().iter().enumerate() {
            let x = s.velocity.dof_coord(d);
            let on_bdry = x[0] == 0.0 || x[0] == 1.0 || x[1] == 0.0 || x[1] == 1.0;
            assert_eq!(m, on_bdry);
        }
        assert!(s.pressure.dirichlet_mask().iter().all(|m| !m));
    }

    #[test]
    fn quadratic_interpolation_is_exact() {
        let s = FeSpaces::new(build_structured_mesh(3, 3, 1.0, 1.0).unwrap());
        let f = |x: [f64; 2]| [x[0] * x[1] - x[1] * x[1], 2.0 * x[0] * x[0] + x[1]];
        let u = Field::interpolate_vector(&s.velocity, f);
        for &p in &[[0.21, 0.37], [0.9, 0.05], [0.5, 0.5]] {
            let v = u.eval_vector(p);
            let e = f(p);
            assert!((v[0] - e[0]).abs() < 1e-14 && (v[1] - e[1]).abs() < 1e-14);
            let (t, l) = s.mesh.locate(p);
            let j = u.jacobian_at(t, &l);
            let ex = [[p[1], p[0] - 2.0 * p[1]], [4.0 * p[0], 1.0]];
            for i in 0..2 {
                for k in 0..2 {
                    assert!((j[i][k] - ex[i][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = FeSpaces::new(build_structured_mesh(2, 2, 1.0, 1.0).unwrap());
        assert!(Field::new(s.pressure.clone(), vec![0.0; 3]).is_err());
    }
}
